//! Click statistics of Fock inputs sent through a lossy linear network.
//!
//! For a transfer matrix `T` (a contraction) and detectors with single-photon
//! effect matrices `E_d`, the probability that every detector in `S` stays
//! silent is `⟨Γ(I − T† E_S T)⟩` on the input state, where `Γ(X)` is the
//! multi-photon representation of `X`. Joint click patterns follow by
//! inclusion-exclusion. The input is never propagated, so no output
//! truncation is involved.
//!
//! Fully distinguishable input groups (e.g. photons in different time bins)
//! are modelled by removing the couplings of `T† E T` between groups.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fock::{multiphoton_image, FockState, Representation};
use crate::linalg::{real, CMatrix};
use crate::optics::{h_mode, v_mode, Circuit};
use crate::scalar::Real;

/// A detector over one or more network modes.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector<R: Real> {
    pub name: String,
    pub modes: Vec<String>,
    /// Single-photon effect over `modes`, `0 ≤ E ≤ I`.
    pub effect: CMatrix<R>,
}

impl<R: Real> Detector<R> {
    /// Bucket detector of efficiency `eta` over all `modes`.
    pub fn bucket<S: AsRef<str>>(name: &str, modes: &[S], eta: R) -> Self {
        let n = modes.len();
        Self {
            name: name.to_string(),
            modes: modes.iter().map(|m| m.as_ref().to_string()).collect(),
            effect: CMatrix::identity(n, n).scale(eta),
        }
    }

    /// Bucket detector on both polarizations of a spatial mode.
    pub fn spatial_bucket(name: &str, spatial: &str, eta: R) -> Self {
        Self::bucket(name, &[h_mode(spatial), v_mode(spatial)], eta)
    }

    /// Detector behind a polarizer that passes `pol = (h, v)` (normalized
    /// Jones vector) on the given spatial mode.
    pub fn polarization(name: &str, spatial: &str, pol: [Complex<R>; 2], eta: R) -> Self {
        let v = nalgebra::DVector::from_column_slice(&pol);
        Self {
            name: name.to_string(),
            modes: vec![h_mode(spatial), v_mode(spatial)],
            effect: (&v * v.adjoint()).scale(eta),
        }
    }
}

/// Input photons are grouped by mutual distinguishability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Interference {
    /// All photons share one temporal mode.
    Full,
    /// Photons in different groups never interfere. Modes not listed form
    /// one extra group.
    Groups(Vec<Vec<String>>),
}

/// Transfer matrix of a network together with its detectors.
#[derive(Debug, Clone)]
pub struct ClickModel<R: Real> {
    modes: Vec<String>,
    index: HashMap<String, usize>,
    /// `T† E_d T` for every detector.
    sandwiched: Vec<CMatrix<R>>,
    names: Vec<String>,
}

impl<R: Real> ClickModel<R> {
    /// `modes` must contain every mode touched by the circuit, the detectors
    /// and the input states.
    pub fn new<S: AsRef<str>>(circuit: &Circuit<R>, modes: &[S], detectors: &[Detector<R>]) -> Result<Self> {
        let modes: Vec<String> = modes.iter().map(|s| s.as_ref().to_string()).collect();
        let transfer = circuit.transfer_matrix(&modes)?;
        Self::from_transfer(modes, transfer, detectors)
    }

    pub fn from_transfer(modes: Vec<String>, transfer: CMatrix<R>, detectors: &[Detector<R>]) -> Result<Self> {
        let n = modes.len();
        if transfer.nrows() != n || transfer.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: transfer.nrows(),
            });
        }
        let mut index = HashMap::new();
        for (i, m) in modes.iter().enumerate() {
            if index.insert(m.clone(), i).is_some() {
                return Err(Error::DuplicateMode(m.clone()));
            }
        }
        let mut sandwiched = Vec::with_capacity(detectors.len());
        let mut names = Vec::with_capacity(detectors.len());
        for d in detectors {
            if d.effect.nrows() != d.modes.len() || d.effect.ncols() != d.modes.len() {
                return Err(Error::DimensionMismatch {
                    expected: d.modes.len(),
                    found: d.effect.nrows(),
                });
            }
            if names.contains(&d.name) {
                return Err(Error::DuplicateMode(d.name.clone()));
            }
            let idx: Vec<usize> = d
                .modes
                .iter()
                .map(|m| index.get(m).copied().ok_or_else(|| Error::UnknownMode(m.clone())))
                .collect::<Result<_>>()?;
            let mut e = CMatrix::zeros(n, n);
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    e[(ia, ib)] = d.effect[(a, b)];
                }
            }
            sandwiched.push(transfer.adjoint() * e * &transfer);
            names.push(d.name.clone());
        }
        Ok(Self {
            modes,
            index,
            sandwiched,
            names,
        })
    }

    pub fn detector_names(&self) -> &[String] {
        &self.names
    }

    pub fn detector(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownMode(name.to_string()))
    }

    /// Probability that every detector in `silent` records nothing.
    pub fn no_click_probability(&self, state: &FockState<R>, silent: &[usize], interference: &Interference) -> Result<R> {
        self.no_click_from(state, silent, interference, 0)
    }

    /// [`Self::no_click_probability`] restricted to number-basis components
    /// with at least `min_photons` photons. `Γ(X)` preserves photon number,
    /// so the restriction is exact block by block.
    fn no_click_from(
        &self,
        state: &FockState<R>,
        silent: &[usize],
        interference: &Interference,
        min_photons: usize,
    ) -> Result<R> {
        let reg = state.registry();
        let pos: Vec<usize> = reg
            .labels()
            .map(|l| self.index.get(l).copied().ok_or_else(|| Error::UnknownMode(l.to_string())))
            .collect::<Result<_>>()?;
        let k = pos.len();
        let group = self.groups(state, interference)?;
        let mut x = CMatrix::<R>::identity(k, k);
        for &d in silent {
            let m = self
                .sandwiched
                .get(d)
                .ok_or(Error::DimensionMismatch { expected: self.names.len(), found: d })?;
            for a in 0..k {
                for b in 0..k {
                    if group[a] == group[b] {
                        x[(a, b)] -= m[(pos[a], pos[b])];
                    }
                }
            }
        }
        Ok(expect_gamma(state, &x, min_photons))
    }

    /// Probability that every detector in `click` fires and every detector in
    /// `silent` stays dark; other detectors are ignored.
    pub fn event_probability(
        &self,
        state: &FockState<R>,
        click: &[usize],
        silent: &[usize],
        interference: &Interference,
    ) -> Result<R> {
        for c in click {
            if silent.contains(c) {
                return Ok(R::zero());
            }
        }
        let mut total = R::zero();
        for subset in 0u64..(1u64 << click.len()) {
            let mut set: Vec<usize> = silent.to_vec();
            for (i, &c) in click.iter().enumerate() {
                if subset >> i & 1 == 1 {
                    set.push(c);
                }
            }
            // components with fewer photons than required clicks contribute
            // exactly zero; dropping them avoids cancelling O(1) vacuum terms
            let q = self.no_click_from(state, &set, interference, click.len())?;
            if subset.count_ones() % 2 == 0 {
                total += q;
            } else {
                total -= q;
            }
        }
        Ok(total)
    }

    /// `γ P_full + (1 − γ) P_groups`.
    pub fn event_probability_partial(
        &self,
        state: &FockState<R>,
        click: &[usize],
        silent: &[usize],
        groups: &[Vec<String>],
        gamma: R,
    ) -> Result<R> {
        let mut p = R::zero();
        if gamma > R::zero() {
            p += gamma * self.event_probability(state, click, silent, &Interference::Full)?;
        }
        if gamma < R::one() {
            let g = Interference::Groups(groups.to_vec());
            p += (R::one() - gamma) * self.event_probability(state, click, silent, &g)?;
        }
        Ok(p)
    }

    fn groups(&self, state: &FockState<R>, interference: &Interference) -> Result<Vec<usize>> {
        let reg = state.registry();
        match interference {
            Interference::Full => Ok(vec![0; reg.len()]),
            Interference::Groups(groups) => {
                for g in groups {
                    for m in g {
                        if !self.index.contains_key(m) {
                            return Err(Error::UnknownMode(m.clone()));
                        }
                    }
                }
                Ok(reg
                    .labels()
                    .map(|l| groups.iter().position(|g| g.iter().any(|m| m == l)).unwrap_or(groups.len()))
                    .collect())
            }
        }
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }
}

/// `⟨Γ(X)⟩` over the registry of `state`; `X` is indexed by registry position.
fn expect_gamma<R: Real>(state: &FockState<R>, x: &DMatrix<Complex<R>>, min_photons: usize) -> R {
    let reg = state.registry();
    let zero = real(R::zero());
    let mut acc = zero;
    let few = |j: usize| min_photons > 0 && reg.occupations(j).iter().sum::<usize>() < min_photons;
    match state.representation() {
        Representation::Pure(psi) => {
            for (j, &a) in psi.iter().enumerate() {
                if a == zero || few(j) {
                    continue;
                }
                for (occ, amp) in multiphoton_image(x, &reg.occupations(j)) {
                    if let Some(i) = reg.index_of(&occ) {
                        acc += psi[i].conj() * amp * a;
                    }
                }
            }
        }
        Representation::Mixed(rho) => {
            for j in 0..reg.dim() {
                if few(j) || rho.column(j).iter().all(|c| *c == zero) {
                    continue;
                }
                for (occ, amp) in multiphoton_image(x, &reg.occupations(j)) {
                    if let Some(i) = reg.index_of(&occ) {
                        acc += rho[(j, i)] * amp;
                    }
                }
            }
        }
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::ModeRegistry;
    use crate::linalg::c;
    use crate::optics::{
        apply_distinguishability, beamsplitter, delayed_mode, waveplate, CzGate, DistinguishabilityModel,
        LossChannel, WaveplateSpec,
    };
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    const MODES: [&str; 4] = ["a.H", "a.V", "b.H", "b.V"];

    /// Pair state `Σ_{n≤2} λ^n |n⟩_{a.H} |n⟩_{b.H}` on a registry large enough
    /// that dense propagation is exact.
    fn pair_state(lambda: f64, labels: &[&str]) -> FockState<f64> {
        let specs: Vec<(&str, usize)> = labels.iter().map(|l| (*l, 4)).collect();
        let r = ModeRegistry::new(&specs).unwrap();
        let ah = r.position("a.H").unwrap();
        let bh = r.position("b.H").unwrap();
        let mut amp = DVector::zeros(r.dim());
        for n in 0..=2 {
            let mut occ = vec![0; r.len()];
            occ[ah] = n;
            occ[bh] = n;
            amp[r.index_of(&occ).unwrap()] = real(lambda.powi(n as i32));
        }
        FockState::from_amplitudes(r, amp).unwrap()
    }

    fn prep_circuit() -> Circuit<f64> {
        let mut circ = Circuit::new();
        let d = WaveplateSpec::half(std::f64::consts::PI / 8.0);
        circ.push_unitary(waveplate(&d, "a").unwrap());
        circ.push_unitary(waveplate(&d, "b").unwrap());
        circ.push_loss(LossChannel::new("a.H", 0.7).unwrap());
        circ.push_loss(LossChannel::new("a.V", 0.7).unwrap());
        circ.extend(&CzGate::new(crate::optics::PpbsSpec::new(0.05, 0.682).unwrap(), ("a", "b")).circuit().unwrap());
        circ
    }

    /// Dense bucket probability for a detector behind a polarizer: rotate the
    /// analysed polarization onto H, then count photons in H.
    fn dense_polarization_events(
        out: &FockState<f64>,
        pols: [[Complex<f64>; 2]; 2],
        eta: f64,
        pattern: [bool; 2],
    ) -> f64 {
        let mut s = out.clone();
        for (k, arm) in ["a", "b"].iter().enumerate() {
            let [h, v] = pols[k];
            let u = DMatrix::from_row_slice(2, 2, &[h.conj(), v.conj(), -v, h]);
            let labels = [format!("{arm}.H"), format!("{arm}.V")];
            s = s.apply_mode_unitary(&crate::fock::ModeUnitary::new(&labels, u).unwrap()).unwrap();
        }
        let r = s.registry().clone();
        let pa = r.position("a.H").unwrap();
        let pb = r.position("b.H").unwrap();
        s.expect_diagonal(|occ| {
            [occ[pa], occ[pb]]
                .iter()
                .zip(pattern)
                .map(|(&n, click)| {
                    let miss = (1.0 - eta).powi(n as i32);
                    if click {
                        1.0 - miss
                    } else {
                        miss
                    }
                })
                .product()
        })
    }

    #[test]
    fn generating_function_matches_dense_propagation() {
        let s = pair_state(0.3, &MODES);
        let circ = prep_circuit();
        let out = circ.apply(&s).unwrap();
        assert!(out.leakage() < 1e-14);
        let r = 0.5f64.sqrt();
        let pols = [[c(r, 0.0), c(0.0, r)], [c(r, 0.0), c(r, 0.0)]];
        let eta = 0.6;
        let dets = [
            Detector::polarization("c", "a", pols[0], eta),
            Detector::polarization("d", "b", pols[1], eta),
        ];
        let model = ClickModel::new(&circ, &MODES, &dets).unwrap();
        for pattern in [[true, true], [true, false], [false, true], [false, false]] {
            let click: Vec<usize> = (0..2).filter(|&i| pattern[i]).collect();
            let silent: Vec<usize> = (0..2).filter(|&i| !pattern[i]).collect();
            let p = model.event_probability(&s, &click, &silent, &Interference::Full).unwrap();
            let dense = dense_polarization_events(&out, pols, eta, pattern);
            assert_relative_eq!(p, dense, max_relative = 1e-11);
        }
    }

    #[test]
    fn groups_match_delayed_copies() {
        let gamma = 0.3;
        let r = ModeRegistry::new(&[("a", 4), ("b", 4)]).unwrap();
        let mut amp = DVector::zeros(r.dim());
        for n in 0..=2 {
            amp[r.index_of(&[n, n]).unwrap()] = real(0.25f64.powi(n as i32));
        }
        let s = FockState::from_amplitudes(r, amp).unwrap();
        let mut circ = Circuit::new();
        circ.push_loss(LossChannel::new("b", 0.8).unwrap());
        circ.push_unitary(beamsplitter(0.682, ("a", "b")).unwrap());

        let d = DistinguishabilityModel::new(gamma).unwrap();
        let mixed = apply_distinguishability(&d, &s, ("a", "b")).unwrap();
        let dense = circ.with_delayed_copies().unwrap().apply(&mixed).unwrap();
        let reg = dense.registry().clone();
        let arm = |x: &str| [reg.position(x).unwrap(), reg.position(&delayed_mode(x)).unwrap()];
        let (pa, pb) = (arm("a"), arm("b"));
        let eta: f64 = 0.6;
        let dense_p = dense.expect_diagonal(|occ| {
            let na: usize = pa.iter().map(|&p| occ[p]).sum();
            let nb: usize = pb.iter().map(|&p| occ[p]).sum();
            (1.0 - (1.0 - eta).powi(na as i32)) * (1.0 - (1.0 - eta).powi(nb as i32))
        });

        let dets = [Detector::bucket("c", &["a"], eta), Detector::bucket("d", &["b"], eta)];
        let model = ClickModel::new(&circ, &["a", "b"], &dets).unwrap();
        let groups = vec![vec!["a".to_string()], vec!["b".to_string()]];
        let p = model.event_probability_partial(&s, &[0, 1], &[], &groups, gamma).unwrap();
        assert_relative_eq!(p, dense_p, max_relative = 1e-11);
    }

    #[test]
    fn hom_dip_from_groups() {
        let r = ModeRegistry::new(&[("a", 1), ("b", 1)]).unwrap();
        let s = FockState::<f64>::number_state(r, &[1, 1]).unwrap();
        let mut circ = Circuit::new();
        circ.push_unitary(beamsplitter(0.5, ("a", "b")).unwrap());
        let dets = [Detector::bucket("c", &["a"], 1.0), Detector::bucket("d", &["b"], 1.0)];
        let model = ClickModel::new(&circ, &["a", "b"], &dets).unwrap();
        let full = model.event_probability(&s, &[0, 1], &[], &Interference::Full).unwrap();
        let groups = Interference::Groups(vec![vec!["a".into()], vec!["b".into()]]);
        let dist = model.event_probability(&s, &[0, 1], &[], &groups).unwrap();
        assert!(full.abs() < 1e-15);
        assert_relative_eq!(dist, 0.5, epsilon = 1e-15);
        let none = model.no_click_probability(&s, &[], &Interference::Full).unwrap();
        assert_relative_eq!(none, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_unknown_modes() {
        let circ = Circuit::<f64>::new();
        let dets = [Detector::bucket("c", &["z"], 1.0)];
        assert!(ClickModel::new(&circ, &["a"], &dets).is_err());
        let model = ClickModel::new(&circ, &["a"], &[]).unwrap();
        let r = ModeRegistry::new(&[("q", 1)]).unwrap();
        let s = FockState::<f64>::vacuum(r);
        assert!(model.no_click_probability(&s, &[], &Interference::Full).is_err());
    }
}
