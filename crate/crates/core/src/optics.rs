//! Linear-optical elements and the post-selected controlled-Z gate.
//!
//! Polarization sub-modes of a spatial mode `x` are labelled `x.H` and `x.V`.
//! A beamsplitter keeps the spatial index on transmission, so the gate
//! outputs carry the same labels as its inputs.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockState, ModeRegistry, ModeUnitary};
use crate::linalg::{real, CMatrix};
use crate::scalar::Real;

pub fn h_mode(spatial: &str) -> String {
    format!("{spatial}.H")
}

pub fn v_mode(spatial: &str) -> String {
    format!("{spatial}.V")
}

/// Label of the delayed (temporally distinguishable) copy of a mode.
pub fn delayed_mode(label: &str) -> String {
    format!("{label}~")
}

/// Phase convention of a beamsplitter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConvention {
    /// `[[t, i r], [i r, t]]`: reflection picks up a factor `i`.
    #[default]
    Symmetric,
    /// `[[t, −r], [r, t]]`.
    Real,
}

pub fn beamsplitter<R: Real>(reflectivity: R, modes: (&str, &str)) -> Result<ModeUnitary<R>> {
    beamsplitter_with(reflectivity, modes, PhaseConvention::Symmetric)
}

pub fn beamsplitter_with<R: Real>(
    reflectivity: R,
    modes: (&str, &str),
    convention: PhaseConvention,
) -> Result<ModeUnitary<R>> {
    if !(reflectivity >= R::zero() && reflectivity <= R::one()) {
        return Err(Error::OutOfRange {
            name: "reflectivity",
            value: reflectivity.to_f64().unwrap_or(f64::NAN),
        });
    }
    let r = reflectivity.sqrt();
    let t = (R::one() - reflectivity).sqrt();
    let z = R::zero();
    let m = match convention {
        PhaseConvention::Symmetric => DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(t, z), Complex::new(z, r), Complex::new(z, r), Complex::new(t, z)],
        ),
        PhaseConvention::Real => DMatrix::from_row_slice(
            2,
            2,
            &[Complex::new(t, z), Complex::new(-r, z), Complex::new(r, z), Complex::new(t, z)],
        ),
    };
    ModeUnitary::new(&[modes.0, modes.1], m)
}

/// Partially polarizing beamsplitter reflectivities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpbsSpec<R> {
    pub eta_h: R,
    pub eta_v: R,
}

impl<R: Real> PpbsSpec<R> {
    pub fn new(eta_h: R, eta_v: R) -> Result<Self> {
        for (name, v) in [("eta_h", eta_h), ("eta_v", eta_v)] {
            if !(v >= R::zero() && v <= R::one()) {
                return Err(Error::OutOfRange {
                    name,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { eta_h, eta_v })
    }

    /// `η_H = 0`, `η_V = 2/3`.
    pub fn ideal() -> Self {
        Self {
            eta_h: R::zero(),
            eta_v: R::lit(2.0) / R::lit(3.0),
        }
    }
}

/// One beamsplitter per polarization: `η_H` on the H pair, `η_V` on the V pair.
pub fn ppbs<R: Real>(
    spec: &PpbsSpec<R>,
    spatial: (&str, &str),
    convention: PhaseConvention,
) -> Result<[ModeUnitary<R>; 2]> {
    let (ah, bh) = (h_mode(spatial.0), h_mode(spatial.1));
    let (av, bv) = (v_mode(spatial.0), v_mode(spatial.1));
    Ok([
        beamsplitter_with(spec.eta_h, (&ah, &bh), convention)?,
        beamsplitter_with(spec.eta_v, (&av, &bv), convention)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveplateKind {
    Half,
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveplateSpec<R> {
    pub kind: WaveplateKind,
    /// Fast-axis angle from horizontal.
    pub angle_rad: R,
}

impl<R: Real> WaveplateSpec<R> {
    pub fn half(angle_rad: R) -> Self {
        Self {
            kind: WaveplateKind::Half,
            angle_rad,
        }
    }

    pub fn quarter(angle_rad: R) -> Self {
        Self {
            kind: WaveplateKind::Quarter,
            angle_rad,
        }
    }

    /// Jones matrix `Rot(θ) · diag(1, e^{−iφ}) · Rot(−θ)` with `φ = π` (half)
    /// or `π/2` (quarter), acting on `(H, V)` amplitudes.
    ///
    /// A half-wave plate maps `H → cos 2θ H + sin 2θ V`; a quarter-wave plate
    /// at 45° maps `H` to `(H + iV)/√2` up to a global phase.
    pub fn jones(&self) -> CMatrix<R> {
        let (s, c) = self.angle_rad.sin_cos();
        let rot = |sgn: R| {
            DMatrix::from_row_slice(2, 2, &[real(c), real(-s * sgn), real(s * sgn), real(c)])
        };
        let retarder = match self.kind {
            WaveplateKind::Half => DMatrix::from_row_slice(
                2,
                2,
                &[real(R::one()), real(R::zero()), real(R::zero()), real(-R::one())],
            ),
            WaveplateKind::Quarter => DMatrix::from_row_slice(
                2,
                2,
                &[
                    real(R::one()),
                    real(R::zero()),
                    real(R::zero()),
                    Complex::new(R::zero(), -R::one()),
                ],
            ),
        };
        rot(R::one()) * retarder * rot(-R::one())
    }
}

pub fn waveplate<R: Real>(spec: &WaveplateSpec<R>, spatial: &str) -> Result<ModeUnitary<R>> {
    ModeUnitary::new(&[h_mode(spatial), v_mode(spatial)], spec.jones())
}

/// Single-mode attenuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossChannel<R> {
    pub mode: String,
    pub transmission: R,
}

impl<R: Real> LossChannel<R> {
    pub fn new(mode: &str, transmission: R) -> Result<Self> {
        if !(transmission >= R::zero() && transmission <= R::one()) {
            return Err(Error::OutOfRange {
                name: "transmission",
                value: transmission.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self {
            mode: mode.to_string(),
            transmission,
        })
    }
}

fn binomial<R: Real>(n: usize, k: usize) -> R {
    let mut acc = R::one();
    for i in 0..k {
        acc = acc * R::from_usize(n - i).unwrap() / R::from_usize(i + 1).unwrap();
    }
    acc
}

/// Loss as the Kraus decomposition of a beamsplitter to an unobserved vacuum
/// mode: `K_k |n⟩ = √(C(n,k) τ^{n−k} (1−τ)^k) |n−k⟩`. Always returns a density
/// operator.
pub fn loss<R: Real>(channel: &LossChannel<R>, state: &FockState<R>) -> Result<FockState<R>> {
    let reg = state.registry();
    let pos = reg.position(&channel.mode)?;
    let tau = channel.transmission;
    if tau == R::one() {
        return Ok(state.clone());
    }
    let trunc = reg.truncation(pos);
    let stride = reg.stride(pos);
    // kraus[n][k]: amplitude for losing k of n photons
    let kraus: Vec<Vec<R>> = (0..=trunc)
        .map(|n| {
            (0..=n)
                .map(|k| {
                    (binomial::<R>(n, k) * tau.powi((n - k) as i32) * (R::one() - tau).powi(k as i32)).sqrt()
                })
                .collect()
        })
        .collect();
    let rho = state.density();
    let dim = reg.dim();
    let mut out = CMatrix::zeros(dim, dim);
    for j in 0..dim {
        let nj = reg.occupation(pos, j);
        for i in 0..dim {
            let v = rho[(i, j)];
            if v.norm_sqr() == R::zero() {
                continue;
            }
            let ni = reg.occupation(pos, i);
            for k in 0..=ni.min(nj) {
                out[(i - k * stride, j - k * stride)] += v * (kraus[ni][k] * kraus[nj][k]);
            }
        }
    }
    Ok(FockState::mixed_unchecked(reg.clone(), out).with_leakage(state.leakage()))
}

/// Loss realized literally: beamsplitter of reflectivity `1 − τ` onto a fresh
/// vacuum ancilla, which is then traced out.
pub fn loss_via_ancilla<R: Real>(channel: &LossChannel<R>, state: &FockState<R>) -> Result<FockState<R>> {
    let reg = state.registry();
    let pos = reg.position(&channel.mode)?;
    let ancilla_label = format!("{}#loss", channel.mode);
    let ancilla = FockState::vacuum(ModeRegistry::new(&[(ancilla_label.as_str(), reg.truncation(pos))])?);
    let joint = state.tensor(&ancilla)?;
    let bs = beamsplitter(R::one() - channel.transmission, (&channel.mode, &ancilla_label))?;
    let mixed = joint.apply_mode_unitary(&bs)?;
    let keep: Vec<&str> = reg.labels().collect();
    mixed.partial_trace(&keep)
}

/// Temporal delay between the two interfering inputs, mapped to a mode overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile<R> {
    pub delay_s: R,
    pub coherence_s: R,
}

/// Mode overlap `γ` between photons from the two inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistinguishabilityModel<R> {
    pub overlap: R,
    pub delay: Option<DelayProfile<R>>,
}

impl<R: Real> DistinguishabilityModel<R> {
    pub fn new(overlap: R) -> Result<Self> {
        if !(overlap >= R::zero() && overlap <= R::one()) {
            return Err(Error::OutOfRange {
                name: "overlap",
                value: overlap.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { overlap, delay: None })
    }

    pub fn indistinguishable() -> Self {
        Self {
            overlap: R::one(),
            delay: None,
        }
    }

    pub fn distinguishable() -> Self {
        Self {
            overlap: R::zero(),
            delay: None,
        }
    }

    /// Gaussian dip: `γ = exp(−(Δt/σ)²)`.
    pub fn from_delay(delay_s: R, coherence_s: R) -> Result<Self> {
        if !(coherence_s > R::zero()) {
            return Err(Error::OutOfRange {
                name: "coherence_s",
                value: coherence_s.to_f64().unwrap_or(f64::NAN),
            });
        }
        let x = delay_s / coherence_s;
        Ok(Self {
            overlap: (-(x * x)).exp(),
            delay: Some(DelayProfile { delay_s, coherence_s }),
        })
    }

    pub fn gamma(&self) -> R {
        self.overlap
    }
}

/// Mixes interfering and delayed evolutions: returns
/// `γ ρ_same ⊕ (1 − γ) ρ_delayed` on a registry extended by a delayed copy
/// (see [`delayed_mode`]) of every mode. In `ρ_delayed` the photons of the
/// modes belonging to `mode_pair.1` (the label itself or `label.*`) sit in
/// the delayed copies. Downstream optics must be applied through
/// [`Circuit::with_delayed_copies`] and detectors must cover both copies.
pub fn apply_distinguishability<R: Real>(
    d: &DistinguishabilityModel<R>,
    state: &FockState<R>,
    mode_pair: (&str, &str),
) -> Result<FockState<R>> {
    let reg = state.registry();
    reg.position(mode_pair.0)
        .or_else(|_| reg.position(&h_mode(mode_pair.0)))
        .or_else(|_| reg.position(&v_mode(mode_pair.0)))?;
    let copies: Vec<(String, usize)> = reg
        .modes()
        .iter()
        .map(|m| (delayed_mode(&m.label), m.truncation))
        .collect();
    let extended = state.tensor(&FockState::vacuum(ModeRegistry::new(&copies)?))?;
    let delayed: Vec<String> = reg
        .labels()
        .filter(|l| *l == mode_pair.1 || l.starts_with(&format!("{}.", mode_pair.1)))
        .map(str::to_string)
        .collect();
    if delayed.is_empty() {
        return Err(Error::UnknownMode(mode_pair.1.to_string()));
    }
    let swap = DMatrix::from_row_slice(2, 2, &[real(R::zero()), real(R::one()), real(R::one()), real(R::zero())]);
    let mut moved = extended.clone();
    for l in &delayed {
        moved = moved.apply_mode_unitary(&ModeUnitary::new(&[l.clone(), delayed_mode(l)], swap.clone())?)?;
    }
    let g = d.gamma();
    let rho = extended.density().scale(g) + moved.density().scale(R::one() - g);
    Ok(FockState::mixed_unchecked(extended.registry().clone(), rho).with_leakage(state.leakage()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element<R: Real> {
    Unitary(ModeUnitary<R>),
    Loss(LossChannel<R>),
}

impl<R: Real> Element<R> {
    fn modes(&self) -> Vec<String> {
        match self {
            Element::Unitary(u) => u.modes().to_vec(),
            Element::Loss(l) => vec![l.mode.clone()],
        }
    }
}

/// Ordered list of linear-optical elements.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit<R: Real> {
    elements: Vec<Element<R>>,
}

impl<R: Real> Circuit<R> {
    pub fn new() -> Self {
        Self { elements: Vec::new() }
    }

    pub fn elements(&self) -> &[Element<R>] {
        &self.elements
    }

    pub fn push_unitary(&mut self, u: ModeUnitary<R>) -> &mut Self {
        self.elements.push(Element::Unitary(u));
        self
    }

    pub fn push_loss(&mut self, l: LossChannel<R>) -> &mut Self {
        self.elements.push(Element::Loss(l));
        self
    }

    pub fn extend(&mut self, other: &Circuit<R>) -> &mut Self {
        self.elements.extend(other.elements.iter().cloned());
        self
    }

    /// Every mode any element touches, in first-use order.
    pub fn modes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.elements {
            for m in e.modes() {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// Same circuit acting identically on the delayed copy of every mode.
    pub fn with_delayed_copies(&self) -> Result<Self> {
        let mut out = self.clone();
        for e in &self.elements {
            match e {
                Element::Unitary(u) => {
                    let labels: Vec<String> = u.modes().iter().map(|l| delayed_mode(l)).collect();
                    out.elements.push(Element::Unitary(ModeUnitary::new(&labels, u.matrix().clone())?));
                }
                Element::Loss(l) => out.elements.push(Element::Loss(LossChannel {
                    mode: delayed_mode(&l.mode),
                    transmission: l.transmission,
                })),
            }
        }
        Ok(out)
    }

    /// Propagates a state through every element in order.
    pub fn apply(&self, state: &FockState<R>) -> Result<FockState<R>> {
        let mut s = state.clone();
        for e in &self.elements {
            s = match e {
                Element::Unitary(u) => s.apply_mode_unitary(u),
                Element::Loss(l) => loss(l, &s),
            }
            .map_err(polarization_error)?;
        }
        Ok(s)
    }

    /// Single-photon transfer matrix over `modes`: column `j` holds the output
    /// amplitudes of a photon injected in `modes[j]`. Loss makes it a
    /// contraction.
    pub fn transfer_matrix<S: AsRef<str>>(&self, modes: &[S]) -> Result<CMatrix<R>> {
        let labels: Vec<&str> = modes.iter().map(|s| s.as_ref()).collect();
        let index = |l: &str| {
            labels
                .iter()
                .position(|x| *x == l)
                .ok_or_else(|| polarization_error(Error::UnknownMode(l.to_string())))
        };
        let n = labels.len();
        let mut t = CMatrix::<R>::identity(n, n);
        for e in &self.elements {
            match e {
                Element::Unitary(u) => {
                    let idx: Vec<usize> = u.modes().iter().map(|l| index(l)).collect::<Result<_>>()?;
                    let mut embed = CMatrix::<R>::identity(n, n);
                    for (a, &ia) in idx.iter().enumerate() {
                        for (b, &ib) in idx.iter().enumerate() {
                            embed[(ia, ib)] = u.matrix()[(a, b)];
                        }
                    }
                    t = embed * t;
                }
                Element::Loss(l) => {
                    let i = index(&l.mode)?;
                    let s = l.transmission.sqrt();
                    for c in 0..n {
                        t[(i, c)] *= s;
                    }
                }
            }
        }
        Ok(t)
    }
}

fn polarization_error(e: Error) -> Error {
    match e {
        Error::UnknownMode(l) if l.ends_with(".H") || l.ends_with(".V") => Error::MissingPolarization(l),
        other => other,
    }
}

/// Post-selected controlled-Z gate: a central PPBS preceded by an H-only
/// attenuation on each arm that balances the H and V coincidence amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzGate<R> {
    pub ppbs: PpbsSpec<R>,
    /// Intensity transmission applied to H in each arm (`1/3` for the ideal gate).
    pub compensation: R,
    pub arms: (String, String),
    pub convention: PhaseConvention,
}

impl<R: Real> CzGate<R> {
    pub fn new(ppbs: PpbsSpec<R>, arms: (&str, &str)) -> Self {
        Self {
            ppbs,
            compensation: R::one() / R::lit(3.0),
            arms: (arms.0.to_string(), arms.1.to_string()),
            convention: PhaseConvention::Symmetric,
        }
    }

    pub fn ideal(arms: (&str, &str)) -> Self {
        Self::new(PpbsSpec::ideal(), arms)
    }

    pub fn with_convention(mut self, convention: PhaseConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn circuit(&self) -> Result<Circuit<R>> {
        let mut c = Circuit::new();
        c.push_loss(LossChannel::new(&h_mode(&self.arms.0), self.compensation)?);
        c.push_loss(LossChannel::new(&h_mode(&self.arms.1), self.compensation)?);
        let [bh, bv] = ppbs(&self.ppbs, (&self.arms.0, &self.arms.1), self.convention)?;
        c.push_unitary(bh);
        c.push_unitary(bv);
        Ok(c)
    }
}

/// Dual-rail two-qubit state post-selected on exactly one photon in each of
/// the spatial modes `arms` (all other modes in vacuum). Qubit order is
/// `(arms.0, arms.1)`, basis `|H⟩ = |0⟩`, `|V⟩ = |1⟩`, index `2 q₀ + q₁`.
///
/// Returns the normalized 4×4 density matrix (if the probability is
/// positive) and the post-selection probability.
pub fn post_select_qubits<R: Real>(
    state: &FockState<R>,
    arms: (&str, &str),
) -> Result<(Option<CMatrix<R>>, R)> {
    let reg = state.registry();
    let labels = [h_mode(arms.0), v_mode(arms.0), h_mode(arms.1), v_mode(arms.1)];
    let pos: Vec<usize> = labels
        .iter()
        .map(|l| reg.position(l))
        .collect::<Result<_>>()
        .map_err(polarization_error)?;
    let mut indices = [0usize; 4];
    for (q, idx) in indices.iter_mut().enumerate() {
        let mut occ = vec![0; reg.len()];
        occ[pos[(q >> 1) & 1]] = 1;
        occ[pos[2 + (q & 1)]] = 1;
        *idx = reg.index_of(&occ).ok_or(Error::OutOfRange {
            name: "truncation",
            value: 0.0,
        })?;
    }
    let rho = state.density();
    let mut sub = CMatrix::zeros(4, 4);
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            sub[(a, b)] = rho[(i, j)];
        }
    }
    let p = crate::linalg::trace(&sub).re;
    if p > R::zero() {
        Ok((Some(sub.unscale(p)), p))
    } else {
        Ok((None, p))
    }
}

/// Embeds a two-qubit density matrix as single photons on the dual-rail modes
/// of `arms`, with per-mode truncation `truncation`.
pub fn dual_rail_state<R: Real>(rho: &CMatrix<R>, arms: (&str, &str), truncation: usize) -> Result<FockState<R>> {
    let labels = [h_mode(arms.0), v_mode(arms.0), h_mode(arms.1), v_mode(arms.1)];
    let specs: Vec<(&str, usize)> = labels.iter().map(|l| (l.as_str(), truncation)).collect();
    let reg = ModeRegistry::new(&specs)?;
    let index = |q: usize| {
        let mut occ = [0usize; 4];
        occ[(q >> 1) & 1] = 1;
        occ[2 + (q & 1)] = 1;
        reg.index_of(&occ).expect("truncation >= 1")
    };
    let mut full = CMatrix::zeros(reg.dim(), reg.dim());
    for a in 0..4 {
        for b in 0..4 {
            full[(index(a), index(b))] = rho[(a, b)];
        }
    }
    FockState::from_density(reg, full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::Occupancy;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn reg(specs: &[(&str, usize)]) -> ModeRegistry {
        ModeRegistry::new(specs).unwrap()
    }

    fn pop(s: &FockState<f64>, occ: &[usize]) -> f64 {
        let i = s.registry().index_of(occ).unwrap();
        s.density()[(i, i)].re
    }

    fn hom(reflectivity: f64, convention: PhaseConvention) -> f64 {
        let s = FockState::number_state(reg(&[("a", 2), ("b", 2)]), &[1, 1]).unwrap();
        let bs = beamsplitter_with(reflectivity, ("a", "b"), convention).unwrap();
        pop(&s.apply_mode_unitary(&bs).unwrap(), &[1, 1])
    }

    #[test]
    fn beamsplitter_limits() {
        assert_relative_eq!(hom(0.0, PhaseConvention::Symmetric), 1.0, epsilon = 1e-14);
        assert!(hom(0.5, PhaseConvention::Symmetric) < 1e-14);
        assert_relative_eq!(hom(2.0 / 3.0, PhaseConvention::Symmetric), 1.0 / 9.0, epsilon = 1e-14);
        assert!(beamsplitter(1.2, ("a", "b")).is_err());
    }

    #[test]
    fn convention_does_not_change_coincidences() {
        for r in [0.1, 0.5, 2.0 / 3.0, 0.682] {
            assert_relative_eq!(
                hom(r, PhaseConvention::Symmetric),
                hom(r, PhaseConvention::Real),
                epsilon = 1e-14
            );
        }
    }

    fn gate_modes() -> ModeRegistry {
        reg(&[("a.H", 2), ("a.V", 2), ("b.H", 2), ("b.V", 2)])
    }

    #[test]
    fn nonideal_ppbs_vv_coincidence() {
        let gate = CzGate::new(PpbsSpec::new(0.0, 0.682).unwrap(), ("a", "b"));
        let s = FockState::number_state(gate_modes(), &[0, 1, 0, 1]).unwrap();
        let out = gate.circuit().unwrap().apply(&s).unwrap();
        let (_, p) = post_select_qubits(&out, ("a", "b")).unwrap();
        assert_relative_eq!(p, 0.132496, epsilon = 1e-12);
    }

    #[test]
    fn ideal_cz_on_basis_states() {
        let gate = CzGate::<f64>::ideal(("a", "b"));
        let c = gate.circuit().unwrap();
        for q in 0..4usize {
            let mut occ = [0usize; 4];
            occ[(q >> 1) & 1] = 1;
            occ[2 + (q & 1)] = 1;
            let s = FockState::number_state(gate_modes(), &occ).unwrap();
            let out = c.apply(&s).unwrap();
            let (rho, p) = post_select_qubits(&out, ("a", "b")).unwrap();
            assert_relative_eq!(p, 1.0 / 9.0, epsilon = 1e-12);
            assert_relative_eq!(rho.unwrap()[(q, q)].re, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ideal_cz_entangles_dd() {
        // |D⟩|D⟩ = (|H⟩ + |V⟩)(|H⟩ + |V⟩)/2 as a ket over the four modes
        let r = gate_modes();
        let mut amp = nalgebra::DVector::zeros(r.dim());
        for q in 0..4usize {
            let mut occ = [0usize; 4];
            occ[(q >> 1) & 1] = 1;
            occ[2 + (q & 1)] = 1;
            amp[r.index_of(&occ).unwrap()] = real(0.5);
        }
        let input = FockState::from_amplitudes(r, amp).unwrap();
        let gate = CzGate::<f64>::ideal(("a", "b"));
        let out = gate.circuit().unwrap().apply(&input).unwrap();
        let (rho, p) = post_select_qubits(&out, ("a", "b")).unwrap();
        assert_relative_eq!(p, 1.0 / 9.0, epsilon = 1e-12);
        // (|H⟩|D⟩ + |V⟩|A⟩)/√2
        let target = [real(0.5), real(0.5), real(0.5), real(-0.5)];
        let rho = rho.unwrap();
        let t = crate::linalg::ket_to_density(&target);
        assert!(crate::linalg::max_abs_diff(&rho, &t) < 1e-12);
    }

    #[test]
    fn symmetric_ppbs_is_a_beamsplitter() {
        let spec = PpbsSpec::new(0.3, 0.3).unwrap();
        let modes = ["a.H", "a.V", "b.H", "b.V"];
        let mut c = Circuit::new();
        for u in ppbs(&spec, ("a", "b"), PhaseConvention::Symmetric).unwrap() {
            c.push_unitary(u);
        }
        let t = c.transfer_matrix(&modes).unwrap();
        let bs = beamsplitter(0.3, ("x", "y")).unwrap();
        for (p, q) in [(0, 2), (1, 3)] {
            assert_relative_eq!(t[(p, p)].re, bs.matrix()[(0, 0)].re, epsilon = 1e-15);
            assert_relative_eq!(t[(q, p)].im, bs.matrix()[(1, 0)].im, epsilon = 1e-15);
            assert_relative_eq!(t[(p, q)].im, bs.matrix()[(0, 1)].im, epsilon = 1e-15);
        }
        assert_eq!(t[(0, 1)].norm(), 0.0);
    }

    #[test]
    fn waveplate_examples() {
        let d = WaveplateSpec::half(std::f64::consts::PI / 8.0).jones();
        let s = 0.5f64.sqrt();
        assert_relative_eq!(d[(0, 0)].re, s, epsilon = 1e-15);
        assert_relative_eq!(d[(1, 0)].re, s, epsilon = 1e-15);
        let v = WaveplateSpec::half(std::f64::consts::FRAC_PI_4).jones();
        assert!(v[(0, 0)].norm() < 1e-15);
        assert_relative_eq!(v[(1, 0)].norm(), 1.0, epsilon = 1e-15);
        let q = WaveplateSpec::quarter(std::f64::consts::FRAC_PI_4).jones();
        // H → (H + iV)/√2 up to a global phase
        let ratio = q[(1, 0)] / q[(0, 0)];
        assert_relative_eq!(ratio.re, 0.0, epsilon = 1e-15);
        assert_relative_eq!(ratio.im, 1.0, epsilon = 1e-15);
        assert_relative_eq!(q[(0, 0)].norm(), s, epsilon = 1e-15);
        for spec in [WaveplateSpec::half(0.3), WaveplateSpec::quarter(-1.1)] {
            assert!(crate::fock::unitarity_deviation(&spec.jones()) < 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        let ch = LossChannel::new("a", 0.6).unwrap();
        let one = FockState::number_state(reg(&[("a", 2)]), &[1]).unwrap();
        let out = loss(&ch, &one).unwrap();
        assert_relative_eq!(pop(&out, &[1]), 0.6, epsilon = 1e-15);
        assert_relative_eq!(pop(&out, &[0]), 0.4, epsilon = 1e-15);
        let two = FockState::number_state(reg(&[("a", 2)]), &[2]).unwrap();
        let out = loss(&ch, &two).unwrap();
        for (n, p) in [0.16, 0.48, 0.36].iter().enumerate() {
            assert_relative_eq!(pop(&out, &[n]), *p, epsilon = 1e-14);
        }
        assert!(LossChannel::new("a", 1.5).is_err());
    }

    #[test]
    fn missing_polarization_is_reported() {
        let s = FockState::<f64>::vacuum(reg(&[("a.H", 1), ("b.H", 1)]));
        let c = CzGate::ideal(("a", "b")).circuit().unwrap();
        assert!(matches!(c.apply(&s), Err(Error::MissingPolarization(_))));
    }

    fn hom_with_overlap(gamma: f64) -> f64 {
        let s = FockState::number_state(reg(&[("a", 2), ("b", 2)]), &[1, 1]).unwrap();
        let d = DistinguishabilityModel::new(gamma).unwrap();
        let mixed = apply_distinguishability(&d, &s, ("a", "b")).unwrap();
        let mut c = Circuit::new();
        c.push_unitary(beamsplitter(0.5, ("a", "b")).unwrap());
        let out = c.with_delayed_copies().unwrap().apply(&mixed).unwrap();
        // a click in "a" or "a~" and a click in "b" or "b~"
        let mut p = 0.0;
        let r = out.registry().clone();
        let rho = out.density();
        for i in 0..r.dim() {
            let occ = r.occupations(i);
            let na = occ[r.position("a").unwrap()] + occ[r.position("a~").unwrap()];
            let nb = occ[r.position("b").unwrap()] + occ[r.position("b~").unwrap()];
            if na > 0 && nb > 0 {
                p += rho[(i, i)].re;
            }
        }
        p
    }

    #[test]
    fn overlap_examples() {
        assert_relative_eq!(hom_with_overlap(0.0), 0.5, epsilon = 1e-14);
        assert_relative_eq!(hom_with_overlap(0.5), 0.25, epsilon = 1e-14);
        assert!(hom_with_overlap(1.0) < 1e-14);
        let v = (hom_with_overlap(0.0) - hom_with_overlap(0.8)) / hom_with_overlap(0.0);
        assert_relative_eq!(v, 0.8, epsilon = 1e-12);
        let d = DistinguishabilityModel::from_delay(0.0, 1e-12).unwrap();
        assert_eq!(d.gamma(), 1.0);
        let d = DistinguishabilityModel::from_delay(1e-12, 1e-12).unwrap();
        assert_relative_eq!(d.gamma(), (-1.0f64).exp());
    }

    #[test]
    fn transfer_matrix_matches_dense_single_photon() {
        let mut c = Circuit::new();
        c.push_unitary(waveplate(&WaveplateSpec::quarter(0.4), "a").unwrap());
        c.push_loss(LossChannel::new("a.V", 0.7).unwrap());
        c.extend(&CzGate::ideal(("a", "b")).circuit().unwrap());
        let modes = ["a.H", "a.V", "b.H", "b.V"];
        let t = c.transfer_matrix(&modes).unwrap();
        let s = FockState::number_state(gate_modes(), &[1, 0, 0, 0]).unwrap();
        let out = c.apply(&s).unwrap();
        for (k, _) in modes.iter().enumerate() {
            let mut occ = [0; 4];
            occ[k] = 1;
            assert_relative_eq!(pop(&out, &occ), t[(k, 0)].norm_sqr(), epsilon = 1e-13);
        }
    }

    proptest! {
        #[test]
        fn kraus_loss_matches_ancilla_route(
            tau in 0.0f64..1.0,
            re in proptest::collection::vec(-1.0f64..1.0, 9),
            im in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let r = reg(&[("a", 2), ("b", 2)]);
            let amp = nalgebra::DVector::from_iterator(9, re.iter().zip(&im).map(|(x, y)| Complex::new(*x, *y)));
            let s = FockState::from_amplitudes(r, amp).unwrap().normalize();
            let ch = LossChannel::new("a", tau).unwrap();
            let k = loss(&ch, &s).unwrap().density();
            let b = loss_via_ancilla(&ch, &s).unwrap().density();
            prop_assert!(crate::linalg::max_abs_diff(&k, &b) < 1e-12);
        }

        #[test]
        fn coincidences_affine_in_overlap(g in 0.0f64..1.0) {
            let lin = (1.0 - g) * hom_with_overlap(0.0) + g * hom_with_overlap(1.0);
            prop_assert!((hom_with_overlap(g) - lin).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_after_gate_keeps_one_photon_per_arm() {
        let gate = CzGate::<f64>::ideal(("a", "b"));
        let s = FockState::number_state(gate_modes(), &[1, 0, 1, 0]).unwrap();
        let out = gate.circuit().unwrap().apply(&s).unwrap();
        let mut pattern = BTreeMap::new();
        pattern.insert("a.V".to_string(), Occupancy::Exactly(0));
        pattern.insert("b.V".to_string(), Occupancy::Exactly(0));
        pattern.insert("a.H".to_string(), Occupancy::Exactly(1));
        pattern.insert("b.H".to_string(), Occupancy::Exactly(1));
        assert_relative_eq!(out.project(&pattern).unwrap().probability, 1.0 / 9.0, epsilon = 1e-12);
    }
}
