//! Photodetection: bucket and number-resolving POVMs, splitter-tree photon
//! counting, coincidences and heralding on Fock states.
//!
//! A detector label may name a registry mode directly or a spatial mode whose
//! polarization sub-modes (`label.H`, `label.V`) are then detected together.

pub mod network;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockState, ModeRegistry};
use crate::spdc::{pair_probability, series_cutoff, DualPassParams, SourceParams, SERIES_TAIL_LIMIT};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<R> {
    /// Detector efficiency times optical efficiency.
    pub efficiency: R,
    #[serde(default)]
    pub number_resolving: bool,
    /// Depth of a balanced splitter tree of `2^depth` bucket detectors.
    #[serde(default)]
    pub split_depth: u32,
}

impl<R: Real> DetectorParams<R> {
    pub fn bucket(efficiency: R) -> Result<Self> {
        check_unit("efficiency", efficiency)?;
        Ok(Self {
            efficiency,
            number_resolving: false,
            split_depth: 0,
        })
    }

    pub fn number_resolving(efficiency: R) -> Result<Self> {
        Ok(Self {
            number_resolving: true,
            ..Self::bucket(efficiency)?
        })
    }

    pub fn with_split_depth(mut self, depth: u32) -> Self {
        self.split_depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("efficiency", self.efficiency)
    }

    /// Same detector behind an extra transmission `t`.
    pub fn with_loss(mut self, transmission: R) -> Result<Self> {
        check_unit("transmission", transmission)?;
        self.efficiency *= transmission;
        Ok(self)
    }

    /// Probability of `condition` given `n` photons on the detector.
    pub fn outcome_probability(&self, condition: ClickCondition, n: usize) -> R {
        let eta = self.efficiency;
        let miss = (R::one() - eta).powi(n as i32);
        match condition {
            ClickCondition::NoClick => miss,
            ClickCondition::Click => R::one() - miss,
            ClickCondition::Count(k) if self.number_resolving => binomial_pmf(n, k, eta),
            ClickCondition::Count(k) => {
                let dist = tree_count_distribution(n, self.split_depth, eta);
                dist.get(k).copied().unwrap_or(R::zero())
            }
        }
    }

    /// Largest reportable count.
    pub fn max_count(&self, truncation: usize) -> usize {
        if self.number_resolving {
            truncation
        } else {
            1usize << self.split_depth
        }
    }
}

fn check_unit<R: Real>(name: &'static str, v: R) -> Result<()> {
    if v >= R::zero() && v <= R::one() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value: v.to_f64().unwrap_or(f64::NAN),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClickCondition {
    Click,
    NoClick,
    /// Number of clicking leaves of a splitter tree, or the photon count of a
    /// number-resolving detector.
    Count(usize),
}

/// Diagonal effects of a bucket detector in the number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketPovm<R> {
    pub no_click: Vec<R>,
    pub click: Vec<R>,
}

pub fn bucket_povm<R: Real>(eta: R, truncation: usize) -> Result<BucketPovm<R>> {
    check_unit("efficiency", eta)?;
    let no_click: Vec<R> = (0..=truncation).map(|n| (R::one() - eta).powi(n as i32)).collect();
    let click = no_click.iter().map(|&p| R::one() - p).collect();
    Ok(BucketPovm { no_click, click })
}

/// Effects `E_k = diag_n C(n,k) η^k (1−η)^{n−k}`, `k = 0..=truncation`.
pub fn number_resolving_povm<R: Real>(eta: R, truncation: usize) -> Result<Vec<Vec<R>>> {
    check_unit("efficiency", eta)?;
    Ok((0..=truncation)
        .map(|k| (0..=truncation).map(|n| binomial_pmf(n, k, eta)).collect())
        .collect())
}

/// Binomial coefficient `C(n, k)` as a real.
pub fn binomial<R: Real>(n: usize, k: usize) -> R {
    if k > n {
        return R::zero();
    }
    let k = k.min(n - k);
    let mut acc = R::one();
    for i in 0..k {
        acc = acc * R::from_usize(n - i).unwrap() / R::from_usize(i + 1).unwrap();
    }
    acc
}

fn binomial_pmf<R: Real>(n: usize, k: usize, p: R) -> R {
    if k > n {
        return R::zero();
    }
    binomial::<R>(n, k) * p.powi(k as i32) * (R::one() - p).powi((n - k) as i32)
}

/// Distribution of the number of clicking detectors when `n` photons enter a
/// balanced tree of `D = 2^depth` bucket detectors of efficiency `eta`:
/// `P(k) = C(D,k) Σ_j (−1)^{k−j} C(k,j) (1 − η + jη/D)^n`.
pub fn tree_count_distribution<R: Real>(n: usize, depth: u32, eta: R) -> Vec<R> {
    let d = 1usize << depth;
    let dr = R::from_usize(d).unwrap();
    (0..=d)
        .map(|k| {
            let mut s = R::zero();
            for j in 0..=k {
                let base = R::one() - eta + R::from_usize(j).unwrap() * eta / dr;
                let term = binomial::<R>(k, j) * base.powi(n as i32);
                if (k - j) % 2 == 0 {
                    s += term;
                } else {
                    s -= term;
                }
            }
            (binomial::<R>(d, k) * s).max(R::zero())
        })
        .collect()
}

/// Registry positions covered by a detector label.
pub(crate) fn resolve_label(reg: &ModeRegistry, label: &str) -> Result<Vec<usize>> {
    if let Ok(p) = reg.position(label) {
        return Ok(vec![p]);
    }
    let prefix = format!("{label}.");
    let found: Vec<usize> = reg
        .labels()
        .enumerate()
        .filter(|(_, l)| l.starts_with(&prefix))
        .map(|(i, _)| i)
        .collect();
    if found.is_empty() {
        Err(Error::UnknownMode(label.to_string()))
    } else {
        Ok(found)
    }
}

fn resolve_all<'a, I>(reg: &ModeRegistry, labels: I) -> Result<Vec<Vec<usize>>>
where
    I: IntoIterator<Item = &'a String>,
{
    let resolved: Vec<Vec<usize>> = labels.into_iter().map(|l| resolve_label(reg, l)).collect::<Result<_>>()?;
    let mut seen = vec![false; reg.len()];
    for group in &resolved {
        for &p in group {
            if seen[p] {
                return Err(Error::ModeCollision(reg.modes()[p].label.clone()));
            }
            seen[p] = true;
        }
    }
    Ok(resolved)
}

fn count_on(occ: &[usize], positions: &[usize]) -> usize {
    positions.iter().map(|&p| occ[p]).sum()
}

/// Probability that every listed detector clicks.
pub fn coincidence_probability<R: Real>(
    state: &FockState<R>,
    detectors: &BTreeMap<String, DetectorParams<R>>,
) -> Result<R> {
    let conditions: BTreeMap<String, (DetectorParams<R>, ClickCondition)> = detectors
        .iter()
        .map(|(k, d)| (k.clone(), (*d, ClickCondition::Click)))
        .collect();
    joint_probability(state, &conditions)
}

/// Probability of a joint outcome over several detectors.
pub fn joint_probability<R: Real>(
    state: &FockState<R>,
    conditions: &BTreeMap<String, (DetectorParams<R>, ClickCondition)>,
) -> Result<R> {
    let reg = state.registry();
    let positions = resolve_all(reg, conditions.keys())?;
    for (d, _) in conditions.values() {
        d.validate()?;
    }
    let conds: Vec<_> = conditions.values().copied().collect();
    Ok(state.expect_diagonal(|occ| {
        positions
            .iter()
            .zip(&conds)
            .map(|(pos, (d, c))| d.outcome_probability(*c, count_on(occ, pos)))
            .fold(R::one(), |a, b| a * b)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClickOutcome<R> {
    /// Detector label → count (`0`/`1` for a plain bucket detector).
    pub pattern: BTreeMap<String, usize>,
    pub probability: R,
}

/// Every joint outcome of the listed detectors with its probability, in
/// lexicographic order of the count patterns.
pub fn outcome_distribution<R: Real>(
    state: &FockState<R>,
    detectors: &BTreeMap<String, DetectorParams<R>>,
) -> Result<Vec<ClickOutcome<R>>> {
    let reg = state.registry();
    let positions = resolve_all(reg, detectors.keys())?;
    let dets: Vec<DetectorParams<R>> = detectors.values().copied().collect();
    let maxes: Vec<usize> = positions
        .iter()
        .zip(&dets)
        .map(|(pos, d)| d.max_count(pos.iter().map(|&p| reg.truncation(p)).sum()))
        .collect();
    let condition = |d: &DetectorParams<R>, k: usize| {
        if d.number_resolving || d.split_depth > 0 {
            ClickCondition::Count(k)
        } else if k == 0 {
            ClickCondition::NoClick
        } else {
            ClickCondition::Click
        }
    };
    let mut out = Vec::new();
    let mut counts = vec![0usize; dets.len()];
    loop {
        let probability = state.expect_diagonal(|occ| {
            positions
                .iter()
                .zip(&dets)
                .zip(&counts)
                .map(|((pos, d), &k)| d.outcome_probability(condition(d, k), count_on(occ, pos)))
                .fold(R::one(), |a, b| a * b)
        });
        out.push(ClickOutcome {
            pattern: detectors.keys().cloned().zip(counts.iter().copied()).collect(),
            probability,
        });
        // odometer, last detector fastest
        let mut i = dets.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if counts[i] < maxes[i] {
                counts[i] += 1;
                break;
            }
            counts[i] = 0;
        }
    }
}

/// Heralded state: the herald effects are applied, the heralding modes and
/// every mode outside `keep` are traced out.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditional<R: Real> {
    /// Normalized conditional state; `None` when the herald has probability 0.
    pub state: Option<FockState<R>>,
    pub probability: R,
}

pub fn conditional_state<R: Real, S: AsRef<str>>(
    state: &FockState<R>,
    herald: &BTreeMap<String, (DetectorParams<R>, ClickCondition)>,
    keep: &[S],
) -> Result<Conditional<R>> {
    let reg = state.registry();
    let positions = resolve_all(reg, herald.keys())?;
    let mut keep_pos = Vec::new();
    for k in keep {
        keep_pos.extend(resolve_label(reg, k.as_ref())?);
    }
    for p in &keep_pos {
        if positions.iter().any(|g| g.contains(p)) {
            return Err(Error::ModeCollision(reg.modes()[*p].label.clone()));
        }
    }
    let conds: Vec<_> = herald.values().copied().collect();
    let weights: Vec<R> = (0..reg.dim())
        .map(|i| {
            let occ = reg.occupations(i);
            positions
                .iter()
                .zip(&conds)
                .map(|(pos, (d, c))| d.outcome_probability(*c, count_on(&occ, pos)))
                .fold(R::one(), |a, b| a * b)
        })
        .collect();
    let mut rho = state.density();
    for (i, w) in weights.iter().enumerate() {
        for j in 0..reg.dim() {
            rho[(i, j)] *= *w;
        }
    }
    let weighted = FockState::mixed_unchecked(reg.clone(), rho);
    let keep_labels: Vec<String> = keep_pos.iter().map(|&p| reg.modes()[p].label.clone()).collect();
    let reduced = weighted.partial_trace(&keep_labels)?;
    let probability = reduced.norm();
    if probability <= R::zero() {
        return Ok(Conditional {
            state: None,
            probability: R::zero(),
        });
    }
    Ok(Conditional {
        state: Some(reduced.normalize()),
        probability,
    })
}

/// Click-count distribution of a `2^depth` tree of bucket detectors on
/// `mode` (a registry label or a spatial label covering sub-modes).
pub fn multiplexed_count_probability<R: Real>(state: &FockState<R>, mode: &str, depth: u32, eta: R) -> Result<Vec<R>> {
    if depth == 0 {
        return Err(Error::OutOfRange { name: "depth", value: 0.0 });
    }
    check_unit("efficiency", eta)?;
    let reg = state.registry();
    let pos = resolve_label(reg, mode)?;
    let max_n: usize = pos.iter().map(|&p| reg.truncation(p)).sum();
    let tables: Vec<Vec<R>> = (0..=max_n).map(|n| tree_count_distribution(n, depth, eta)).collect();
    let d = 1usize << depth;
    Ok((0..=d)
        .map(|k| state.expect_diagonal(|occ| tables[count_on(occ, &pos)][k]))
        .collect())
}

fn arm_counts<R: Real>(n: usize, det: &DetectorParams<R>, depth: u32) -> (R, R) {
    let dist: Vec<R> = if det.number_resolving {
        (0..=n).map(|k| binomial_pmf(n, k, det.efficiency)).collect()
    } else {
        tree_count_distribution(n, depth, det.efficiency)
    };
    let one = dist.get(1).copied().unwrap_or(R::zero());
    let many = dist.iter().skip(2).fold(R::zero(), |a, &b| a + b);
    (one, many)
}

/// Ratio of 4-photon events (at least two counts on each arm) to 2-photon
/// events (exactly one count on each arm) for a two-mode source counted by a
/// `2^depth` tree on each arm. Per-pulse quantity; `R` cancels.
pub fn four_two_ratio<R: Real>(p: &SourceParams<R>, det: &DetectorParams<R>, depth: u32) -> Result<R> {
    p.validate()?;
    det.validate()?;
    if depth == 0 && !det.number_resolving {
        return Err(Error::OutOfRange { name: "depth", value: 0.0 });
    }
    let lambda = p.lambda;
    if lambda == R::zero() {
        return Ok(R::zero());
    }
    // the 4-fold sum starts at λ⁴, so its tail is bounded relative to that
    let n_max = series_cutoff(lambda, R::lit(SERIES_TAIL_LIMIT) * lambda.powi(4));
    let mut two = R::zero();
    let mut four = R::zero();
    for n in 1..=n_max {
        let pn = pair_probability(lambda, n);
        let (one, many) = arm_counts(n, det, depth);
        two += pn * one * one;
        four += pn * many * many;
    }
    Ok(four / two)
}

/// [`four_two_ratio`] for each pass of a bidirectionally pumped crystal.
pub fn four_two_ratio_dual<R: Real>(p: &DualPassParams<R>, det: &DetectorParams<R>, depth: u32) -> Result<(R, R)> {
    p.validate()?;
    Ok((four_two_ratio(&p.forward, det, depth)?, four_two_ratio(&p.backward, det, depth)?))
}

/// Seeded Poisson counts with means `scale · p_i`.
pub fn sample_poisson_counts<R: Real>(probabilities: &[R], scale: R, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    probabilities
        .iter()
        .map(|&p| {
            let mean = (p * scale).to_f64().unwrap_or(f64::NAN);
            if !(mean >= 0.0) || !mean.is_finite() {
                return Err(Error::OutOfRange { name: "mean", value: mean });
            }
            if mean == 0.0 {
                return Ok(0);
            }
            let d = Poisson::new(mean).map_err(|_| Error::OutOfRange { name: "mean", value: mean })?;
            Ok(d.sample(&mut rng) as u64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spdc::{coincidence_bracket, generate_spdc_state};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dets(pairs: &[(&str, f64)]) -> BTreeMap<String, DetectorParams<f64>> {
        pairs
            .iter()
            .map(|(l, e)| (l.to_string(), DetectorParams::bucket(*e).unwrap()))
            .collect()
    }

    fn src(lambda: f64) -> SourceParams<f64> {
        SourceParams::new(lambda, 76e6, 1).unwrap()
    }

    #[test]
    fn bucket_povm_examples() {
        let p = bucket_povm(1.0, 3).unwrap();
        assert_eq!(p.click, vec![0.0, 1.0, 1.0, 1.0]);
        let p = bucket_povm(0.6, 4).unwrap();
        assert_relative_eq!(p.click[2], 0.84, epsilon = 1e-15);
        for (a, b) in p.click.iter().zip(&p.no_click) {
            assert_relative_eq!(a + b, 1.0, epsilon = 1e-15);
        }
        let nr = number_resolving_povm(0.37, 5).unwrap();
        for n in 0..=5 {
            let s: f64 = nr.iter().map(|e| e[n]).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert!(bucket_povm(-0.1, 2).is_err());
    }

    #[test]
    fn coincidence_examples() {
        let s = generate_spdc_state(&src(0.1), "a", "b", 6).unwrap();
        let p = coincidence_probability(&s, &dets(&[("a", 0.6), ("b", 0.6)])).unwrap();
        let oracle: f64 = (1..=20)
            .map(|n| (1.0 - 0.4f64.powi(n)).powi(2) * 0.99 * 0.01f64.powi(n))
            .sum();
        assert_relative_eq!(p, oracle, max_relative = 1e-10);
        assert_relative_eq!(p, 3.6347e-3, max_relative = 1e-4);
        let r = ModeRegistry::new(&[("a", 2), ("b", 2)]).unwrap();
        let vac = FockState::<f64>::vacuum(r.clone());
        assert_eq!(coincidence_probability(&vac, &dets(&[("a", 0.6), ("b", 0.6)])).unwrap(), 0.0);
        let one = FockState::<f64>::number_state(r, &[1, 1]).unwrap();
        assert_relative_eq!(coincidence_probability(&one, &dets(&[("a", 1.0), ("b", 1.0)])).unwrap(), 1.0);
        assert!(coincidence_probability(&one, &dets(&[("c", 1.0)])).is_err());
    }

    #[test]
    fn polarization_submodes_are_pooled() {
        let r = ModeRegistry::new(&[("a.H", 1), ("a.V", 1)]).unwrap();
        let s = FockState::<f64>::number_state(r, &[1, 1]).unwrap();
        let p = coincidence_probability(&s, &dets(&[("a", 0.6)])).unwrap();
        assert_relative_eq!(p, 0.84, epsilon = 1e-15);
    }

    #[test]
    fn analytic_equals_simulation() {
        for lambda in [0.01, 0.05, 0.1, 0.2, 0.3] {
            for eta in [0.1, 0.36, 0.6, 1.0] {
                let s = generate_spdc_state(&src(lambda), "a", "b", 6).unwrap();
                let p = coincidence_probability(&s, &dets(&[("a", eta), ("b", eta)])).unwrap();
                let closed = coincidence_bracket(lambda, eta, 6);
                assert_relative_eq!(p, closed, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn heralding_examples() {
        let s = generate_spdc_state(&src(0.1), "s", "i", 6).unwrap();
        let mut herald = BTreeMap::new();
        herald.insert(
            "i".to_string(),
            (DetectorParams::number_resolving(1.0).unwrap(), ClickCondition::Count(1)),
        );
        let c = conditional_state(&s, &herald, &["s"]).unwrap();
        let rho = c.state.unwrap().density();
        assert_relative_eq!(rho[(1, 1)].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.probability, 0.99 * 0.01, max_relative = 1e-12);

        let lambda: f64 = 0.3;
        let s = generate_spdc_state(&src(lambda), "s", "i", 8).unwrap();
        let mut herald = BTreeMap::new();
        herald.insert("i".to_string(), (DetectorParams::bucket(0.6).unwrap(), ClickCondition::Click));
        let c = conditional_state(&s, &herald, &["s"]).unwrap();
        let weights: Vec<f64> = (0..=8)
            .map(|n| pair_probability(lambda, n) * (1.0 - 0.4f64.powi(n as i32)))
            .collect();
        let total: f64 = weights.iter().sum();
        assert_relative_eq!(c.probability, total, max_relative = 1e-12);
        let rho = c.state.unwrap().density();
        assert!(rho[(2, 2)].re > 0.0);
        assert_relative_eq!(rho[(2, 2)].re, weights[2] / total, max_relative = 1e-10);

        let r = ModeRegistry::new(&[("s", 2), ("i", 2)]).unwrap();
        let vac = FockState::<f64>::vacuum(r);
        let c = conditional_state(&vac, &herald, &["s"]).unwrap();
        assert!(c.state.is_none());
        assert!(conditional_state(&vac, &herald, &["i"]).is_err());
    }

    #[test]
    fn tree_examples() {
        let r = ModeRegistry::new(&[("a", 3)]).unwrap();
        let one = FockState::<f64>::number_state(r.clone(), &[1]).unwrap();
        let d = multiplexed_count_probability(&one, "a", 1, 1.0).unwrap();
        assert_eq!(d.len(), 3);
        assert_relative_eq!(d[1], 1.0, epsilon = 1e-15);
        let two = FockState::<f64>::number_state(r.clone(), &[2]).unwrap();
        let d = multiplexed_count_probability(&two, "a", 1, 1.0).unwrap();
        assert_relative_eq!(d[1], 0.5, epsilon = 1e-15);
        assert_relative_eq!(d[2], 0.5, epsilon = 1e-15);
        let vac = FockState::<f64>::vacuum(r);
        let d = multiplexed_count_probability(&vac, "a", 2, 0.7).unwrap();
        assert_relative_eq!(d[0], 1.0, epsilon = 1e-15);
        assert!(multiplexed_count_probability(&vac, "a", 0, 0.7).is_err());
    }

    /// Enumerates every routing of `n` photons to one of `D` leaves or loss.
    fn routing_oracle(n: usize, depth: u32, eta: f64) -> Vec<f64> {
        let d = 1usize << depth;
        let mut out = vec![0.0; d + 1];
        let outcomes = d + 1;
        for code in 0..outcomes.pow(n as u32) {
            let mut c = code;
            let mut hit = vec![false; d];
            let mut p = 1.0;
            for _ in 0..n {
                let o = c % outcomes;
                c /= outcomes;
                if o == d {
                    p *= 1.0 - eta;
                } else {
                    p *= eta / d as f64;
                    hit[o] = true;
                }
            }
            out[hit.iter().filter(|h| **h).count()] += p;
        }
        out
    }

    proptest! {
        #[test]
        fn tree_distribution_matches_routing(n in 0usize..6, depth in 1u32..3, eta in 0.0f64..=1.0) {
            let closed = tree_count_distribution(n, depth, eta);
            let oracle = routing_oracle(n, depth, eta);
            for (a, b) in closed.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_commutes_with_bucket_detection(
            t in 0.0f64..=1.0,
            eta in 0.0f64..=1.0,
            re in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let r = ModeRegistry::new(&[("a", 3), ("b", 3)]).unwrap();
            let amp = nalgebra::DVector::from_iterator(16, re.iter().map(|x| num_complex::Complex::new(*x, 0.3 * x)));
            let s = FockState::from_amplitudes(r, amp).unwrap().normalize();
            let lossy = crate::optics::loss(&crate::optics::LossChannel::new("a", t).unwrap(), &s).unwrap();
            let folded = outcome_distribution(&s, &dets(&[("a", t * eta), ("b", 0.5)])).unwrap();
            let explicit = outcome_distribution(&lossy, &dets(&[("a", eta), ("b", 0.5)])).unwrap();
            let mut total = 0.0;
            for (x, y) in folded.iter().zip(&explicit) {
                prop_assert_eq!(&x.pattern, &y.pattern);
                prop_assert!((x.probability - y.probability).abs() < 1e-12);
                total += x.probability;
            }
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn herald_probability_is_single_arm_click(lambda in 0.0f64..0.3, eta in 0.0f64..=1.0) {
            let s = generate_spdc_state(&src(lambda), "s", "i", 10).unwrap();
            let mut herald = BTreeMap::new();
            herald.insert("i".to_string(), (DetectorParams::bucket(eta).unwrap(), ClickCondition::Click));
            let c = conditional_state(&s, &herald, &["s"]).unwrap();
            let single: f64 = (1..=10).map(|n| pair_probability(lambda, n) * crate::spdc::bucket_click(eta, n)).sum();
            prop_assert!((c.probability - single).abs() <= 1e-12 * single.max(1e-300));
        }
    }

    #[test]
    fn outcome_distribution_with_counts() {
        let s = generate_spdc_state(&src(0.2), "a", "b", 5).unwrap().normalize();
        let mut d = BTreeMap::new();
        d.insert("a".to_string(), DetectorParams::bucket(0.5).unwrap().with_split_depth(1));
        d.insert("b".to_string(), DetectorParams::number_resolving(0.8).unwrap());
        let out = outcome_distribution(&s, &d).unwrap();
        assert_eq!(out.len(), 3 * 6);
        let total: f64 = out.iter().map(|o| o.probability).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn four_two_ratio_limits() {
        let det = DetectorParams::bucket(0.6).unwrap();
        assert_eq!(four_two_ratio(&src(0.0), &det, 1).unwrap(), 0.0);
        let a = four_two_ratio(&SourceParams::new(0.1, 76e6, 1).unwrap(), &det, 1).unwrap();
        let b = four_two_ratio(&SourceParams::new(0.1, 10e6, 1).unwrap(), &det, 1).unwrap();
        assert_eq!(a, b);
        let small = four_two_ratio(&src(1e-4), &det, 1).unwrap();
        assert!(small < 1e-8);
        assert!(four_two_ratio(&src(0.1), &det, 0).is_err());
    }

    #[test]
    fn four_two_ratio_matches_dense_tree() {
        use crate::optics::beamsplitter;
        let lambda = 0.1;
        let eta = 0.6;
        let pair = generate_spdc_state(&src(lambda), "a", "b", 7).unwrap();
        let anc = FockState::vacuum(ModeRegistry::new(&[("a'", 7), ("b'", 7)]).unwrap());
        let s = pair
            .tensor(&anc)
            .unwrap()
            .apply_mode_unitary(&beamsplitter(0.5, ("a", "a'")).unwrap())
            .unwrap()
            .apply_mode_unitary(&beamsplitter(0.5, ("b", "b'")).unwrap())
            .unwrap();
        let det = DetectorParams::bucket(eta).unwrap();
        let prob = |conds: &[(&str, ClickCondition)]| {
            let m: BTreeMap<_, _> = conds.iter().map(|(l, c)| (l.to_string(), (det, *c))).collect();
            joint_probability(&s, &m).unwrap()
        };
        use ClickCondition::{Click, NoClick};
        let four = prob(&[("a", Click), ("a'", Click), ("b", Click), ("b'", Click)]);
        let mut two = 0.0;
        for (x, y) in [(Click, NoClick), (NoClick, Click)] {
            for (u, v) in [(Click, NoClick), (NoClick, Click)] {
                two += prob(&[("a", x), ("a'", y), ("b", u), ("b'", v)]);
            }
        }
        let analytic = four_two_ratio(&src(lambda), &det, 1).unwrap();
        assert_relative_eq!(four / two, analytic, max_relative = 1e-8);
    }

    fn r_squared(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy * sxy / (sxx * syy)
    }

    #[test]
    fn four_two_ratio_is_linear_in_pulse_power() {
        for eta in [0.6, 0.8, 1.0] {
            let det = DetectorParams::bucket(eta).unwrap();
            let lambdas: Vec<f64> = (0..9).map(|i| 0.02 + 0.01 * i as f64).collect();
            let x: Vec<f64> = lambdas.iter().map(|l| l * l).collect();
            let y: Vec<f64> = lambdas.iter().map(|&l| four_two_ratio(&src(l), &det, 1).unwrap()).collect();
            assert!(r_squared(&x, &y) >= 0.9999, "eta {eta}: {}", r_squared(&x, &y));
        }
    }

    #[test]
    fn poisson_sampler_is_seeded() {
        let p = [0.1, 0.5, 0.0, 0.4];
        let a = sample_poisson_counts(&p, 1000.0, 7).unwrap();
        let b = sample_poisson_counts(&p, 1000.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[2], 0);
        assert!(sample_poisson_counts(&[-0.1], 1.0, 0).is_err());
    }
}
