//! Pair statistics of pulsed down-conversion under temporal multiplexing.
//!
//! A [`SourceParams`] carries the *per-pulse* squeezing parameter `λ`
//! together with the multiplexing factor `m`. Multiplexing divides the pump
//! energy of each pulse by `m` while multiplying the pulse rate by `m`, so at
//! fixed average power `λ_m = λ_1 / √m`. The closed-form rate laws are
//! expressed in terms of the unmultiplexed value `λ_1`, which is available as
//! [`SourceParams::lambda_unmultiplexed`].

use nalgebra::DVector;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockState, ModeRegistry};
use crate::scalar::Real;

/// Default power calibration: `λ(700 mW, m = 2) = 0.1`. Arbitrary operating
/// point; the physical constant depends on crystal, focusing and pulse shape.
pub const DEFAULT_CALIB_K: f64 = 0.005_345_224_838_248_488;

/// Relative tail mass tolerated when summing pair-number series.
pub const SERIES_TAIL_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams<R> {
    /// Per-pulse squeezing parameter `λ = ξτ`.
    pub lambda: R,
    /// Repetition rate of the unmultiplexed pump.
    pub rep_rate_hz: R,
    pub multiplex_factor: u32,
    /// Average pump power; when set, `lambda == calib_k · √(power / m)`.
    pub pump_power_mw: Option<R>,
    pub calib_k: R,
    /// Interaction time; informational only, `λ` is the computational parameter.
    pub interaction_time_s: R,
}

impl<R: Real> SourceParams<R> {
    pub fn new(lambda: R, rep_rate_hz: R, multiplex_factor: u32) -> Result<Self> {
        let p = Self {
            lambda,
            rep_rate_hz,
            multiplex_factor,
            pump_power_mw: None,
            calib_k: R::lit(DEFAULT_CALIB_K),
            interaction_time_s: R::lit(1e-12),
        };
        p.validate()?;
        Ok(p)
    }

    /// Source driven at average power `pump_power_mw`, split over `m` pulses.
    pub fn from_power(pump_power_mw: R, calib_k: R, rep_rate_hz: R, multiplex_factor: u32) -> Result<Self> {
        if pump_power_mw < R::zero() {
            return Err(out_of_range("pump_power_mw", pump_power_mw));
        }
        if multiplex_factor == 0 {
            return Err(Error::OutOfRange {
                name: "multiplex_factor",
                value: 0.0,
            });
        }
        let m = R::from_u32(multiplex_factor).unwrap();
        let p = Self {
            lambda: calib_k * (pump_power_mw / m).sqrt(),
            rep_rate_hz,
            multiplex_factor,
            pump_power_mw: Some(pump_power_mw),
            calib_k,
            interaction_time_s: R::lit(1e-12),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= R::zero() && self.lambda < R::one()) {
            return Err(out_of_range("lambda", self.lambda));
        }
        if !(self.rep_rate_hz > R::zero()) {
            return Err(out_of_range("rep_rate_hz", self.rep_rate_hz));
        }
        if self.multiplex_factor == 0 {
            return Err(Error::OutOfRange {
                name: "multiplex_factor",
                value: 0.0,
            });
        }
        if !(self.calib_k > R::zero()) {
            return Err(out_of_range("calib_k", self.calib_k));
        }
        if !(self.interaction_time_s > R::zero()) {
            return Err(out_of_range("interaction_time_s", self.interaction_time_s));
        }
        if let Some(power) = self.pump_power_mw {
            let expected = self.calib_k * (power / self.m()).sqrt();
            if (expected - self.lambda).abs() > R::lit(1e-12).max(R::default_epsilon() * R::lit(8.0)) {
                return Err(out_of_range("lambda", self.lambda));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> R {
        R::from_u32(self.multiplex_factor).unwrap()
    }

    /// `λ` the same average power would give without multiplexing.
    pub fn lambda_unmultiplexed(&self) -> R {
        self.lambda * self.m().sqrt()
    }

    /// Pulse rate actually hitting the crystal, `R·m`.
    pub fn pulse_rate_hz(&self) -> R {
        self.rep_rate_hz * self.m()
    }

    /// Interaction strength `ξ = λ/τ`.
    pub fn xi(&self) -> R {
        self.lambda / self.interaction_time_s
    }

    /// Same source at the same average power, re-multiplexed by `m`.
    pub fn with_multiplex(&self, multiplex_factor: u32) -> Result<Self> {
        let lambda1 = self.lambda_unmultiplexed();
        let mut p = *self;
        p.multiplex_factor = multiplex_factor;
        p.lambda = lambda1 / R::from_u32(multiplex_factor.max(1)).unwrap().sqrt();
        p.validate()?;
        Ok(p)
    }

    pub fn pair_probability(&self, n: usize) -> R {
        pair_probability(self.lambda, n)
    }
}

fn out_of_range<R: Real>(name: &'static str, v: R) -> Error {
    Error::OutOfRange {
        name,
        value: v.to_f64().unwrap_or(f64::NAN),
    }
}

/// Two crystal passes sharing one pump train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPassParams<R> {
    pub forward: SourceParams<R>,
    pub backward: SourceParams<R>,
}

impl<R: Real> DualPassParams<R> {
    pub fn new(forward: SourceParams<R>, backward: SourceParams<R>) -> Result<Self> {
        let p = Self { forward, backward };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        self.backward.validate()?;
        if self.forward.multiplex_factor != self.backward.multiplex_factor {
            return Err(Error::OutOfRange {
                name: "multiplex_factor",
                value: self.backward.multiplex_factor as f64,
            });
        }
        if self.forward.rep_rate_hz != self.backward.rep_rate_hz {
            return Err(out_of_range("rep_rate_hz", self.backward.rep_rate_hz));
        }
        Ok(())
    }

    pub fn swapped(&self) -> Self {
        Self {
            forward: self.backward,
            backward: self.forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceWindow<R> {
    pub window_s: R,
}

impl<R: Real> CoincidenceWindow<R> {
    pub fn new(window_s: R) -> Result<Self> {
        if !(window_s > R::zero()) {
            return Err(out_of_range("window_s", window_s));
        }
        Ok(Self { window_s })
    }

    pub fn max_rate_hz(&self) -> R {
        R::one() / self.window_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepRateVerdict<R> {
    pub pulse_rate_hz: R,
    pub max_rate_hz: R,
    pub ok: bool,
}

/// Pulses must be at least one coincidence window apart: `R·m ≤ 1/Δt`.
pub fn validate_rep_rate<R: Real>(p: &SourceParams<R>, w: &CoincidenceWindow<R>) -> RepRateVerdict<R> {
    let pulse_rate_hz = p.pulse_rate_hz();
    // compare R·m·Δt ≤ 1 to avoid the rounding in 1/Δt
    let ok = pulse_rate_hz * w.window_s <= R::one() + R::lit(1e-12);
    RepRateVerdict {
        pulse_rate_hz,
        max_rate_hz: w.max_rate_hz(),
        ok,
    }
}

/// `P(n) = (1 − λ²) λ^{2n}`.
pub fn pair_probability<R: Real>(lambda: R, n: usize) -> R {
    let l2 = lambda * lambda;
    (R::one() - l2) * l2.powi(n as i32)
}

/// Bound on the mass of all terms with at least `n` pairs, `λ^{2n}/(1 − λ²)`.
pub fn pair_tail_bound<R: Real>(lambda: R, n: usize) -> R {
    let l2 = lambda * lambda;
    l2.powi(n as i32) / (R::one() - l2)
}

/// Smallest `n_max` whose neglected tail is below `limit`.
pub fn series_cutoff<R: Real>(lambda: R, limit: R) -> usize {
    let mut n = 1;
    while pair_tail_bound(lambda, n + 1) >= limit && n < 10_000 {
        n += 1;
    }
    n
}

/// Smallest Fock truncation `t ≥ 2` whose discarded mass `λ^{2(t+1)}` is at
/// most `limit`.
pub fn truncation_for<R: Real>(lambda: R, limit: R) -> usize {
    let l2 = lambda * lambda;
    let mut t = 2;
    while l2.powi(t as i32 + 1) > limit && t < 1_000 {
        t += 1;
    }
    t
}

/// Bucket detection probability for `n` photons, `1 − (1 − η)^n`.
pub fn bucket_click<R: Real>(eta: R, n: usize) -> R {
    R::one() - (R::one() - eta).powi(n as i32)
}

fn check_eta<R: Real>(eta: R) -> Result<()> {
    if !(eta >= R::zero() && eta <= R::one()) {
        return Err(out_of_range("eta", eta));
    }
    Ok(())
}

fn check_tail<R: Real>(lambda: R, n_max: usize) -> Result<()> {
    let tail = pair_tail_bound(lambda, n_max + 1);
    let limit = R::lit(SERIES_TAIL_LIMIT);
    if lambda > R::zero() && tail >= limit {
        return Err(Error::SeriesTruncation {
            n_max,
            tail: tail.to_f64().unwrap_or(f64::NAN),
            limit: SERIES_TAIL_LIMIT,
        });
    }
    Ok(())
}

/// Per-`n` contributions `R (1−(1−η)^n)² P(n; λ_1) / m^{n−1}` for `n = 1..=n_max`.
pub fn coincidence_terms<R: Real>(p: &SourceParams<R>, eta: R, n_max: usize) -> Result<Vec<R>> {
    check_eta(eta)?;
    let lambda1 = p.lambda_unmultiplexed();
    check_tail(lambda1, n_max)?;
    let m = p.m();
    Ok((1..=n_max)
        .map(|n| {
            let b = bucket_click(eta, n);
            p.rep_rate_hz * b * b * pair_probability(lambda1, n) / m.powi(n as i32 - 1)
        })
        .collect())
}

/// Two-fold coincidence rate of a multiplexed source with bucket detectors.
pub fn coincidence_rate<R: Real>(p: &SourceParams<R>, eta: R, n_max: usize) -> Result<R> {
    Ok(coincidence_terms(p, eta, n_max)?
        .into_iter()
        .fold(R::zero(), |a, b| a + b))
}

/// Same as [`coincidence_rate`] but with an automatically chosen cutoff.
pub fn coincidence_rate_auto<R: Real>(p: &SourceParams<R>, eta: R) -> Result<R> {
    let n_max = series_cutoff(p.lambda_unmultiplexed(), R::lit(SERIES_TAIL_LIMIT));
    coincidence_rate(p, eta, n_max)
}

/// Per-pulse two-fold probability `Σ (1−(1−η)^n)² P(n; λ)` at the per-pulse `λ`.
pub fn coincidence_bracket<R: Real>(lambda: R, eta: R, n_max: usize) -> R {
    (1..=n_max)
        .map(|n| {
            let b = bucket_click(eta, n);
            b * b * pair_probability(lambda, n)
        })
        .fold(R::zero(), |a, b| a + b)
}

/// Rate from the per-pulse state, `R·m · Σ (1−(1−η)^n)² P(n; λ_m)`.
///
/// Differs from [`coincidence_rate`] only through the vacuum normalization
/// `(1 − λ_m²)` versus `(1 − λ_1²)`.
pub fn coincidence_rate_per_pulse<R: Real>(p: &SourceParams<R>, eta: R, n_max: usize) -> Result<R> {
    check_eta(eta)?;
    check_tail(p.lambda, n_max)?;
    Ok(p.pulse_rate_hz() * coincidence_bracket(p.lambda, eta, n_max))
}

/// Single-to-double pair signal-to-noise ratio, `m η² / ((1−(1−η)²)² λ_1²)`.
pub fn snr<R: Real>(p: &SourceParams<R>, eta: R) -> Result<R> {
    check_eta(eta)?;
    let lambda1 = p.lambda_unmultiplexed();
    if lambda1 == R::zero() {
        return Err(Error::ZeroLambda);
    }
    let b2 = bucket_click(eta, 2);
    Ok(p.m() * eta * eta / (b2 * b2 * lambda1 * lambda1))
}

/// Joint heralding rate of two passes,
/// `R Σ_{n₁,n₂≥1} b(n₁)² b(n₂)² P(n₁,n₂) / m^{n₁+n₂−1}` with `b(n) = 1−(1−η)^n`.
pub fn heralded_joint_rate<R: Real>(p: &DualPassParams<R>, eta: R, n_max: usize) -> Result<R> {
    check_eta(eta)?;
    p.validate()?;
    let l1 = p.forward.lambda_unmultiplexed();
    let l2 = p.backward.lambda_unmultiplexed();
    check_tail(l1, n_max)?;
    check_tail(l2, n_max)?;
    let m = p.forward.m();
    let mut total = R::zero();
    for n1 in 1..=n_max {
        let b1 = bucket_click(eta, n1);
        let w1 = b1 * b1 * pair_probability(l1, n1);
        for n2 in 1..=n_max {
            let b2 = bucket_click(eta, n2);
            let w2 = b2 * b2 * pair_probability(l2, n2);
            total += w1 * w2 / m.powi((n1 + n2) as i32 - 1);
        }
    }
    Ok(p.forward.rep_rate_hz * total)
}

/// Truncated two-mode squeezed vacuum `√(1−λ²) Σ_{n≤t} λ^n |n,n⟩`.
///
/// The state is not renormalized; the discarded mass `λ^{2(t+1)}` is
/// recorded as leakage.
pub fn generate_spdc_state<R: Real>(
    p: &SourceParams<R>,
    signal: &str,
    idler: &str,
    truncation: usize,
) -> Result<FockState<R>> {
    if truncation < 2 {
        return Err(Error::OutOfRange {
            name: "truncation",
            value: truncation as f64,
        });
    }
    p.validate()?;
    let registry = ModeRegistry::new(&[(signal, truncation), (idler, truncation)])?;
    let mut amps = DVector::zeros(registry.dim());
    let norm = (R::one() - p.lambda * p.lambda).sqrt();
    for n in 0..=truncation {
        let idx = registry.index_of(&[n, n]).unwrap();
        amps[idx] = Complex::new(norm * p.lambda.powi(n as i32), R::zero());
    }
    let leakage = (p.lambda * p.lambda).powi(truncation as i32 + 1);
    Ok(FockState::from_amplitudes(registry, amps)?.with_leakage(leakage))
}

/// Product of two truncated pair states on `(a1, b1)` and `(a2, b2)`.
pub fn generate_dual_pass_state<R: Real>(
    p: &DualPassParams<R>,
    labels: [&str; 4],
    truncation: usize,
) -> Result<FockState<R>> {
    p.validate()?;
    let first = generate_spdc_state(&p.forward, labels[0], labels[1], truncation)?;
    let second = generate_spdc_state(&p.backward, labels[2], labels[3], truncation)?;
    first.tensor(&second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn src(lambda: f64, m: u32) -> SourceParams<f64> {
        SourceParams::new(lambda, 76e6, m).unwrap()
    }

    #[test]
    fn pair_probabilities() {
        assert_eq!(pair_probability(0.0, 0), 1.0);
        assert_eq!(pair_probability(0.0, 3), 0.0);
        assert_relative_eq!(pair_probability(0.1, 0), 0.99, max_relative = 1e-14);
        assert_relative_eq!(pair_probability(0.1, 1), 0.0099, max_relative = 1e-14);
        assert_relative_eq!(pair_probability(0.1, 2), 9.9e-5, max_relative = 1e-14);
        let total: f64 = (0..=50).map(|n| pair_probability(0.3, n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coincidence_rate_matches_brute_force() {
        let brute: f64 = (1..=20)
            .map(|n| {
                let b = 1.0 - 0.4f64.powi(n);
                b * b * 0.99 * 0.01f64.powi(n)
            })
            .sum::<f64>()
            * 76e6;
        let rate = coincidence_rate(&src(0.1, 1), 0.6, 20).unwrap();
        assert_relative_eq!(rate, brute, max_relative = 1e-13);
        assert_relative_eq!(rate, 2.7623e5, max_relative = 1e-4);
        assert_eq!(coincidence_rate(&src(0.1, 1), 0.0, 20).unwrap(), 0.0);
        assert!(matches!(
            coincidence_rate(&src(0.3, 1), 0.6, 3),
            Err(Error::SeriesTruncation { .. })
        ));
    }

    #[test]
    fn doubling_keeps_single_pair_term() {
        let base = src(0.1, 1);
        let doubled = base.with_multiplex(2).unwrap();
        assert_relative_eq!(doubled.lambda, 0.1 / 2f64.sqrt(), max_relative = 1e-15);
        let t1 = coincidence_terms(&base, 0.6, 20).unwrap();
        let t2 = coincidence_terms(&doubled, 0.6, 20).unwrap();
        assert_relative_eq!(t1[0], t2[0], max_relative = 1e-15);
        assert_relative_eq!(t2[1], t1[1] / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn per_pulse_rate_differs_only_by_vacuum_normalization() {
        let p = src(0.1, 1).with_multiplex(3).unwrap();
        let law = coincidence_rate(&p, 0.6, 30).unwrap();
        let exact = coincidence_rate_per_pulse(&p, 0.6, 30).unwrap();
        let l1 = p.lambda_unmultiplexed();
        assert_relative_eq!(exact / law, (1.0 - p.lambda * p.lambda) / (1.0 - l1 * l1), max_relative = 1e-13);
    }

    #[test]
    fn snr_values() {
        assert_relative_eq!(snr(&src(0.1, 1), 0.6).unwrap(), 51.0204, max_relative = 1e-5);
        let doubled = src(0.1, 1).with_multiplex(2).unwrap();
        assert_relative_eq!(snr(&doubled, 0.6).unwrap(), 2.0 * snr(&src(0.1, 1), 0.6).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(snr(&src(0.2, 1), 1.0).unwrap(), 25.0, max_relative = 1e-13);
        assert_eq!(snr(&src(0.0, 1), 0.6), Err(Error::ZeroLambda));
    }

    #[test]
    fn heralded_rate_factorizes() {
        let p = DualPassParams::new(src(0.1, 1), src(0.1, 1)).unwrap();
        let single = coincidence_rate(&src(0.1, 1), 0.6, 20).unwrap() / 76e6;
        let joint = heralded_joint_rate(&p, 0.6, 20).unwrap();
        assert_relative_eq!(joint, 76e6 * single * single, max_relative = 1e-13);
        let q = DualPassParams::new(src(0.1, 1), src(0.0, 1)).unwrap();
        assert_eq!(heralded_joint_rate(&q, 0.6, 20).unwrap(), 0.0);
    }

    #[test]
    fn heralded_leading_term_scales_with_pulse_rate() {
        // two pairs in one pulse: per-pulse probability ∝ 1/m², pulse rate ∝ m
        let eta = 0.6;
        let p1 = DualPassParams::new(src(1e-4, 1), src(1e-4, 1)).unwrap();
        let p2 = DualPassParams::new(p1.forward.with_multiplex(2).unwrap(), p1.backward.with_multiplex(2).unwrap()).unwrap();
        let r1 = heralded_joint_rate(&p1, eta, 6).unwrap();
        let r2 = heralded_joint_rate(&p2, eta, 6).unwrap();
        assert_relative_eq!(r2 / r1, 0.5, max_relative = 1e-7);
    }

    #[test]
    fn spdc_state_amplitudes() {
        let vac = generate_spdc_state(&src(0.0, 1), "a", "b", 3).unwrap();
        assert_eq!(vac.amplitude(&[0, 0]).unwrap().re, 1.0);
        assert_eq!(vac.norm(), 1.0);

        let s = generate_spdc_state(&src(0.3, 1), "a", "b", 4).unwrap();
        let expected = [0.953939, 0.286182, 0.0858545, 0.0257564, 0.00772691];
        for (n, e) in expected.iter().enumerate() {
            assert_relative_eq!(s.amplitude(&[n, n]).unwrap().re, *e, max_relative = 1e-5);
            for k in 0..=4 {
                if k != n {
                    assert_eq!(s.amplitude(&[n, k]).unwrap().norm(), 0.0);
                }
            }
        }
        for n in 1..=4 {
            let ratio = s.amplitude(&[n, n]).unwrap().norm_sqr() / s.amplitude(&[n - 1, n - 1]).unwrap().norm_sqr();
            assert_relative_eq!(ratio, 0.09, max_relative = 1e-12);
        }
        assert_relative_eq!(s.leakage(), 0.3f64.powi(10), max_relative = 1e-12);
        assert_relative_eq!(s.norm() + s.leakage(), 1.0, max_relative = 1e-14);
        assert!(generate_spdc_state(&src(0.3, 1), "a", "b", 1).is_err());
    }

    #[test]
    fn dual_pass_coefficients() {
        let p = DualPassParams::new(src(0.2, 1), src(0.3, 1)).unwrap();
        let s = generate_dual_pass_state(&p, ["a1", "b1", "a2", "b2"], 3).unwrap();
        let c = s.amplitude(&[1, 1, 1, 1]).unwrap().re;
        assert_relative_eq!(c, ((1.0 - 0.04) * (1.0 - 0.09f64)).sqrt() * 0.2 * 0.3, max_relative = 1e-14);
        assert_relative_eq!(s.amplitude(&[2, 2, 0, 0]).unwrap().re, ((1.0 - 0.04) * (1.0 - 0.09f64)).sqrt() * 0.04, max_relative = 1e-14);
        let q = DualPassParams::new(src(0.2, 1), src(0.0, 1)).unwrap();
        let t = generate_dual_pass_state(&q, ["a1", "b1", "a2", "b2"], 3).unwrap();
        let single = generate_spdc_state(&src(0.2, 1), "a1", "b1", 3).unwrap();
        let marginal = t.partial_trace(&["a1", "b1"]).unwrap();
        assert!(crate::linalg::max_abs_diff(&marginal.density(), &single.density()) < 1e-15);
    }

    #[test]
    fn tmsv_marginal_is_thermal() {
        let s = generate_spdc_state(&src(0.3, 1), "a", "b", 4).unwrap();
        let rho = s.partial_trace(&["a"]).unwrap().density();
        for n in 0..=4 {
            assert_relative_eq!(rho[(n, n)].re, 0.91 * 0.09f64.powi(n as i32), max_relative = 1e-12);
            for k in 0..=4 {
                if k != n {
                    assert_eq!(rho[(n, k)].norm(), 0.0);
                }
            }
        }
        let at_least_one: BTreeMapOcc = [("a".to_string(), crate::fock::Occupancy::AtLeast(1))].into();
        let p = s.project(&at_least_one).unwrap().probability;
        let direct: f64 = (1..=4).map(|n| pair_probability(0.3, n)).sum();
        assert_relative_eq!(p, direct, max_relative = 1e-13);
    }
    type BTreeMapOcc = std::collections::BTreeMap<String, crate::fock::Occupancy>;

    #[test]
    fn power_calibration() {
        let p = SourceParams::from_power(700.0, DEFAULT_CALIB_K, 76e6, 2).unwrap();
        assert_relative_eq!(p.lambda, 0.1, max_relative = 1e-14);
        let mut bad = p;
        bad.lambda = 0.2;
        assert!(bad.validate().is_err());
        assert!(SourceParams::new(1.0, 76e6, 1).is_err());
        assert!(SourceParams::new(0.1, 76e6, 0).is_err());
    }

    #[test]
    fn repetition_rate_ceiling() {
        let w3 = CoincidenceWindow::new(3e-9).unwrap();
        assert!(validate_rep_rate(&src(0.1, 2), &w3).ok);
        let ghz = SourceParams::new(0.1, 1e9, 1).unwrap();
        assert!(validate_rep_rate(&ghz, &CoincidenceWindow::new(400e-12).unwrap()).ok);
        assert!(validate_rep_rate(&ghz, &CoincidenceWindow::new(1e-9).unwrap()).ok);
        let two_ghz = SourceParams::new(0.1, 1e9, 2).unwrap();
        assert!(!validate_rep_rate(&two_ghz, &CoincidenceWindow::new(1e-9).unwrap()).ok);
        assert!(CoincidenceWindow::new(0.0).is_err());
    }

    proptest! {
        #[test]
        fn multiplexing_law(lambda in 0.001f64..0.3, eta in 0.01f64..1.0, m in 2u32..8) {
            let base = src(lambda, 1);
            let mux = base.with_multiplex(m).unwrap();
            let t1 = coincidence_terms(&base, eta, 40).unwrap();
            let tm = coincidence_terms(&mux, eta, 40).unwrap();
            for n in 1..=6usize {
                let expected = t1[n - 1] / (m as f64).powi(n as i32 - 1);
                prop_assert!((tm[n - 1] - expected).abs() <= 1e-15 * expected.abs().max(1e-300) * 4.0);
            }
        }

        #[test]
        fn snr_monotone(lambda in 0.01f64..0.5, eta in 0.05f64..1.0, m in 1u32..10) {
            let p = src(lambda, 1).with_multiplex(m).unwrap();
            let more = src(lambda, 1).with_multiplex(m + 1).unwrap();
            let brighter = src(lambda * 1.1, 1).with_multiplex(m).unwrap();
            prop_assert!(snr(&more, eta).unwrap() > snr(&p, eta).unwrap());
            prop_assert!(snr(&brighter, eta).unwrap() < snr(&p, eta).unwrap());
        }

        #[test]
        fn heralded_rate_symmetric(l1 in 0.0f64..0.3, l2 in 0.0f64..0.3, eta in 0.0f64..1.0) {
            let p = DualPassParams::new(src(l1, 1), src(l2, 1)).unwrap();
            let a = heralded_joint_rate(&p, eta, 40).unwrap();
            let b = heralded_joint_rate(&p.swapped(), eta, 40).unwrap();
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1e-300));
        }

        #[test]
        fn pair_probabilities_sum_to_one(lambda in 0.0f64..0.95) {
            let n = series_cutoff(lambda, 1e-13);
            let total: f64 = (0..=n).map(|k| pair_probability(lambda, k)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
