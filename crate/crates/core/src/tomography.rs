//! Two-qubit state and process tomography and the figures of merit used to
//! grade a gate: HOM visibility, Uhlmann fidelity, tangle, process fidelity.
//!
//! Qubit order is `(q1, q2)` with `|H⟩ = |0⟩`; basis index `2 q1 + q2`.

use std::io::Read;

use nalgebra::{DMatrix, SVD};
use num_complex::Complex;
use num_traits::{Num, ToPrimitive};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_density, eigenvalues, hermitian_part, kron, psd_sqrt, real, spectral_map, trace, CMatrix};
use crate::optics::WaveplateSpec;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];

    /// Normalized Jones vector `(h, v)`; `D = (H+V)/√2`, `R = (H+iV)/√2`.
    pub fn ket<R: Real>(self) -> [Complex<R>; 2] {
        let s = R::lit(0.5).sqrt();
        let z = R::zero();
        match self {
            Pol::H => [real(R::one()), real(z)],
            Pol::V => [real(z), real(R::one())],
            Pol::D => [real(s), real(s)],
            Pol::A => [real(s), real(-s)],
            Pol::R => [real(s), Complex::new(z, s)],
            Pol::L => [real(s), Complex::new(z, -s)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pol::H => "H",
            Pol::V => "V",
            Pol::D => "D",
            Pol::A => "A",
            Pol::R => "R",
            Pol::L => "L",
        }
    }

    pub fn parse(s: &str) -> Option<Pol> {
        Pol::ALL.into_iter().find(|p| p.label().eq_ignore_ascii_case(s.trim()))
    }

    /// Waveplate that takes `|H⟩` to this polarization (up to a global phase).
    pub fn preparation<R: Real>(self) -> Option<WaveplateSpec<R>> {
        let deg = |d: f64| R::lit(d.to_radians());
        match self {
            Pol::H => None,
            Pol::V => Some(WaveplateSpec::half(deg(45.0))),
            Pol::D => Some(WaveplateSpec::half(deg(22.5))),
            Pol::A => Some(WaveplateSpec::half(deg(-22.5))),
            Pol::R => Some(WaveplateSpec::quarter(deg(45.0))),
            Pol::L => Some(WaveplateSpec::quarter(deg(-45.0))),
        }
    }

    /// Index of the measurement basis (`HV`, `DA`, `RL`).
    pub fn basis(self) -> usize {
        match self {
            Pol::H | Pol::V => 0,
            Pol::D | Pol::A => 1,
            Pol::R | Pol::L => 2,
        }
    }
}

pub fn two_qubit_ket<R: Real>(p1: Pol, p2: Pol) -> [Complex<R>; 4] {
    let a = p1.ket::<R>();
    let b = p2.ket::<R>();
    [a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]]
}

pub fn projector<R: Real>(p1: Pol, p2: Pol) -> CMatrix<R> {
    crate::linalg::ket_to_density(&two_qubit_ket::<R>(p1, p2))
}

/// Product-basis projective measurements with optional recorded counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet<R> {
    pub settings: Vec<(Pol, Pol)>,
    pub counts: Option<Vec<R>>,
}

impl<R: Real> MeasurementSet<R> {
    /// The 36 settings `{H,V,D,A,R,L}⊗{H,V,D,A,R,L}`, first qubit slowest.
    pub fn overcomplete() -> Self {
        let settings = Pol::ALL
            .iter()
            .flat_map(|&a| Pol::ALL.iter().map(move |&b| (a, b)))
            .collect();
        Self { settings, counts: None }
    }

    pub fn with_counts(mut self, counts: Vec<R>) -> Result<Self> {
        if counts.len() != self.settings.len() {
            return Err(Error::DimensionMismatch {
                expected: self.settings.len(),
                found: counts.len(),
            });
        }
        if let Some(c) = counts.iter().find(|c| !(**c >= R::zero())) {
            return Err(Error::OutOfRange {
                name: "counts",
                value: c.to_f64().unwrap_or(f64::NAN),
            });
        }
        self.counts = Some(counts);
        Ok(self)
    }

    pub fn projectors(&self) -> Vec<CMatrix<R>> {
        self.settings.iter().map(|&(a, b)| projector(a, b)).collect()
    }

    /// `Tr(Π_s ρ)` for every setting.
    pub fn probabilities(&self, rho: &CMatrix<R>) -> Vec<R> {
        self.settings
            .iter()
            .map(|&(a, b)| expectation_ket(rho, &two_qubit_ket(a, b)))
            .collect()
    }
}

fn expectation_ket<R: Real>(rho: &CMatrix<R>, ket: &[Complex<R>; 4]) -> R {
    let mut acc = real(R::zero());
    for i in 0..4 {
        for j in 0..4 {
            acc += ket[i].conj() * rho[(i, j)] * ket[j];
        }
    }
    acc.re
}

/// Reads `setting_qubit1,setting_qubit2,counts` rows (header required).
pub fn parse_counts_csv<Rd: Read>(reader: Rd) -> Result<MeasurementSet<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column `{name}`")))
    };
    let (c1, c2, cc) = (col("setting_qubit1")?, col("setting_qubit2")?, col("counts")?);
    let mut settings = Vec::new();
    let mut counts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let line = i + 2;
        let pol = |c: usize| {
            Pol::parse(rec.get(c).unwrap_or(""))
                .ok_or_else(|| Error::Parse(format!("line {line}: unknown polarization `{}`", rec.get(c).unwrap_or(""))))
        };
        settings.push((pol(c1)?, pol(c2)?));
        let n: f64 = rec
            .get(cc)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Parse(format!("line {line}: counts is not a number")))?;
        counts.push(n);
    }
    MeasurementSet { settings, counts: None }.with_counts(counts)
}

/// Row-major matrix with `[re, im]` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl MatrixJson {
    pub fn from_matrix<R: Real>(m: &CMatrix<R>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let c = m[(i, j)];
                data.push([c.re.to_f64().unwrap_or(f64::NAN), c.im.to_f64().unwrap_or(f64::NAN)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix<R: Real>(&self) -> Result<CMatrix<R>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: self.data.len(),
            });
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |i, j| {
            let [re, im] = self.data[i * self.cols + j];
            Complex::new(R::lit(re), R::lit(im))
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityResult<T> {
    pub c_dist: T,
    pub c_indist: T,
    pub visibility: T,
    /// Negative visibility or negative rates.
    pub anomalous: bool,
}

/// `V = (C_dist − C_indist) / C_dist`. Works for floats and exact rationals.
pub fn hom_visibility<T>(c_dist: T, c_indist: T) -> Result<VisibilityResult<T>>
where
    T: Num + Copy + PartialOrd + ToPrimitive,
{
    if !(c_dist > T::zero()) {
        return Err(Error::OutOfRange {
            name: "c_dist",
            value: c_dist.to_f64().unwrap_or(f64::NAN),
        });
    }
    let visibility = (c_dist - c_indist) / c_dist;
    Ok(VisibilityResult {
        c_dist,
        c_indist,
        visibility,
        anomalous: visibility < T::zero() || c_indist < T::zero(),
    })
}

fn check_state<R: Real>(rho: &CMatrix<R>) -> Result<()> {
    check_density(rho, R::lit(1e-8), R::lit(1e-8), false)
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity<R: Real>(rho: &CMatrix<R>, sigma: &CMatrix<R>) -> Result<R> {
    if rho.shape() != sigma.shape() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            found: sigma.nrows(),
        });
    }
    check_state(rho)?;
    check_state(sigma)?;
    let s = psd_sqrt(rho);
    let inner = &s * sigma * &s;
    let t = sqrt_spectrum(&inner).into_iter().fold(R::zero(), |a, x| a + x);
    Ok((t * t).min(R::one()))
}

/// Square roots of the eigenvalues of a PSD matrix; eigenvalues at round-off
/// level are treated as zero, since their square roots would otherwise leak
/// `~1e-8` into the result.
fn sqrt_spectrum<R: Real>(m: &CMatrix<R>) -> Vec<R> {
    let vals = eigenvalues(m);
    let scale = vals.iter().fold(R::zero(), |a, v| a.max(v.abs()));
    let floor = scale * R::lit(64.0) * R::default_epsilon() * R::from_usize(m.nrows()).unwrap();
    vals.into_iter()
        .map(|v| if v > floor { v.sqrt() } else { R::zero() })
        .collect()
}

fn sigma_yy<R: Real>() -> CMatrix<R> {
    let z = real(R::zero());
    let mut m = CMatrix::from_element(4, 4, z);
    // σ_y ⊗ σ_y is real: anti-diagonal (-1, 1, 1, -1)
    m[(0, 3)] = real(-R::one());
    m[(1, 2)] = real(R::one());
    m[(2, 1)] = real(R::one());
    m[(3, 0)] = real(-R::one());
    m
}

/// Wootters concurrence.
pub fn concurrence<R: Real>(rho: &CMatrix<R>) -> Result<R> {
    if rho.shape() != (4, 4) {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: rho.nrows(),
        });
    }
    check_state(rho)?;
    let yy = sigma_yy::<R>();
    let flipped = &yy * rho.map(|c| c.conj()) * &yy;
    let s = psd_sqrt(rho);
    let mut l = sqrt_spectrum(&(&s * flipped * &s));
    l.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((l[0] - l[1] - l[2] - l[3]).max(R::zero()))
}

/// Concurrence squared, clipped to `[0, 1]`.
pub fn tangle<R: Real>(rho: &CMatrix<R>) -> Result<R> {
    let c = concurrence(rho)?;
    Ok((c * c).min(R::one()).max(R::zero()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions<R: Real> {
    /// State the fidelity is reported against.
    pub target: Option<CMatrix<R>>,
    pub max_iterations: usize,
    /// Stop once the log-likelihood per count improves by less than this.
    pub tolerance: R,
    /// Record the log-likelihood of every accepted iterate.
    pub keep_history: bool,
    /// Start from the clipped linear-inversion estimate instead of `I/4`.
    pub warm_start: bool,
}

impl<R: Real> Default for MleOptions<R> {
    fn default() -> Self {
        Self {
            target: None,
            max_iterations: 100_000,
            tolerance: R::lit(1e-10),
            keep_history: false,
            warm_start: true,
        }
    }
}

impl<R: Real> MleOptions<R> {
    pub fn with_target(target: CMatrix<R>) -> Self {
        Self {
            target: Some(target),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult<R: Real> {
    pub rho: CMatrix<R>,
    /// Fidelity with [`MleOptions::target`], if one was given.
    pub fidelity: Option<R>,
    pub tangle: R,
    /// `Σ n_s ln p̂_s` with `p̂_s = Tr(Π_s ρ) / Σ_t Tr(Π_t ρ)`.
    pub log_likelihood: R,
    pub iterations: usize,
    /// Per-count log-likelihood after each accepted step (if requested).
    pub history: Vec<R>,
}

struct Likelihood<R: Real> {
    projectors: Vec<CMatrix<R>>,
    freqs: Vec<R>,
    total: R,
    /// `G^{-1/2}` with `G = Σ Π_s`.
    g_inv_sqrt: CMatrix<R>,
}

impl<R: Real> Likelihood<R> {
    fn new(m: &MeasurementSet<R>) -> Result<Self> {
        let counts = m.counts.as_ref().ok_or(Error::NoCounts)?;
        let total = counts.iter().fold(R::zero(), |a, &b| a + b);
        if !(total > R::zero()) {
            return Err(Error::NoCounts);
        }
        // every measured basis pair needs at least one count
        let mut groups: Vec<((usize, usize), R)> = Vec::new();
        for (&(a, b), &n) in m.settings.iter().zip(counts) {
            let key = (a.basis(), b.basis());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, s)) => *s += n,
                None => groups.push((key, n)),
            }
        }
        if groups.iter().any(|(_, s)| !(*s > R::zero())) {
            return Err(Error::NoCounts);
        }
        let projectors = m.projectors();
        let g = projectors.iter().fold(CMatrix::zeros(4, 4), |acc, p| acc + p);
        if eigenvalues(&g)[0] <= R::lit(1e-9) {
            return Err(Error::RankDeficient { rank: 0, required: 4 });
        }
        let g_inv_sqrt = spectral_map(&g, |x| R::one() / x.sqrt());
        Ok(Self {
            projectors,
            freqs: counts.iter().map(|&n| n / total).collect(),
            total,
            g_inv_sqrt,
        })
    }

    fn probs(&self, rho: &CMatrix<R>) -> Vec<R> {
        self.projectors.iter().map(|p| trace(&(p * rho)).re).collect()
    }

    /// Log-likelihood per count, relative to the normalized probabilities.
    fn log_l(&self, rho: &CMatrix<R>) -> R {
        let p = self.probs(rho);
        let norm = p.iter().fold(R::zero(), |a, &b| a + b);
        let mut acc = R::zero();
        for (f, q) in self.freqs.iter().zip(&p) {
            if *f > R::zero() {
                let q = (*q / norm).max(R::lit(1e-300));
                acc += *f * q.ln();
            }
        }
        acc
    }

    /// `G^{-1/2} (Σ f_s / p̂_s Π_s) G^{-1/2}` scaled so the fixed point is `I`.
    fn r_operator(&self, rho: &CMatrix<R>) -> CMatrix<R> {
        let p = self.probs(rho);
        let norm = p.iter().fold(R::zero(), |a, &b| a + b);
        let mut r = CMatrix::zeros(4, 4);
        for ((f, q), pr) in self.freqs.iter().zip(&p).zip(&self.projectors) {
            if *f > R::zero() {
                r += pr.scale(*f * norm / q.max(R::lit(1e-300)));
            }
        }
        &self.g_inv_sqrt * r * &self.g_inv_sqrt
    }
}

fn normalize_trace<R: Real>(m: CMatrix<R>) -> CMatrix<R> {
    let t = trace(&m).re;
    hermitian_part(&m).unscale(t)
}

/// Least-squares state from relative frequencies, normalized to unit trace
/// (may be unphysical).
pub fn linear_inversion<R: Real>(m: &MeasurementSet<R>) -> Result<CMatrix<R>> {
    let counts = m.counts.as_ref().ok_or(Error::NoCounts)?;
    let basis = pauli_basis::<R>();
    let projectors = m.projectors();
    let a = DMatrix::<R>::from_fn(projectors.len(), 16, |s, k| trace(&(&projectors[s] * &basis[k])).re);
    let b = nalgebra::DVector::from_iterator(counts.len(), counts.iter().copied());
    let svd = SVD::new(a, true, true);
    let rank = svd.rank(R::lit(1e-9));
    if rank < 16 {
        return Err(Error::RankDeficient { rank, required: 16 });
    }
    let coeffs = svd.solve(&b, R::lit(1e-9)).map_err(|e| Error::NotPhysical(e.to_string()))?;
    let rho = basis
        .iter()
        .zip(coeffs.iter())
        .fold(CMatrix::zeros(4, 4), |acc, (p, &c)| acc + p.scale(c));
    let t = trace(&rho).re;
    if !(t > R::zero()) {
        return Err(Error::NoCounts);
    }
    Ok(hermitian_part(&rho).unscale(t))
}

fn warm_start<R: Real>(m: &MeasurementSet<R>) -> Option<CMatrix<R>> {
    let li = linear_inversion(m).ok()?;
    let clipped = normalize_trace(spectral_map(&li, |v| v.max(R::zero())));
    let mix = R::lit(1e-9);
    Some(clipped.scale(R::one() - mix) + CMatrix::identity(4, 4).scale(mix / R::lit(4.0)))
}

/// Maximum-likelihood two-qubit state under Poissonian counts.
///
/// Diluted `RρR` iteration: `ρ ← (I + εR) ρ (I + εR)` renormalized, with the
/// step `ε` halved whenever the likelihood would drop, so every accepted step
/// is non-decreasing. Positivity holds by construction. The iteration starts
/// from the clipped linear-inversion estimate (kept full rank), which makes
/// near-pure reconstructions converge quickly.
pub fn mle_reconstruct<R: Real>(m: &MeasurementSet<R>, opts: &MleOptions<R>) -> Result<TomographyResult<R>> {
    let lik = Likelihood::new(m)?;
    let id = CMatrix::<R>::identity(4, 4);
    let mut rho = id.scale(R::lit(0.25));
    if opts.warm_start {
        if let Some(start) = warm_start(m) {
            if lik.log_l(&start) > lik.log_l(&rho) {
                rho = start;
            }
        }
    }
    let mut log_l = lik.log_l(&rho);
    let mut eps = R::one();
    let eps_max = R::lit(1e3);
    let eps_min = R::lit(1e-12);
    let mut iterations = 0;
    let mut converged = false;
    let mut gradient = R::zero();
    let mut history = Vec::new();
    if opts.keep_history {
        history.push(log_l);
    }
    while iterations < opts.max_iterations {
        iterations += 1;
        let r = lik.r_operator(&rho);
        gradient = (&r - &id).norm();
        let mut accepted = None;
        let mut throttled = false;
        while eps >= eps_min {
            let step = &id + r.scale(eps);
            let candidate = normalize_trace(&step * &rho * step.adjoint());
            let l = lik.log_l(&candidate);
            if l >= log_l {
                accepted = Some((candidate, l));
                break;
            }
            eps *= R::lit(0.5);
            throttled = true;
        }
        let Some((next, l)) = accepted else {
            converged = true;
            break;
        };
        let gain = l - log_l;
        rho = next;
        log_l = l;
        if opts.keep_history {
            history.push(l);
        }
        eps = (eps * R::lit(2.0)).min(eps_max);
        if gain < opts.tolerance && !throttled {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            gradient_norm: gradient.to_f64().unwrap_or(f64::NAN),
        });
    }
    let fidelity = match &opts.target {
        Some(t) => Some(fidelity(&rho, t)?),
        None => None,
    };
    let tangle = tangle(&rho)?;
    Ok(TomographyResult {
        rho,
        fidelity,
        tangle,
        log_likelihood: log_l * lik.total,
        iterations,
        history,
    })
}

/// Seeded Poisson resample of a count table, for bootstrap studies.
pub fn resample_counts<R: Real>(m: &MeasurementSet<R>, seed: u64) -> Result<MeasurementSet<R>> {
    let counts = m.counts.as_ref().ok_or(Error::NoCounts)?;
    let drawn = crate::detection::sample_poisson_counts(counts, R::one(), seed)?;
    m.clone()
        .with_counts(drawn.into_iter().map(|n| R::from_u64(n).unwrap()).collect())
}

/// Random density matrix from a complex Ginibre matrix of the given rank.
pub fn random_density<R: Real, G: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut G) -> CMatrix<R> {
    let g = CMatrix::from_fn(dim, rank.max(1), |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(R::lit(re), R::lit(im))
    });
    normalize_trace(&g * g.adjoint())
}

/// Haar-random unitary via QR of a Ginibre matrix.
pub fn random_unitary<R: Real, G: Rng + ?Sized>(dim: usize, rng: &mut G) -> CMatrix<R> {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex::new(R::lit(re), R::lit(im))
    });
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut u = q;
    for j in 0..dim {
        let d = r[(j, j)];
        let n = d.norm_sqr().sqrt();
        if n > R::zero() {
            let phase = d.unscale(n);
            for i in 0..dim {
                u[(i, j)] *= phase;
            }
        }
    }
    u
}

fn pauli<R: Real>(k: usize) -> CMatrix<R> {
    let e = |a: f64, b: f64| Complex::new(R::lit(a), R::lit(b));
    match k {
        0 => DMatrix::from_row_slice(2, 2, &[e(1.0, 0.0), e(0.0, 0.0), e(0.0, 0.0), e(1.0, 0.0)]),
        1 => DMatrix::from_row_slice(2, 2, &[e(0.0, 0.0), e(1.0, 0.0), e(1.0, 0.0), e(0.0, 0.0)]),
        2 => DMatrix::from_row_slice(2, 2, &[e(0.0, 0.0), e(0.0, -1.0), e(0.0, 1.0), e(0.0, 0.0)]),
        _ => DMatrix::from_row_slice(2, 2, &[e(1.0, 0.0), e(0.0, 0.0), e(0.0, 0.0), e(-1.0, 0.0)]),
    }
}

/// `P_{4i+j} = σ_i ⊗ σ_j` with `σ = (I, X, Y, Z)`.
pub fn pauli_basis<R: Real>() -> Vec<CMatrix<R>> {
    (0..16).map(|k| kron(&pauli(k / 4), &pauli(k % 4))).collect()
}

/// `{H,V,D,R}⊗{H,V,D,R}`, first qubit slowest.
pub fn standard_preparations() -> Vec<(Pol, Pol)> {
    let set = [Pol::H, Pol::V, Pol::D, Pol::R];
    set.iter().flat_map(|&a| set.iter().map(move |&b| (a, b))).collect()
}

pub fn cz_unitary<R: Real>() -> CMatrix<R> {
    let mut u = CMatrix::identity(4, 4);
    u[(3, 3)] = real(-R::one());
    u
}

/// χ matrix of `ρ ↦ U ρ U†` in the Pauli basis.
pub fn chi_from_unitary<R: Real>(u: &CMatrix<R>) -> CMatrix<R> {
    let c: Vec<Complex<R>> = pauli_basis::<R>()
        .iter()
        .map(|p| trace(&(p.adjoint() * u)).unscale(R::lit(4.0)))
        .collect();
    CMatrix::from_fn(16, 16, |m, n| c[m] * c[n].conj())
}

/// Choi matrix `Σ |a⟩⟨b| ⊗ E(|a⟩⟨b|)` to χ: `χ_mn = ⟨⟨P_m|J|P_n⟩⟩ / 16`.
pub fn chi_from_choi<R: Real>(j: &CMatrix<R>) -> CMatrix<R> {
    let vecs: Vec<nalgebra::DVector<Complex<R>>> = pauli_basis::<R>()
        .iter()
        .map(|p| nalgebra::DVector::from_fn(16, |idx, _| p[(idx % 4, idx / 4)]))
        .collect();
    CMatrix::from_fn(16, 16, |m, n| {
        let jv = j * &vecs[n];
        vecs[m].dotc(&jv) / R::lit(16.0)
    })
}

pub fn choi_from_chi<R: Real>(chi: &CMatrix<R>) -> CMatrix<R> {
    let vecs: Vec<nalgebra::DVector<Complex<R>>> = pauli_basis::<R>()
        .iter()
        .map(|p| nalgebra::DVector::from_fn(16, |idx, _| p[(idx % 4, idx / 4)]))
        .collect();
    let mut j = CMatrix::zeros(16, 16);
    for m in 0..16 {
        for n in 0..16 {
            if chi[(m, n)] != real(R::zero()) {
                j += (&vecs[m] * vecs[n].adjoint()) * chi[(m, n)];
            }
        }
    }
    j
}

/// How process fidelity is scored against the ideal χ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessFidelityKind {
    /// `Tr(χ χ_ideal)`.
    #[default]
    ChiOverlap,
    /// Uhlmann fidelity of the normalized Choi states.
    Choi,
}

pub fn process_fidelity<R: Real>(chi: &CMatrix<R>, chi_ideal: &CMatrix<R>, kind: ProcessFidelityKind) -> Result<R> {
    match kind {
        ProcessFidelityKind::ChiOverlap => Ok(trace(&(chi * chi_ideal)).re),
        ProcessFidelityKind::Choi => {
            let a = choi_from_chi(chi).unscale(R::lit(4.0));
            let b = choi_from_chi(chi_ideal).unscale(R::lit(4.0));
            fidelity(&a, &b)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessResult<R: Real> {
    /// Pauli-basis χ, trace 1.
    pub chi: CMatrix<R>,
    /// Choi matrix, trace 4.
    pub choi: CMatrix<R>,
    pub process_fidelity: R,
    pub kind: ProcessFidelityKind,
}

fn partial_trace_out<R: Real>(j: &CMatrix<R>) -> CMatrix<R> {
    CMatrix::from_fn(4, 4, |a, b| {
        (0..4).fold(real(R::zero()), |acc, c| acc + j[(a * 4 + c, b * 4 + c)])
    })
}

/// Nearest completely-positive trace-preserving Choi matrix in Frobenius
/// norm (Dykstra alternation between the PSD cone and the TP affine set).
pub fn project_cptp<R: Real>(j: &CMatrix<R>) -> CMatrix<R> {
    let id4 = CMatrix::<R>::identity(4, 4);
    let tp = |x: &CMatrix<R>| -> CMatrix<R> {
        let defect = partial_trace_out(x) - &id4;
        x - kron(&defect, &id4).scale(R::lit(0.25))
    };
    let psd = |x: &CMatrix<R>| spectral_map(x, |v| v.max(R::zero()));
    let mut x = hermitian_part(j);
    let mut p = CMatrix::zeros(16, 16);
    let mut q = CMatrix::zeros(16, 16);
    for _ in 0..10_000 {
        let y = tp(&(&x + &p));
        p = &x + &p - &y;
        let next = psd(&(&y + &q));
        q = &y + &q - &next;
        let tp_defect = (partial_trace_out(&next) - &id4).norm();
        let moved = (&next - &x).norm();
        x = next;
        if tp_defect < R::lit(1e-12) && moved < R::lit(1e-13) {
            break;
        }
    }
    x
}

/// Linear-inversion process tomography from the outputs on `preparations`
/// (normalized two-qubit density matrices), projected onto the CPTP set and
/// scored against `ideal` (a 4×4 unitary).
pub fn process_tomography<R, F>(
    mut gate: F,
    preparations: &[CMatrix<R>],
    ideal: &CMatrix<R>,
    kind: ProcessFidelityKind,
) -> Result<ProcessResult<R>>
where
    R: Real,
    F: FnMut(&CMatrix<R>) -> Result<CMatrix<R>>,
{
    let outputs: Vec<CMatrix<R>> = preparations.iter().map(&mut gate).collect::<Result<_>>()?;
    process_from_outputs(preparations, &outputs, ideal, kind)
}

/// [`process_tomography`] on precomputed outputs, `outputs[k] = E(preparations[k])`.
pub fn process_from_outputs<R: Real>(
    preparations: &[CMatrix<R>],
    outputs: &[CMatrix<R>],
    ideal: &CMatrix<R>,
    kind: ProcessFidelityKind,
) -> Result<ProcessResult<R>> {
    if outputs.len() != preparations.len() {
        return Err(Error::DimensionMismatch {
            expected: preparations.len(),
            found: outputs.len(),
        });
    }
    let k = preparations.len();
    let a = CMatrix::from_fn(16, k, |idx, col| preparations[col][(idx / 4, idx % 4)]);
    let svd = SVD::new(a.clone(), true, true);
    let rank = svd.rank(R::lit(1e-9));
    if rank < 16 {
        return Err(Error::RankDeficient { rank, required: 16 });
    }
    let pinv = svd
        .pseudo_inverse(R::lit(1e-9))
        .map_err(|e| Error::NotPhysical(e.to_string()))?;
    for o in outputs {
        if o.shape() != (4, 4) {
            return Err(Error::DimensionMismatch {
                expected: 4,
                found: o.nrows(),
            });
        }
    }
    let mut choi = CMatrix::zeros(16, 16);
    for x in 0..4 {
        for y in 0..4 {
            // coefficients expressing |x⟩⟨y| in the preparation set
            let beta = pinv.column(x * 4 + y);
            let mut image = CMatrix::zeros(4, 4);
            for (kk, o) in outputs.iter().enumerate() {
                image += o * beta[kk];
            }
            for c in 0..4 {
                for d in 0..4 {
                    choi[(x * 4 + c, y * 4 + d)] = image[(c, d)];
                }
            }
        }
    }
    let choi = project_cptp(&choi);
    let chi = chi_from_choi(&choi);
    let chi_ideal = chi_from_unitary(ideal);
    let process_fidelity = process_fidelity(&chi, &chi_ideal, kind)?;
    Ok(ProcessResult {
        chi,
        choi,
        process_fidelity,
        kind,
    })
}

/// Density matrices of product preparations.
pub fn preparation_states<R: Real>(preps: &[(Pol, Pol)]) -> Vec<CMatrix<R>> {
    preps.iter().map(|&(a, b)| projector(a, b)).collect()
}
