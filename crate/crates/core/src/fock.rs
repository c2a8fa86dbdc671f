//! Truncated multimode Fock space.
//!
//! Basis ordering is little-endian over the registry's mode order: the first
//! registered mode varies fastest, so the basis index of an occupation vector
//! `n` is `Σ n_i · Π_{j<i} (t_j + 1)`.
//!
//! A mode unitary `U` acts on creation operators as `a_i† → Σ_j U_ji a_j†`;
//! its image on a multi-photon state is obtained by expanding the product of
//! transformed creation operators (see [`multiphoton_image`]). Amplitude that
//! lands above a mode's truncation is removed and accumulated in
//! [`FockState::leakage`], never silently renormalized away.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mode {
    pub label: String,
    pub truncation: usize,
}

/// Ordered set of labelled, truncated bosonic modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeRegistry {
    modes: Vec<Mode>,
    strides: Vec<usize>,
    dim: usize,
}

impl ModeRegistry {
    pub fn new<S: AsRef<str>>(specs: &[(S, usize)]) -> Result<Self> {
        let mut modes: Vec<Mode> = Vec::with_capacity(specs.len());
        for (label, truncation) in specs {
            let label = label.as_ref();
            if modes.iter().any(|m| m.label == label) {
                return Err(Error::DuplicateMode(label.to_string()));
            }
            if *truncation == 0 {
                return Err(Error::ZeroTruncation(label.to_string()));
            }
            modes.push(Mode {
                label: label.to_string(),
                truncation: *truncation,
            });
        }
        Ok(Self::from_modes(modes))
    }

    fn from_modes(modes: Vec<Mode>) -> Self {
        let mut strides = Vec::with_capacity(modes.len());
        let mut dim = 1usize;
        for m in &modes {
            strides.push(dim);
            dim *= m.truncation + 1;
        }
        Self { modes, strides, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.modes.iter().map(|m| m.label.as_str())
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.modes.iter().any(|m| m.label == label)
    }

    pub fn truncation(&self, pos: usize) -> usize {
        self.modes[pos].truncation
    }

    pub fn stride(&self, pos: usize) -> usize {
        self.strides[pos]
    }

    pub fn occupation(&self, pos: usize, index: usize) -> usize {
        (index / self.strides[pos]) % (self.modes[pos].truncation + 1)
    }

    pub fn occupations(&self, index: usize) -> Vec<usize> {
        (0..self.modes.len())
            .map(|p| self.occupation(p, index))
            .collect()
    }

    /// Basis index of an occupation vector, or `None` if any entry exceeds
    /// its mode's truncation.
    pub fn index_of(&self, occupations: &[usize]) -> Option<usize> {
        debug_assert_eq!(occupations.len(), self.modes.len());
        let mut idx = 0;
        for (p, &n) in occupations.iter().enumerate() {
            if n > self.modes[p].truncation {
                return None;
            }
            idx += n * self.strides[p];
        }
        Some(idx)
    }

    fn concat(&self, other: &Self) -> Result<Self> {
        if let Some(m) = other.modes.iter().find(|m| self.contains(&m.label)) {
            return Err(Error::ModeCollision(m.label.clone()));
        }
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        Ok(Self::from_modes(modes))
    }

    fn subset(&self, positions: &[usize]) -> Self {
        Self::from_modes(positions.iter().map(|&p| self.modes[p].clone()).collect())
    }
}

/// A complex matrix acting on the creation operators of the named modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeUnitary<R: Real> {
    modes: Vec<String>,
    matrix: DMatrix<Complex<R>>,
}

impl<R: Real> ModeUnitary<R> {
    pub fn new<S: AsRef<str>>(modes: &[S], matrix: DMatrix<Complex<R>>) -> Result<Self> {
        let modes: Vec<String> = modes.iter().map(|s| s.as_ref().to_string()).collect();
        if matrix.nrows() != modes.len() || matrix.ncols() != modes.len() {
            return Err(Error::DimensionMismatch {
                expected: modes.len(),
                found: matrix.nrows(),
            });
        }
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(Error::DuplicateMode(m.clone()));
            }
        }
        let deviation = unitarity_deviation(&matrix);
        if deviation > R::lit(1e-12).max(R::default_epsilon() * R::lit(64.0)) {
            return Err(Error::NotUnitary {
                deviation: deviation.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { modes, matrix })
    }

    pub fn identity<S: AsRef<str>>(modes: &[S]) -> Self {
        Self {
            modes: modes.iter().map(|s| s.as_ref().to_string()).collect(),
            matrix: DMatrix::identity(modes.len(), modes.len()),
        }
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    pub fn matrix(&self) -> &DMatrix<Complex<R>> {
        &self.matrix
    }
}

pub(crate) fn unitarity_deviation<R: Real>(m: &DMatrix<Complex<R>>) -> R {
    let prod = m.adjoint() * m;
    let n = m.nrows();
    let mut worst = R::zero();
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { R::one() } else { R::zero() };
            let d = (prod[(i, j)] - Complex::new(target, R::zero())).norm_sqr().sqrt();
            worst = worst.max(d);
        }
    }
    worst
}

fn sqrt_factorial<R: Real>(n: usize) -> R {
    let mut acc = R::one();
    for k in 2..=n {
        acc *= R::from_usize(k).unwrap().sqrt();
    }
    acc
}

/// Image of the number state `|occupation⟩` under the multi-photon
/// representation of `matrix`, i.e. `Π_i (Σ_j M_ji a_j†)^{n_i} / √(n_i!) |0⟩`.
///
/// No truncation is applied; the result lists every reachable occupation
/// vector with its amplitude, sorted by occupation. `matrix` need not be
/// unitary (lossy transfer matrices are allowed).
pub fn multiphoton_image<R: Real>(
    matrix: &DMatrix<Complex<R>>,
    occupation: &[usize],
) -> Vec<(Vec<usize>, Complex<R>)> {
    let k = occupation.len();
    debug_assert_eq!(matrix.ncols(), k);
    let zero = Complex::new(R::zero(), R::zero());
    let mut poly: HashMap<Vec<usize>, Complex<R>> = HashMap::new();
    poly.insert(vec![0; matrix.nrows()], Complex::new(R::one(), R::zero()));
    for (i, &n) in occupation.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let column: Vec<(usize, Complex<R>)> = (0..matrix.nrows())
            .filter_map(|j| {
                let c = matrix[(j, i)];
                (c != zero).then_some((j, c))
            })
            .collect();
        for _ in 0..n {
            let mut next: HashMap<Vec<usize>, Complex<R>> =
                HashMap::with_capacity(poly.len() * column.len().max(1));
            for (mono, c) in &poly {
                for &(j, x) in &column {
                    let mut m = mono.clone();
                    m[j] += 1;
                    *next.entry(m).or_insert(zero) += *c * x;
                }
            }
            poly = next;
        }
    }
    let norm_in: R = occupation.iter().map(|&n| sqrt_factorial::<R>(n)).fold(R::one(), |a, b| a * b);
    let mut out: Vec<(Vec<usize>, Complex<R>)> = poly
        .into_iter()
        .filter(|(_, c)| *c != zero)
        .map(|(m, c)| {
            let norm_out: R = m.iter().map(|&n| sqrt_factorial::<R>(n)).fold(R::one(), |a, b| a * b);
            let amp = c * (norm_out / norm_in);
            (m, amp)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation<R: Real> {
    Pure(DVector<Complex<R>>),
    Mixed(DMatrix<Complex<R>>),
}

/// Occupation constraint used by [`FockState::project`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occupancy {
    Exactly(usize),
    AtLeast(usize),
    Any,
}

impl Occupancy {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Occupancy::Exactly(k) => n == k,
            Occupancy::AtLeast(k) => n >= k,
            Occupancy::Any => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Projection<R: Real> {
    pub probability: R,
    /// Projected, unnormalized state.
    pub projected: FockState<R>,
    /// Renormalized state; `None` when the probability vanishes.
    pub state: Option<FockState<R>>,
}

/// State over a [`ModeRegistry`], either a ket or a density operator.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState<R: Real> {
    registry: ModeRegistry,
    repr: Representation<R>,
    leakage: R,
}

impl<R: Real> FockState<R> {
    pub fn vacuum(registry: ModeRegistry) -> Self {
        let mut v = DVector::zeros(registry.dim());
        v[0] = Complex::new(R::one(), R::zero());
        Self {
            registry,
            repr: Representation::Pure(v),
            leakage: R::zero(),
        }
    }

    pub fn number_state(registry: ModeRegistry, occupations: &[usize]) -> Result<Self> {
        if occupations.len() != registry.len() {
            return Err(Error::DimensionMismatch {
                expected: registry.len(),
                found: occupations.len(),
            });
        }
        let idx = registry.index_of(occupations).ok_or(Error::OutOfRange {
            name: "occupation",
            value: occupations.iter().copied().max().unwrap_or(0) as f64,
        })?;
        let mut v = DVector::zeros(registry.dim());
        v[idx] = Complex::new(R::one(), R::zero());
        Ok(Self {
            registry,
            repr: Representation::Pure(v),
            leakage: R::zero(),
        })
    }

    pub fn from_amplitudes(registry: ModeRegistry, amplitudes: DVector<Complex<R>>) -> Result<Self> {
        if amplitudes.len() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                found: amplitudes.len(),
            });
        }
        Ok(Self {
            registry,
            repr: Representation::Pure(amplitudes),
            leakage: R::zero(),
        })
    }

    /// Density operator; checked to be Hermitian within `1e-12` and positive
    /// semidefinite down to `-1e-10`.
    pub fn from_density(registry: ModeRegistry, rho: DMatrix<Complex<R>>) -> Result<Self> {
        if rho.nrows() != registry.dim() || rho.ncols() != registry.dim() {
            return Err(Error::DimensionMismatch {
                expected: registry.dim(),
                found: rho.nrows(),
            });
        }
        crate::linalg::check_density(&rho, R::lit(1e-12), R::lit(1e-10), false)?;
        Ok(Self {
            registry,
            repr: Representation::Mixed(rho),
            leakage: R::zero(),
        })
    }

    pub(crate) fn mixed_unchecked(registry: ModeRegistry, rho: DMatrix<Complex<R>>) -> Self {
        Self {
            registry,
            repr: Representation::Mixed(rho),
            leakage: R::zero(),
        }
    }

    pub(crate) fn with_leakage(mut self, leakage: R) -> Self {
        self.leakage = leakage;
        self
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    pub fn representation(&self) -> &Representation<R> {
        &self.repr
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.repr, Representation::Pure(_))
    }

    /// Probability mass pushed above the truncation so far.
    pub fn leakage(&self) -> R {
        self.leakage
    }

    pub fn check_leakage(&self, limit: R) -> Result<()> {
        if self.leakage > limit {
            return Err(Error::TruncationLeakage {
                leakage: self.leakage.to_f64().unwrap_or(f64::NAN),
                limit: limit.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    /// `⟨ψ|ψ⟩` or `Tr ρ`.
    pub fn norm(&self) -> R {
        match &self.repr {
            Representation::Pure(v) => v.iter().map(|c| c.norm_sqr()).fold(R::zero(), |a, b| a + b),
            Representation::Mixed(m) => (0..m.nrows()).map(|i| m[(i, i)].re).fold(R::zero(), |a, b| a + b),
        }
    }

    pub fn normalize(&self) -> Self {
        let n = self.norm();
        let repr = match &self.repr {
            Representation::Pure(v) => Representation::Pure(v.unscale(n.sqrt())),
            Representation::Mixed(m) => Representation::Mixed(m.unscale(n)),
        };
        Self {
            registry: self.registry.clone(),
            repr,
            leakage: self.leakage,
        }
    }

    pub fn amplitudes(&self) -> Option<&DVector<Complex<R>>> {
        match &self.repr {
            Representation::Pure(v) => Some(v),
            Representation::Mixed(_) => None,
        }
    }

    pub fn amplitude(&self, occupations: &[usize]) -> Option<Complex<R>> {
        let idx = self.registry.index_of(occupations)?;
        self.amplitudes().map(|v| v[idx])
    }

    pub fn density(&self) -> DMatrix<Complex<R>> {
        match &self.repr {
            Representation::Pure(v) => v * v.adjoint(),
            Representation::Mixed(m) => m.clone(),
        }
    }

    pub fn to_mixed(&self) -> Self {
        Self {
            registry: self.registry.clone(),
            repr: Representation::Mixed(self.density()),
            leakage: self.leakage,
        }
    }

    /// Diagonal of the density operator in the number basis.
    pub fn populations(&self) -> Vec<R> {
        match &self.repr {
            Representation::Pure(v) => v.iter().map(|c| c.norm_sqr()).collect(),
            Representation::Mixed(m) => (0..m.nrows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    /// `Σ_n p(n) f(n)` over occupation vectors `n`.
    pub fn expect_diagonal<F: Fn(&[usize]) -> R>(&self, f: F) -> R {
        self.populations()
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p != R::zero())
            .map(|(i, p)| p * f(&self.registry.occupations(i)))
            .fold(R::zero(), |a, b| a + b)
    }

    /// Joint state on the concatenated registry (`self`'s modes first).
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let registry = self.registry.concat(&other.registry)?;
        let da = self.registry.dim();
        let leakage = self.leakage + other.leakage - self.leakage * other.leakage;
        let repr = match (&self.repr, &other.repr) {
            (Representation::Pure(a), Representation::Pure(b)) => {
                let mut v = DVector::zeros(registry.dim());
                for (ib, cb) in b.iter().enumerate() {
                    for (ia, ca) in a.iter().enumerate() {
                        v[ia + da * ib] = *ca * *cb;
                    }
                }
                Representation::Pure(v)
            }
            _ => {
                let a = self.density();
                let b = other.density();
                let dim = registry.dim();
                let mut m = DMatrix::zeros(dim, dim);
                for jb in 0..b.ncols() {
                    for ib in 0..b.nrows() {
                        let cb = b[(ib, jb)];
                        if cb.norm_sqr() == R::zero() {
                            continue;
                        }
                        for ja in 0..da {
                            for ia in 0..da {
                                m[(ia + da * ib, ja + da * jb)] = a[(ia, ja)] * cb;
                            }
                        }
                    }
                }
                Representation::Mixed(m)
            }
        };
        Ok(Self {
            registry,
            repr,
            leakage,
        })
    }

    /// Reduced density operator on `keep` (kept modes retain registry order).
    pub fn partial_trace<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        let mut kept: Vec<usize> = keep
            .iter()
            .map(|l| self.registry.position(l.as_ref()))
            .collect::<Result<_>>()?;
        kept.sort_unstable();
        kept.dedup();
        let traced: Vec<usize> = (0..self.registry.len()).filter(|p| !kept.contains(p)).collect();
        let sub = self.registry.subset(&kept);
        let rest = self.registry.subset(&traced);
        let split = |i: usize| -> (usize, usize) {
            let mut k = 0;
            for (q, &p) in kept.iter().enumerate() {
                k += self.registry.occupation(p, i) * sub.stride(q);
            }
            let mut r = 0;
            for (q, &p) in traced.iter().enumerate() {
                r += self.registry.occupation(p, i) * rest.stride(q);
            }
            (k, r)
        };
        let dk = sub.dim();
        let mut out = DMatrix::zeros(dk, dk);
        match &self.repr {
            Representation::Pure(v) => {
                let mut psi = DMatrix::zeros(dk, rest.dim());
                for (i, c) in v.iter().enumerate() {
                    let (k, r) = split(i);
                    psi[(k, r)] = *c;
                }
                out = &psi * psi.adjoint();
            }
            Representation::Mixed(m) => {
                let parts: Vec<(usize, usize)> = (0..m.nrows()).map(split).collect();
                for (i, &(ki, ri)) in parts.iter().enumerate() {
                    for (j, &(kj, rj)) in parts.iter().enumerate() {
                        if ri == rj {
                            out[(ki, kj)] += m[(i, j)];
                        }
                    }
                }
            }
        }
        Ok(Self {
            registry: sub,
            repr: Representation::Mixed(out),
            leakage: self.leakage,
        })
    }

    /// Projects onto the occupations allowed by `pattern` (unlisted modes
    /// are unconstrained).
    pub fn project(&self, pattern: &BTreeMap<String, Occupancy>) -> Result<Projection<R>> {
        let constraints: Vec<(usize, Occupancy)> = pattern
            .iter()
            .map(|(l, o)| Ok((self.registry.position(l)?, *o)))
            .collect::<Result<_>>()?;
        let accept = |i: usize| {
            constraints
                .iter()
                .all(|&(p, o)| o.accepts(self.registry.occupation(p, i)))
        };
        let zero = Complex::new(R::zero(), R::zero());
        let repr = match &self.repr {
            Representation::Pure(v) => {
                let mut w = v.clone();
                for (i, c) in w.iter_mut().enumerate() {
                    if !accept(i) {
                        *c = zero;
                    }
                }
                Representation::Pure(w)
            }
            Representation::Mixed(m) => {
                let keep: Vec<bool> = (0..m.nrows()).map(accept).collect();
                let mut w = m.clone();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        if !(keep[i] && keep[j]) {
                            w[(i, j)] = zero;
                        }
                    }
                }
                Representation::Mixed(w)
            }
        };
        let projected = Self {
            registry: self.registry.clone(),
            repr,
            leakage: self.leakage,
        };
        let probability = projected.norm();
        let state = (probability > R::zero()).then(|| projected.normalize());
        Ok(Projection {
            probability,
            projected,
            state,
        })
    }

    /// Applies the Fock-space image of a mode unitary. Amplitude pushed past
    /// the truncation is dropped and added to [`Self::leakage`].
    pub fn apply_mode_unitary(&self, u: &ModeUnitary<R>) -> Result<Self> {
        let op = SparseModeOperator::new(&self.registry, u.modes(), u.matrix())?;
        let before = self.norm();
        let repr = match &self.repr {
            Representation::Pure(v) => Representation::Pure(op.apply_vector(v)),
            Representation::Mixed(m) => {
                let left = op.apply_columns(m);
                let right = op.apply_columns(&left.adjoint()).adjoint();
                Representation::Mixed(right)
            }
        };
        let mut out = Self {
            registry: self.registry.clone(),
            repr,
            leakage: self.leakage,
        };
        let lost = before - out.norm();
        if lost > R::zero() {
            out.leakage += lost;
        }
        Ok(out)
    }

    /// Distribution of the total photon number over all modes.
    pub fn photon_number_distribution(&self) -> Vec<R> {
        let max: usize = self.registry.modes().iter().map(|m| m.truncation).sum();
        let mut dist = vec![R::zero(); max + 1];
        for (i, p) in self.populations().into_iter().enumerate() {
            let n: usize = self.registry.occupations(i).iter().sum();
            dist[n] += p;
        }
        dist
    }
}

/// Fock-space image of a mode matrix restricted to a registry, stored as a
/// sparse map from input basis index to output basis indices.
struct SparseModeOperator<R: Real> {
    /// For each full-registry index: list of (output index, amplitude).
    columns: Vec<Vec<(usize, Complex<R>)>>,
}

impl<R: Real> SparseModeOperator<R> {
    fn new(registry: &ModeRegistry, modes: &[String], matrix: &DMatrix<Complex<R>>) -> Result<Self> {
        let acted: Vec<usize> = modes
            .iter()
            .map(|l| registry.position(l))
            .collect::<Result<_>>()?;
        let sub = registry.subset(&acted);
        // image of every sub-configuration, expressed as offsets in the full registry
        let images: Vec<Vec<(isize, Complex<R>)>> = (0..sub.dim())
            .map(|s| {
                let occ = sub.occupations(s);
                let offset_in: isize = acted
                    .iter()
                    .zip(&occ)
                    .map(|(&p, &n)| (n * registry.stride(p)) as isize)
                    .sum();
                multiphoton_image(matrix, &occ)
                    .into_iter()
                    .filter(|(m, _)| sub.index_of(m).is_some())
                    .map(|(m, amp)| {
                        let offset_out: isize = acted
                            .iter()
                            .zip(&m)
                            .map(|(&p, &n)| (n * registry.stride(p)) as isize)
                            .sum();
                        (offset_out - offset_in, amp)
                    })
                    .collect()
            })
            .collect();
        let columns = (0..registry.dim())
            .map(|i| {
                let mut s = 0;
                for (q, &p) in acted.iter().enumerate() {
                    s += registry.occupation(p, i) * sub.stride(q);
                }
                images[s]
                    .iter()
                    .map(|&(delta, amp)| ((i as isize + delta) as usize, amp))
                    .collect()
            })
            .collect();
        Ok(Self { columns })
    }

    fn apply_vector(&self, v: &DVector<Complex<R>>) -> DVector<Complex<R>> {
        let mut out = DVector::zeros(v.len());
        for (i, c) in v.iter().enumerate() {
            if c.norm_sqr() == R::zero() {
                continue;
            }
            for &(j, amp) in &self.columns[i] {
                out[j] += amp * *c;
            }
        }
        out
    }

    fn apply_columns(&self, m: &DMatrix<Complex<R>>) -> DMatrix<Complex<R>> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for col in 0..m.ncols() {
            for i in 0..m.nrows() {
                let c = m[(i, col)];
                if c.norm_sqr() == R::zero() {
                    continue;
                }
                for &(j, amp) in &self.columns[i] {
                    out[(j, col)] += amp * c;
                }
            }
        }
        out
    }
}

/// Largest absolute change of `probe` between two truncations; used to
/// confirm that a reported quantity has converged in the cutoff.
pub fn truncation_convergence<R: Real, F>(probe: F, coarse: usize, fine: usize) -> Result<R>
where
    F: Fn(usize) -> Result<Vec<R>>,
{
    let a = probe(coarse)?;
    let b = probe(fine)?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(R::zero(), |m, d| m.max(d)))
}
