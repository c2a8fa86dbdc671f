//! The scan runners. Each returns a typed report; `outputs()` turns it into
//! files.

use rayon::prelude::*;
use serde_json::json;
use spdcmux::detection::{tree_count_distribution, DetectorParams};
use spdcmux::linalg::CMatrix;
use spdcmux::spdc::{generate_spdc_state, validate_rep_rate, CoincidenceWindow, SourceParams};
use spdcmux::tomography::{
    cz_unitary, fidelity, hom_visibility, parse_counts_csv, preparation_states, process_from_outputs,
    standard_preparations, MatrixJson, MleOptions, Pol, TomographyResult,
};

use crate::config::{ConfigError, ExperimentConfig, ScanConfig};
use crate::error::RunError;
use crate::model::{checked_state, hd_va, pick_truncation, reconstruct, single_pair_visibility, GateSetup, SourceKind};
use crate::output::{num, Outputs, Table};
use crate::svg::{Chart, Series};

/// Points with per-pulse λ at or below this enter the small-λ deviation.
pub const SMALL_LAMBDA: f64 = 0.05;

type RunResult<T> = Result<T, RunError>;

/// Evaluates `f(0..n)` on a pool of `workers` threads; results keep index order.
pub fn pool_map<T, F>(workers: Option<usize>, n: usize, f: F) -> RunResult<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> RunResult<T> + Sync + Send,
{
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    let pool = b.build().map_err(|e| RunError::Io(e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Largest relative deviation over points with `λ ≤ SMALL_LAMBDA`; NaN if none.
pub fn small_lambda_deviation(points: impl Iterator<Item = (f64, f64, f64)>) -> f64 {
    let mut worst = f64::NAN;
    for (lambda, exact, approx) in points {
        if lambda <= SMALL_LAMBDA {
            let d = if exact == 0.0 {
                approx.abs()
            } else {
                ((approx - exact) / exact).abs()
            };
            worst = if worst.is_nan() { d } else { worst.max(d) };
        }
    }
    worst
}

fn require_positive_grid(scan: &ScanConfig, field: &str, what: &str) -> RunResult<()> {
    if scan.min <= 0.0 {
        return Err(ConfigError::Invalid {
            field: field.to_string(),
            line: None,
            message: format!("{what} is undefined at zero power; need min > 0, got {}", scan.min),
        }
        .into());
    }
    Ok(())
}

/// `(m, grid value)` pairs, curve-major.
fn jobs(cfg: &ExperimentConfig, scan: &ScanConfig) -> Vec<(u32, f64)> {
    let values = scan.values();
    cfg.source
        .multiplex
        .iter()
        .flat_map(|&m| values.iter().map(move |&v| (m, v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

// ---------------------------------------------------------------- pn-ratio

#[derive(Debug, Clone, PartialEq)]
pub struct PnPoint {
    pub power_mw: f64,
    pub lambda: f64,
    pub pulse_rate_hz: f64,
    pub ratio: f64,
    /// Leading order `λ² P(≥2|2)² / P(1|1)²`.
    pub ratio_small_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnCurve {
    pub m: u32,
    pub points: Vec<PnPoint>,
    pub fit: LinearFit,
    pub max_rel_deviation_small_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnRatioReport {
    pub curves: Vec<PnCurve>,
}

impl PnRatioReport {
    pub fn curve(&self, m: u32) -> Option<&PnCurve> {
        self.curves.iter().find(|c| c.m == m)
    }

    /// `slope(m_a) / slope(m_b)`.
    pub fn slope_ratio(&self, m_a: u32, m_b: u32) -> Option<f64> {
        Some(self.curve(m_a)?.fit.slope / self.curve(m_b)?.fit.slope)
    }

    pub fn outputs(&self) -> Outputs {
        let mut t = Table::new(
            "pn_ratio",
            &["m", "pulse_rate_hz", "power_mw", "lambda", "ratio", "ratio_small_lambda"],
        );
        let mut f = Table::new(
            "pn_ratio_fit",
            &["m", "slope_per_mw", "intercept", "r_squared", "slope_ratio_m1_over_m", "max_rel_deviation_small_lambda"],
        );
        let mut series = Vec::new();
        for c in &self.curves {
            for p in &c.points {
                t.push(vec![
                    c.m.to_string(),
                    num(p.pulse_rate_hz),
                    num(p.power_mw),
                    num(p.lambda),
                    num(p.ratio),
                    num(p.ratio_small_lambda),
                ]);
            }
            f.push(vec![
                c.m.to_string(),
                num(c.fit.slope),
                num(c.fit.intercept),
                num(c.fit.r_squared),
                num(self.slope_ratio(1, c.m).unwrap_or(f64::NAN)),
                num(c.max_rel_deviation_small_lambda),
            ]);
            series.push(Series {
                label: format!("m={}", c.m),
                points: c.points.iter().map(|p| (p.power_mw, p.ratio)).collect(),
            });
        }
        Outputs {
            tables: vec![t, f],
            json: vec![],
            charts: vec![Chart {
                name: "pn_ratio".into(),
                title: "4-photon / 2-photon ratio".into(),
                x_label: "average pump power (mW)".into(),
                y_label: "ratio".into(),
                series,
            }],
        }
    }
}

fn arm_distribution(n: usize, det: &DetectorParams<f64>, depth: u32) -> Vec<f64> {
    if det.number_resolving {
        let eta = det.efficiency;
        (0..=n)
            .map(|k| spdcmux::detection::binomial::<f64>(n, k) * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32))
            .collect()
    } else {
        tree_count_distribution(n, depth, det.efficiency)
    }
}

/// 4-fold over 2-fold probability on a truncated pair state, each arm counted
/// by `det` (exactly one count versus at least two).
fn simulated_ratio(lambda: f64, det: &DetectorParams<f64>, depth: u32, truncation: usize, limit: f64) -> RunResult<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let state = generate_spdc_state(&SourceParams::new(lambda, 1.0, 1)?, "s", "i", truncation)?;
    state.check_leakage(limit)?;
    let table: Vec<(f64, f64)> = (0..=truncation)
        .map(|n| {
            let d = arm_distribution(n, det, depth);
            (d.get(1).copied().unwrap_or(0.0), d.iter().skip(2).sum())
        })
        .collect();
    let two = state.expect_diagonal(|occ| table[occ[0]].0 * table[occ[1]].0);
    let four = state.expect_diagonal(|occ| table[occ[0]].1 * table[occ[1]].1);
    Ok(four / two)
}

/// Ratio of 4-fold to 2-fold events versus average pump power, one curve per
/// multiplexing factor, with a straight-line fit per curve.
pub fn run_pn_ratio(cfg: &ExperimentConfig) -> RunResult<PnRatioReport> {
    cfg.validate()?;
    let pn = &cfg.pn_ratio;
    let mut eta = cfg.detectors.efficiency;
    if pn.include_loss {
        eta *= 1.0 - cfg.loss.signal;
    }
    let det = if cfg.detectors.number_resolving {
        DetectorParams::number_resolving(eta)?
    } else {
        DetectorParams::bucket(eta)?.with_split_depth(pn.depth)
    };
    let one = arm_distribution(1, &det, pn.depth)[1];
    let many: f64 = arm_distribution(2, &det, pn.depth)[2..].iter().sum();
    let lead = (many / one).powi(2);

    let jobs = jobs(cfg, &pn.scan);
    let points = pool_map(cfg.run.workers, jobs.len(), |i| {
        let (m, v) = jobs[i];
        let (lambda, power_mw) = cfg.grid_point(&pn.scan, v, m);
        let p = SourceParams::new(lambda, cfg.source.rep_rate_hz, m)?;
        Ok(PnPoint {
            power_mw,
            lambda,
            pulse_rate_hz: p.pulse_rate_hz(),
            ratio: simulated_ratio(
                lambda,
                &det,
                pn.depth,
                // the 4-fold numerator is O(λ⁴), so the adaptive cutoff bounds leakage relative to it
                pick_truncation(
                    SourceKind::Dependent,
                    lambda,
                    cfg.run.truncation,
                    cfg.run.leakage_limit * lambda.powi(4),
                ),
                cfg.run.leakage_limit,
            )?,
            ratio_small_lambda: lambda * lambda * lead,
        })
    })?;
    let per = pn.scan.points;
    let curves = cfg
        .source
        .multiplex
        .iter()
        .zip(points.chunks(per))
        .map(|(&m, pts)| {
            let x: Vec<f64> = pts.iter().map(|p| p.power_mw).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.ratio).collect();
            PnCurve {
                m,
                points: pts.to_vec(),
                fit: linear_fit(&x, &y),
                max_rel_deviation_small_lambda: small_lambda_deviation(
                    pts.iter().map(|p| (p.lambda, p.ratio, p.ratio_small_lambda)),
                ),
            }
        })
        .collect();
    Ok(PnRatioReport { curves })
}

// ---------------------------------------------------------------- hom-scan

#[derive(Debug, Clone, PartialEq)]
pub struct HomPoint {
    pub power_mw: f64,
    pub power_fraction: f64,
    pub lambda: f64,
    pub c_dist: f64,
    pub c_indist: f64,
    pub visibility: f64,
    /// Same pipeline with at most one pair beyond the minimum.
    pub visibility_small_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomCurve {
    pub source: SourceKind,
    pub m: u32,
    pub points: Vec<HomPoint>,
    pub max_rel_deviation_small_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomReport {
    pub curves: Vec<HomCurve>,
    /// λ → 0 limit for the configured PPBS.
    pub single_pair_visibility: f64,
}

impl HomReport {
    pub fn curve(&self, source: SourceKind, m: u32) -> Option<&HomCurve> {
        self.curves.iter().find(|c| c.source == source && c.m == m)
    }

    pub fn outputs(&self) -> Outputs {
        let mut out = Outputs::default();
        let mut summary = Table::new(
            "hom_scan_summary",
            &["source", "m", "single_pair_visibility", "max_rel_deviation_small_lambda"],
        );
        for kind in [SourceKind::Dependent, SourceKind::Independent] {
            let curves: Vec<&HomCurve> = self.curves.iter().filter(|c| c.source == kind).collect();
            if curves.is_empty() {
                continue;
            }
            let mut t = Table::new(
                &format!("hom_scan_{}", kind.label()),
                &[
                    "m",
                    "power_mw",
                    "power_fraction",
                    "lambda",
                    "c_dist",
                    "c_indist",
                    "visibility",
                    "visibility_small_lambda",
                ],
            );
            let mut series = Vec::new();
            for c in curves {
                for p in &c.points {
                    t.push(vec![
                        c.m.to_string(),
                        num(p.power_mw),
                        num(p.power_fraction),
                        num(p.lambda),
                        num(p.c_dist),
                        num(p.c_indist),
                        num(p.visibility),
                        num(p.visibility_small_lambda),
                    ]);
                }
                summary.push(vec![
                    kind.label().into(),
                    c.m.to_string(),
                    num(self.single_pair_visibility),
                    num(c.max_rel_deviation_small_lambda),
                ]);
                series.push(Series {
                    label: format!("m={}", c.m),
                    points: c.points.iter().map(|p| (p.power_mw, p.visibility)).collect(),
                });
            }
            out.charts.push(Chart {
                name: t.name.clone(),
                title: format!("HOM visibility, {} source", kind.label()),
                x_label: "average pump power (mW)".into(),
                y_label: "visibility".into(),
                series,
            });
            out.tables.push(t);
        }
        out.tables.push(summary);
        out
    }
}

/// Visibility of `|VV⟩` through the gate versus pump power.
pub fn run_hom_scan(cfg: &ExperimentConfig, sources: &[SourceKind]) -> RunResult<HomReport> {
    cfg.validate()?;
    require_positive_grid(&cfg.scan, "scan.min", "visibility")?;
    let setup = GateSetup::from_config(cfg)?;
    let base = jobs(cfg, &cfg.scan);
    let all: Vec<(SourceKind, u32, f64)> = sources
        .iter()
        .flat_map(|&k| base.iter().map(move |&(m, v)| (k, m, v)))
        .collect();
    let points = pool_map(cfg.run.workers, all.len(), |i| {
        let (kind, m, v) = all[i];
        let (lambda, power_mw) = cfg.grid_point(&cfg.scan, v, m);
        let vis = |max_pairs| -> RunResult<(f64, f64, f64)> {
            let state = checked_state(kind, lambda, cfg.run.truncation, cfg.run.leakage_limit, max_pairs)?;
            let (d, ind) = setup.hom_coincidences(kind, &state)?;
            Ok((d, ind, hom_visibility(d, ind)?.visibility))
        };
        let (c_dist, c_indist, visibility) = vis(None)?;
        let (_, _, visibility_small_lambda) = vis(Some(kind.minimal_pairs() + 1))?;
        Ok(HomPoint {
            power_mw,
            power_fraction: power_mw / cfg.source.available_power_mw,
            lambda,
            c_dist,
            c_indist,
            visibility,
            visibility_small_lambda,
        })
    })?;
    let per = cfg.scan.points;
    let mut curves = Vec::new();
    let mut chunks = points.chunks(per);
    for &kind in sources {
        for &m in &cfg.source.multiplex {
            let pts = chunks.next().expect("one chunk per curve").to_vec();
            let dev = small_lambda_deviation(pts.iter().map(|p| (p.lambda, p.visibility, p.visibility_small_lambda)));
            curves.push(HomCurve {
                source: kind,
                m,
                points: pts,
                max_rel_deviation_small_lambda: dev,
            });
        }
    }
    Ok(HomReport {
        curves,
        single_pair_visibility: single_pair_visibility(cfg.ppbs.eta_v),
    })
}

// ---------------------------------------------------------------- cz-state

#[derive(Debug, Clone, PartialEq)]
pub struct CzStatePoint {
    pub power_mw: f64,
    pub power_fraction: f64,
    pub lambda: f64,
    /// Coincidence probability summed over the H/V ⊗ H/V settings.
    pub coincidence_probability: f64,
    pub fidelity: f64,
    pub tangle: f64,
    pub fidelity_small_lambda: f64,
    pub tangle_small_lambda: f64,
    pub rho: CMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CzStateCurve {
    pub m: u32,
    pub points: Vec<CzStatePoint>,
    pub max_rel_deviation_fidelity: f64,
    pub max_rel_deviation_tangle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CzStateReport {
    pub curves: Vec<CzStateCurve>,
}

impl CzStateReport {
    pub fn curve(&self, m: u32) -> Option<&CzStateCurve> {
        self.curves.iter().find(|c| c.m == m)
    }

    pub fn outputs(&self) -> Outputs {
        let mut t = Table::new(
            "cz_state",
            &[
                "m",
                "power_mw",
                "power_fraction",
                "lambda",
                "coincidence_probability",
                "fidelity",
                "tangle",
                "fidelity_small_lambda",
                "tangle_small_lambda",
            ],
        );
        let mut s = Table::new(
            "cz_state_summary",
            &["m", "max_rel_deviation_fidelity", "max_rel_deviation_tangle"],
        );
        let mut fid = Vec::new();
        let mut tan = Vec::new();
        let mut mats = Vec::new();
        for c in &self.curves {
            for p in &c.points {
                t.push(vec![
                    c.m.to_string(),
                    num(p.power_mw),
                    num(p.power_fraction),
                    num(p.lambda),
                    num(p.coincidence_probability),
                    num(p.fidelity),
                    num(p.tangle),
                    num(p.fidelity_small_lambda),
                    num(p.tangle_small_lambda),
                ]);
                mats.push(json!({
                    "m": c.m,
                    "power_mw": p.power_mw,
                    "lambda": p.lambda,
                    "rho": MatrixJson::from_matrix(&p.rho),
                }));
            }
            s.push(vec![
                c.m.to_string(),
                num(c.max_rel_deviation_fidelity),
                num(c.max_rel_deviation_tangle),
            ]);
            fid.push(Series {
                label: format!("fidelity m={}", c.m),
                points: c.points.iter().map(|p| (p.power_mw, p.fidelity)).collect(),
            });
            tan.push(Series {
                label: format!("tangle m={}", c.m),
                points: c.points.iter().map(|p| (p.power_mw, p.tangle)).collect(),
            });
        }
        fid.extend(tan);
        Outputs {
            tables: vec![t, s],
            json: vec![("cz_state_rho".into(), serde_json::Value::Array(mats))],
            charts: vec![Chart {
                name: "cz_state".into(),
                title: "CZ output state from |DD>".into(),
                x_label: "average pump power (mW)".into(),
                y_label: "fidelity / tangle".into(),
                series: fid,
            }],
        }
    }
}

fn point_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Maximum-likelihood reconstruction of the gate output for one
/// preparation, dependent source.
fn simulate_output(
    cfg: &ExperimentConfig,
    setup: &GateSetup,
    lambda: f64,
    max_pairs: Option<usize>,
    prep: (Pol, Pol),
    seed: u64,
    target: Option<&CMatrix<f64>>,
) -> RunResult<(TomographyResult<f64>, f64)> {
    let kind = SourceKind::Dependent;
    let state = checked_state(kind, lambda, cfg.run.truncation, cfg.run.leakage_limit, max_pairs)?;
    let probs = setup.tomography_probabilities(kind, &state, prep, cfg.distinguishability.overlap)?;
    let coincidence: f64 = spdcmux::tomography::MeasurementSet::<f64>::overcomplete()
        .settings
        .iter()
        .zip(&probs)
        .filter(|((a, b), _)| a.basis() == 0 && b.basis() == 0)
        .map(|(_, p)| p)
        .sum();
    let r = reconstruct(&probs, cfg.tomography.counts_per_setting, seed, target)?;
    Ok((r, coincidence))
}

/// Fidelity with `(|HD⟩ + |VA⟩)/√2` and tangle of the gate output for a
/// `|DD⟩` input, dependent source.
pub fn run_cz_state(cfg: &ExperimentConfig) -> RunResult<CzStateReport> {
    cfg.validate()?;
    require_positive_grid(&cfg.scan, "scan.min", "post-selected state")?;
    let setup = GateSetup::from_config(cfg)?;
    let target = hd_va();
    let jobs = jobs(cfg, &cfg.scan);
    let points = pool_map(cfg.run.workers, jobs.len(), |i| {
        let (m, v) = jobs[i];
        let (lambda, power_mw) = cfg.grid_point(&cfg.scan, v, m);
        let seed = point_seed(cfg.run.seed, i);
        let (full, coincidence_probability) = simulate_output(cfg, &setup, lambda, None, (Pol::D, Pol::D), seed, Some(&target))?;
        let (approx, _) = simulate_output(cfg, &setup, lambda, Some(2), (Pol::D, Pol::D), seed, Some(&target))?;
        Ok(CzStatePoint {
            power_mw,
            power_fraction: power_mw / cfg.source.available_power_mw,
            lambda,
            coincidence_probability,
            fidelity: full.fidelity.expect("target set"),
            tangle: full.tangle,
            fidelity_small_lambda: approx.fidelity.expect("target set"),
            tangle_small_lambda: approx.tangle,
            rho: full.rho,
        })
    })?;
    let curves = cfg
        .source
        .multiplex
        .iter()
        .zip(points.chunks(cfg.scan.points))
        .map(|(&m, pts)| CzStateCurve {
            m,
            points: pts.to_vec(),
            max_rel_deviation_fidelity: small_lambda_deviation(
                pts.iter().map(|p| (p.lambda, p.fidelity, p.fidelity_small_lambda)),
            ),
            max_rel_deviation_tangle: small_lambda_deviation(pts.iter().map(|p| (p.lambda, p.tangle, p.tangle_small_lambda))),
        })
        .collect();
    Ok(CzStateReport { curves })
}

// ---------------------------------------------------------------- cz-process

#[derive(Debug, Clone, PartialEq)]
pub struct CzProcessPoint {
    pub power_mw: f64,
    pub power_fraction: f64,
    pub lambda: f64,
    pub process_fidelity: f64,
    pub process_fidelity_small_lambda: f64,
    pub chi: CMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CzProcessCurve {
    pub m: u32,
    pub points: Vec<CzProcessPoint>,
    pub max_rel_deviation_small_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CzProcessReport {
    pub curves: Vec<CzProcessCurve>,
}

impl CzProcessReport {
    pub fn curve(&self, m: u32) -> Option<&CzProcessCurve> {
        self.curves.iter().find(|c| c.m == m)
    }

    pub fn outputs(&self) -> Outputs {
        let mut t = Table::new(
            "cz_process",
            &["m", "power_mw", "power_fraction", "lambda", "process_fidelity", "process_fidelity_small_lambda"],
        );
        let mut s = Table::new("cz_process_summary", &["m", "max_rel_deviation_small_lambda"]);
        let mut series = Vec::new();
        let mut mats = Vec::new();
        for c in &self.curves {
            for p in &c.points {
                t.push(vec![
                    c.m.to_string(),
                    num(p.power_mw),
                    num(p.power_fraction),
                    num(p.lambda),
                    num(p.process_fidelity),
                    num(p.process_fidelity_small_lambda),
                ]);
                mats.push(json!({
                    "m": c.m,
                    "power_mw": p.power_mw,
                    "lambda": p.lambda,
                    "chi": MatrixJson::from_matrix(&p.chi),
                }));
            }
            s.push(vec![c.m.to_string(), num(c.max_rel_deviation_small_lambda)]);
            series.push(Series {
                label: format!("m={}", c.m),
                points: c.points.iter().map(|p| (p.power_mw, p.process_fidelity)).collect(),
            });
        }
        Outputs {
            tables: vec![t, s],
            json: vec![("cz_process_chi".into(), serde_json::Value::Array(mats))],
            charts: vec![Chart {
                name: "cz_process".into(),
                title: "CZ process fidelity".into(),
                x_label: "average pump power (mW)".into(),
                y_label: "process fidelity".into(),
                series,
            }],
        }
    }
}

/// Process tomography of the gate (16 product preparations, 36 settings
/// each) versus pump power, dependent source.
pub fn run_cz_process(cfg: &ExperimentConfig) -> RunResult<CzProcessReport> {
    cfg.validate()?;
    require_positive_grid(&cfg.scan, "scan.min", "post-selected process")?;
    let setup = GateSetup::from_config(cfg)?;
    let preps = standard_preparations();
    let prep_states = preparation_states::<f64>(&preps);
    let ideal = cz_unitary::<f64>();
    let kind = cfg.tomography.process_fidelity;
    let jobs = jobs(cfg, &cfg.scan);
    let points = pool_map(cfg.run.workers, jobs.len(), |i| {
        let (m, v) = jobs[i];
        let (lambda, power_mw) = cfg.grid_point(&cfg.scan, v, m);
        let process = |max_pairs| -> RunResult<_> {
            let outputs = preps
                .iter()
                .enumerate()
                .map(|(k, &prep)| {
                    let seed = point_seed(cfg.run.seed, i * preps.len() + k);
                    Ok(simulate_output(cfg, &setup, lambda, max_pairs, prep, seed, None)?.0.rho)
                })
                .collect::<RunResult<Vec<_>>>()?;
            Ok(process_from_outputs(&prep_states, &outputs, &ideal, kind)?)
        };
        let full = process(None)?;
        let approx = process(Some(2))?;
        Ok(CzProcessPoint {
            power_mw,
            power_fraction: power_mw / cfg.source.available_power_mw,
            lambda,
            process_fidelity: full.process_fidelity,
            process_fidelity_small_lambda: approx.process_fidelity,
            chi: full.chi,
        })
    })?;
    let curves = cfg
        .source
        .multiplex
        .iter()
        .zip(points.chunks(cfg.scan.points))
        .map(|(&m, pts)| CzProcessCurve {
            m,
            points: pts.to_vec(),
            max_rel_deviation_small_lambda: small_lambda_deviation(
                pts.iter().map(|p| (p.lambda, p.process_fidelity, p.process_fidelity_small_lambda)),
            ),
        })
        .collect();
    Ok(CzProcessReport { curves })
}

// ---------------------------------------------------------------- vis-heatmap

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatCell {
    pub efficiency: f64,
    pub m: u32,
    pub lambda: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitCheck {
    pub efficiency: f64,
    pub m: u32,
    pub lambda: f64,
    pub visibility: f64,
    pub single_pair_visibility: f64,
}

impl LimitCheck {
    pub fn deviation(&self) -> f64 {
        (self.visibility - self.single_pair_visibility).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapReport {
    /// Efficiency-major: all `m` for the first efficiency, then the next.
    pub grid: Vec<HeatCell>,
    pub efficiencies: Vec<f64>,
    pub multiplex: Vec<u32>,
    /// Fixed `m`, efficiency swept.
    pub efficiency_section: Vec<HeatCell>,
    /// Fixed efficiency, `m` swept.
    pub multiplex_section: Vec<HeatCell>,
    pub limit: LimitCheck,
}

impl HeatmapReport {
    pub fn cell(&self, ei: usize, mi: usize) -> &HeatCell {
        &self.grid[ei * self.multiplex.len() + mi]
    }

    pub fn outputs(&self) -> Outputs {
        let header = ["detector_efficiency", "multiplex_factor", "lambda", "visibility"];
        let table = |name: &str, cells: &[HeatCell]| {
            let mut t = Table::new(name, &header);
            for c in cells {
                t.push(vec![num(c.efficiency), c.m.to_string(), num(c.lambda), num(c.visibility)]);
            }
            t
        };
        let mut l = Table::new(
            "vis_heatmap_limit",
            &[
                "detector_efficiency",
                "multiplex_factor",
                "lambda",
                "visibility",
                "single_pair_visibility",
                "abs_deviation",
            ],
        );
        let lim = &self.limit;
        l.push(vec![
            num(lim.efficiency),
            lim.m.to_string(),
            num(lim.lambda),
            num(lim.visibility),
            num(lim.single_pair_visibility),
            num(lim.deviation()),
        ]);
        let series = (0..self.multiplex.len())
            .step_by(3.max(self.multiplex.len() / 4))
            .map(|mi| Series {
                label: format!("m={}", self.multiplex[mi]),
                points: (0..self.efficiencies.len())
                    .map(|ei| {
                        let c = self.cell(ei, mi);
                        (c.efficiency, c.visibility)
                    })
                    .collect(),
            })
            .collect();
        Outputs {
            tables: vec![
                table("vis_heatmap", &self.grid),
                table("vis_heatmap_efficiency", &self.efficiency_section),
                table("vis_heatmap_multiplex", &self.multiplex_section),
                l,
            ],
            json: vec![],
            charts: vec![
                Chart {
                    name: "vis_heatmap".into(),
                    title: "visibility vs detector efficiency".into(),
                    x_label: "detector efficiency".into(),
                    y_label: "visibility".into(),
                    series,
                },
                Chart {
                    name: "vis_heatmap_multiplex".into(),
                    title: format!("visibility vs m at efficiency {}", lim.efficiency),
                    x_label: "multiplexing factor m".into(),
                    y_label: "visibility".into(),
                    series: vec![Series {
                        label: format!("eta={}", lim.efficiency),
                        points: self.multiplex_section.iter().map(|c| (c.m as f64, c.visibility)).collect(),
                    }],
                },
            ],
        }
    }
}

fn heralded_visibility(cfg: &ExperimentConfig, setup: &GateSetup, eta: f64, m: u32) -> RunResult<HeatCell> {
    let lambda = cfg.source.calib_k * (cfg.source.available_power_mw / m as f64).sqrt();
    let kind = SourceKind::Independent;
    let state = checked_state(kind, lambda, cfg.run.truncation, cfg.run.leakage_limit, None)?;
    let (d, i) = setup.clone().with_efficiency(eta).hom_coincidences(kind, &state)?;
    Ok(HeatCell {
        efficiency: eta,
        m,
        lambda,
        visibility: hom_visibility(d, i)?.visibility,
    })
}

/// Heralded-source visibility over detector efficiency × multiplexing
/// factor at the full available pump power.
pub fn run_vis_heatmap(cfg: &ExperimentConfig) -> RunResult<HeatmapReport> {
    cfg.validate()?;
    let h = &cfg.heatmap;
    let setup = GateSetup::from_config(cfg)?;
    let efficiencies = ScanConfig {
        parameter: crate::config::ScanParameter::Lambda,
        min: h.efficiency_min,
        max: h.efficiency_max,
        points: h.efficiency_points,
    }
    .values();
    let multiplex: Vec<u32> = (1..=h.multiplex_max).collect();
    let cells: Vec<(f64, u32)> = efficiencies
        .iter()
        .flat_map(|&e| multiplex.iter().map(move |&m| (e, m)))
        .collect();
    let grid = pool_map(cfg.run.workers, cells.len(), |i| {
        heralded_visibility(cfg, &setup, cells[i].0, cells[i].1)
    })?;
    let efficiency_section = pool_map(cfg.run.workers, efficiencies.len(), |i| {
        heralded_visibility(cfg, &setup, efficiencies[i], h.cross_section_multiplex)
    })?;
    let multiplex_section = pool_map(cfg.run.workers, multiplex.len(), |i| {
        heralded_visibility(cfg, &setup, h.cross_section_efficiency, multiplex[i])
    })?;
    let far = heralded_visibility(cfg, &setup, h.cross_section_efficiency, h.limit_multiplex)?;
    Ok(HeatmapReport {
        grid,
        efficiencies,
        multiplex,
        efficiency_section,
        multiplex_section,
        limit: LimitCheck {
            efficiency: far.efficiency,
            m: far.m,
            lambda: far.lambda,
            visibility: far.visibility,
            single_pair_visibility: single_pair_visibility(cfg.ppbs.eta_v),
        },
    })
}

// ---------------------------------------------------------------- tomo-fit

#[derive(Debug, Clone, PartialEq)]
pub struct TomoFitReport {
    pub result: TomographyResult<f64>,
}

impl TomoFitReport {
    pub fn outputs(&self) -> Outputs {
        let r = &self.result;
        Outputs {
            tables: vec![],
            json: vec![(
                "tomo_fit".into(),
                json!({
                    "rho": MatrixJson::from_matrix(&r.rho),
                    "fidelity": r.fidelity,
                    "tangle": r.tangle,
                    "log_likelihood": r.log_likelihood,
                    "iterations": r.iterations,
                }),
            )],
            charts: vec![],
        }
    }
}

/// Maximum-likelihood fit of a counts table (CSV with columns
/// `setting_qubit1, setting_qubit2, counts`).
pub fn run_tomo_fit(counts_csv: &[u8], target: Option<CMatrix<f64>>) -> RunResult<TomoFitReport> {
    let set = parse_counts_csv(counts_csv)?;
    let opts = match target {
        Some(t) => MleOptions::with_target(t),
        None => MleOptions::default(),
    };
    let result = spdcmux::tomography::mle_reconstruct(&set, &opts)?;
    Ok(TomoFitReport { result })
}

/// Target state for `tomo-fit` by name.
pub fn named_target(name: &str) -> Option<CMatrix<f64>> {
    match name {
        "hd-va" => Some(hd_va()),
        "phi-plus" => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let ket = [s, 0.0, 0.0, s].map(|x| num_complex::Complex::new(x, 0.0));
            Some(spdcmux::linalg::ket_to_density(&ket))
        }
        _ => None,
    }
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq)]
pub struct RepRateCheck {
    pub m: u32,
    pub pulse_rate_hz: f64,
    pub max_rate_hz: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageCheck {
    pub scan: &'static str,
    pub source: SourceKind,
    pub lambda: f64,
    pub truncation: usize,
    pub leakage: f64,
    pub limit: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rep_rate: Vec<RepRateCheck>,
    pub leakage: Vec<LeakageCheck>,
    /// Fidelity of a fixed-truncation cutoff against one step finer, on the
    /// largest-λ dependent state of the main scan.
    pub truncation_convergence: f64,
}

impl ValidationReport {
    pub fn rep_rate_ok(&self) -> bool {
        self.rep_rate.iter().all(|c| c.ok)
    }

    pub fn leakage_ok(&self) -> bool {
        self.leakage.iter().all(|c| c.ok)
    }

    pub fn outputs(&self) -> Outputs {
        let mut r = Table::new("validate_rep_rate", &["m", "pulse_rate_hz", "max_rate_hz", "ok"]);
        for c in &self.rep_rate {
            r.push(vec![c.m.to_string(), num(c.pulse_rate_hz), num(c.max_rate_hz), c.ok.to_string()]);
        }
        let mut l = Table::new(
            "validate_leakage",
            &["scan", "source", "lambda", "truncation", "leakage", "limit", "ok"],
        );
        for c in &self.leakage {
            l.push(vec![
                c.scan.into(),
                c.source.label().into(),
                num(c.lambda),
                c.truncation.to_string(),
                num(c.leakage),
                num(c.limit),
                c.ok.to_string(),
            ]);
        }
        Outputs {
            tables: vec![r, l],
            json: vec![],
            charts: vec![],
        }
    }
}

/// Repetition-rate ceiling for every configured `m`, and truncation leakage
/// at the largest per-pulse λ of each scan.
pub fn run_validate(cfg: &ExperimentConfig) -> RunResult<ValidationReport> {
    cfg.validate()?;
    let window = CoincidenceWindow::new(cfg.source.coincidence_window_s)?;
    let rep_rate = cfg
        .source
        .multiplex
        .iter()
        .map(|&m| {
            let p = SourceParams::new(0.0, cfg.source.rep_rate_hz, m)?;
            let v = validate_rep_rate(&p, &window);
            Ok(RepRateCheck {
                m,
                pulse_rate_hz: v.pulse_rate_hz,
                max_rate_hz: v.max_rate_hz,
                ok: v.ok,
            })
        })
        .collect::<RunResult<Vec<_>>>()?;

    let m_min = *cfg.source.multiplex.iter().min().expect("validated non-empty");
    let scan_lambda = cfg.grid_point(&cfg.scan, cfg.scan.max, m_min).0;
    let heat_lambda = cfg.source.calib_k * cfg.source.available_power_mw.sqrt();
    let limit = cfg.run.leakage_limit;
    let mut leakage = Vec::new();
    for (scan, kind, lambda) in [
        ("scan", SourceKind::Dependent, scan_lambda),
        ("scan", SourceKind::Independent, scan_lambda),
        ("heatmap", SourceKind::Independent, heat_lambda),
    ] {
        if lambda >= 1.0 {
            return Err(spdcmux::Error::OutOfRange { name: "lambda", value: lambda }.into());
        }
        let t = pick_truncation(kind, lambda, cfg.run.truncation, limit);
        let state = crate::model::source_state(kind, lambda, t, None)?;
        let leak = state.leakage();
        leakage.push(LeakageCheck {
            scan,
            source: kind,
            lambda,
            truncation: t,
            leakage: leak,
            limit,
            ok: leak <= limit,
        });
    }

    let t = pick_truncation(SourceKind::Dependent, scan_lambda, cfg.run.truncation, limit);
    let setup = GateSetup::from_config(cfg)?;
    let probe = |trunc: usize| -> RunResult<CMatrix<f64>> {
        let s = crate::model::source_state(SourceKind::Dependent, scan_lambda, trunc, None)?;
        let p = setup.tomography_probabilities(SourceKind::Dependent, &s, (Pol::D, Pol::D), 1.0)?;
        Ok(reconstruct(&p, None, 0, None)?.rho)
    };
    let truncation_convergence = fidelity(&probe(t)?, &probe(t + 1)?)?;
    Ok(ValidationReport {
        rep_rate,
        leakage,
        truncation_convergence,
    })
}
