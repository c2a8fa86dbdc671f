//! Experiment configuration: a TOML document with fixed, typed sections.
//!
//! See `configs/default.toml` for every key with its default value.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spdcmux::optics::PhaseConvention;
use spdcmux::spdc::DEFAULT_CALIB_K;
use spdcmux::tomography::ProcessFidelityKind;
use thiserror::Error;

/// The shipped default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("{}{message}", line_prefix(*line, *column))]
    Syntax {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("{}`{field}`: {message}", line_prefix(*line, None))]
    Invalid {
        field: String,
        line: Option<usize>,
        message: String,
    },
}

fn line_prefix(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!("line {l}, column {c}: "),
        (Some(l), None) => format!("line {l}: "),
        _ => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub detectors: DetectorConfig,
    pub ppbs: PpbsConfig,
    pub loss: LossConfig,
    #[serde(default)]
    pub distinguishability: DistinguishabilityConfig,
    /// Power (or λ) grid shared by `hom-scan`, `cz-state` and `cz-process`.
    pub scan: ScanConfig,
    #[serde(default)]
    pub pn_ratio: PnRatioConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    #[serde(default)]
    pub tomography: TomographyConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Unmultiplexed pump repetition rate `R`.
    pub rep_rate_hz: f64,
    /// Multiplexing factors to compare; each run produces one curve per entry.
    pub multiplex: Vec<u32>,
    /// `λ = calib_k · √(P / m)` with `P` in mW.
    #[serde(default = "default_calib_k")]
    pub calib_k: f64,
    /// Reference power for the normalized-power column and the heatmap.
    #[serde(default = "default_available_power")]
    pub available_power_mw: f64,
    #[serde(default = "default_window")]
    pub coincidence_window_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    #[serde(default)]
    pub number_resolving: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpbsConfig {
    pub eta_h: f64,
    pub eta_v: f64,
    /// Intensity transmission of the H attenuators in front of the PPBS.
    #[serde(default = "default_compensation")]
    pub compensation: f64,
    #[serde(default)]
    pub convention: PhaseConvention,
}

/// Fraction of photons lost between source and detector, per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub signal: f64,
    pub herald: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistinguishabilityConfig {
    /// Mode overlap of photons from different pairs in `cz-state` and
    /// `cz-process` (1 = indistinguishable).
    pub overlap: f64,
}

impl Default for DistinguishabilityConfig {
    fn default() -> Self {
        Self { overlap: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    /// Average pump power in mW; per-pulse λ then depends on `m`.
    PowerMw,
    /// Per-pulse λ; the power axis then depends on `m`.
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub parameter: ScanParameter,
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl ScanConfig {
    /// Evenly spaced grid, endpoints included.
    pub fn values(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    self.max
                } else {
                    self.min + (self.max - self.min) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnRatioConfig {
    #[serde(default = "default_pn_scan")]
    pub scan: ScanConfig,
    /// Depth of the beamsplitter tree in front of each arm's detectors.
    #[serde(default = "default_depth")]
    pub depth: u32,
    /// Fold `loss.signal` into the detection efficiency.
    #[serde(default)]
    pub include_loss: bool,
}

impl Default for PnRatioConfig {
    fn default() -> Self {
        Self {
            scan: default_pn_scan(),
            depth: default_depth(),
            include_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    pub efficiency_min: f64,
    pub efficiency_max: f64,
    pub efficiency_points: usize,
    /// Grid covers `m = 1..=multiplex_max`.
    pub multiplex_max: u32,
    /// `m` of the efficiency cross-section.
    pub cross_section_multiplex: u32,
    /// Efficiency of the multiplexing cross-section and of the large-m limit.
    pub cross_section_efficiency: f64,
    /// `m` used to approach the single-pair limit.
    pub limit_multiplex: u32,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            efficiency_min: 0.1,
            efficiency_max: 1.0,
            efficiency_points: 10,
            multiplex_max: 10,
            cross_section_multiplex: 2,
            cross_section_efficiency: 0.6,
            limit_multiplex: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    /// When set, simulated tomography uses seeded Poisson counts with this
    /// mean per setting instead of exact probabilities.
    pub counts_per_setting: Option<f64>,
    pub process_fidelity: ProcessFidelityKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Fixed Fock truncation per mode; adaptive from `leakage_limit` if unset.
    pub truncation: Option<usize>,
    pub seed: u64,
    /// Worker threads; all available cores if unset.
    pub workers: Option<usize>,
    pub output_dir: String,
    pub leakage_limit: f64,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            truncation: None,
            seed: 0,
            workers: None,
            output_dir: "out".into(),
            leakage_limit: 1e-6,
            svg: false,
        }
    }
}

fn default_calib_k() -> f64 {
    DEFAULT_CALIB_K
}
fn default_available_power() -> f64 {
    700.0
}
fn default_window() -> f64 {
    3e-9
}
fn default_compensation() -> f64 {
    1.0 / 3.0
}
fn default_depth() -> u32 {
    1
}
fn default_pn_scan() -> ScanConfig {
    ScanConfig {
        parameter: ScanParameter::Lambda,
        min: 0.02,
        max: 0.1,
        points: 9,
    }
}

/// Command-line overrides, applied after parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub truncation: Option<usize>,
    pub workers: Option<usize>,
    pub output_dir: Option<String>,
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn default_config() -> Self {
        parse_config(DEFAULT_CONFIG).expect("shipped default config is valid")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(t) = o.truncation {
            self.run.truncation = Some(t);
        }
        if let Some(w) = o.workers {
            self.run.workers = Some(w);
        }
        if let Some(d) = &o.output_dir {
            self.run.output_dir = d.clone();
        }
        self.run.svg |= o.svg;
    }

    /// SHA-256 of the canonical JSON form, ignoring settings that cannot
    /// change results (workers, output directory, SVG switch).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.workers = None;
        c.run.output_dir = String::new();
        c.run.svg = false;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_in(None)
    }

    fn validate_in(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let bad = |field: &str, message: String| ConfigError::Invalid {
            field: field.to_string(),
            line: text.and_then(|t| locate(t, field)),
            message,
        };
        let s = &self.source;
        if !(s.rep_rate_hz.is_finite() && s.rep_rate_hz > 0.0) {
            return Err(bad("source.rep_rate_hz", format!("must be positive, got {}", s.rep_rate_hz)));
        }
        if s.multiplex.is_empty() {
            return Err(bad("source.multiplex", "needs at least one factor".into()));
        }
        for (i, &m) in s.multiplex.iter().enumerate() {
            if m == 0 {
                return Err(bad("source.multiplex", "factors must be ≥ 1".into()));
            }
            if s.multiplex[..i].contains(&m) {
                return Err(bad("source.multiplex", format!("factor {m} listed twice")));
            }
        }
        positive(s.calib_k).map_err(|m| bad("source.calib_k", m))?;
        positive(s.available_power_mw).map_err(|m| bad("source.available_power_mw", m))?;
        positive(s.coincidence_window_s).map_err(|m| bad("source.coincidence_window_s", m))?;

        let e = self.detectors.efficiency;
        if !(e > 0.0 && e <= 1.0) {
            return Err(bad("detectors.efficiency", format!("must lie in (0, 1], got {e}")));
        }
        unit(self.ppbs.eta_h).map_err(|m| bad("ppbs.eta_h", m))?;
        unit(self.ppbs.eta_v).map_err(|m| bad("ppbs.eta_v", m))?;
        let c = self.ppbs.compensation;
        if !(c > 0.0 && c <= 1.0) {
            return Err(bad("ppbs.compensation", format!("must lie in (0, 1], got {c}")));
        }
        for (name, v) in [("loss.signal", self.loss.signal), ("loss.herald", self.loss.herald)] {
            if !(0.0..1.0).contains(&v) {
                return Err(bad(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        unit(self.distinguishability.overlap).map_err(|m| bad("distinguishability.overlap", m))?;
        check_scan(&self.scan, "scan", &bad)?;
        check_scan(&self.pn_ratio.scan, "pn_ratio.scan", &bad)?;
        if self.pn_ratio.depth == 0 && !self.detectors.number_resolving {
            return Err(bad("pn_ratio.depth", "bucket detection needs a tree of depth ≥ 1".into()));
        }
        if self.pn_ratio.depth > 8 {
            return Err(bad("pn_ratio.depth", format!("at most 8, got {}", self.pn_ratio.depth)));
        }

        let h = &self.heatmap;
        if !(h.efficiency_min > 0.0 && h.efficiency_min < h.efficiency_max && h.efficiency_max <= 1.0) {
            return Err(bad(
                "heatmap.efficiency_min",
                format!("need 0 < min < max ≤ 1, got [{}, {}]", h.efficiency_min, h.efficiency_max),
            ));
        }
        if h.efficiency_points < 2 {
            return Err(bad("heatmap.efficiency_points", format!("grid needs ≥ 2 points, got {}", h.efficiency_points)));
        }
        if h.multiplex_max < 2 {
            return Err(bad("heatmap.multiplex_max", format!("must be ≥ 2, got {}", h.multiplex_max)));
        }
        if h.cross_section_multiplex == 0 || h.cross_section_multiplex > h.multiplex_max {
            return Err(bad("heatmap.cross_section_multiplex", "must lie in 1..=multiplex_max".into()));
        }
        let ce = h.cross_section_efficiency;
        if !(ce > 0.0 && ce <= 1.0) {
            return Err(bad("heatmap.cross_section_efficiency", format!("must lie in (0, 1], got {ce}")));
        }
        if h.limit_multiplex == 0 {
            return Err(bad("heatmap.limit_multiplex", "must be ≥ 1".into()));
        }
        if let Some(n) = self.tomography.counts_per_setting {
            positive(n).map_err(|m| bad("tomography.counts_per_setting", m))?;
        }

        let r = &self.run;
        if let Some(t) = r.truncation {
            if t < 2 {
                return Err(bad("run.truncation", format!("must be ≥ 2, got {t}")));
            }
        }
        if r.workers == Some(0) {
            return Err(bad("run.workers", "must be ≥ 1".into()));
        }
        if !(r.leakage_limit > 0.0 && r.leakage_limit < 1.0) {
            return Err(bad("run.leakage_limit", format!("must lie in (0, 1), got {}", r.leakage_limit)));
        }
        Ok(())
    }

    /// Per-pulse λ and average power of a grid value for factor `m`.
    pub fn grid_point(&self, scan: &ScanConfig, value: f64, m: u32) -> (f64, f64) {
        let k = self.source.calib_k;
        let m = m as f64;
        match scan.parameter {
            ScanParameter::PowerMw => (k * (value / m).sqrt(), value),
            ScanParameter::Lambda => (value, m * (value / k).powi(2)),
        }
    }
}

fn positive(v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn unit(v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("must lie in [0, 1], got {v}"))
    }
}

fn check_scan<F>(scan: &ScanConfig, prefix: &str, bad: &F) -> Result<(), ConfigError>
where
    F: Fn(&str, String) -> ConfigError,
{
    if scan.points < 2 {
        return Err(bad(&format!("{prefix}.points"), format!("grid needs ≥ 2 points, got {}", scan.points)));
    }
    if !(scan.min.is_finite() && scan.max.is_finite() && scan.min >= 0.0 && scan.min < scan.max) {
        return Err(bad(
            &format!("{prefix}.min"),
            format!("need 0 ≤ min < max, got [{}, {}]", scan.min, scan.max),
        ));
    }
    if scan.parameter == ScanParameter::Lambda && scan.max >= 1.0 {
        return Err(bad(&format!("{prefix}.max"), format!("λ must stay below 1, got {}", scan.max)));
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ConfigError::Syntax {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    cfg.validate_in(Some(text))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Line of `section.key` in a TOML document (plain `[section]` tables only).
fn locate(text: &str, field: &str) -> Option<usize> {
    let (section, key) = field.rsplit_once('.')?;
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
