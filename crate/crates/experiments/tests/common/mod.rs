#![allow(dead_code)]

use spdcmux_experiments::config::{ScanConfig, ScanParameter};
use spdcmux_experiments::ExperimentConfig;

pub fn default_cfg() -> ExperimentConfig {
    ExperimentConfig::default_config()
}

/// Ideal PPBS, lossless arms, unit-efficiency detectors.
pub fn ideal_cfg() -> ExperimentConfig {
    let mut c = default_cfg();
    c.ppbs.eta_h = 0.0;
    c.ppbs.eta_v = 2.0 / 3.0;
    c.ppbs.compensation = 1.0 / 3.0;
    c.loss.signal = 0.0;
    c.loss.herald = 0.0;
    c.detectors.efficiency = 1.0;
    c
}

pub fn lambda_scan(min: f64, max: f64, points: usize) -> ScanConfig {
    ScanConfig {
        parameter: ScanParameter::Lambda,
        min,
        max,
        points,
    }
}

pub fn power_scan(min: f64, max: f64, points: usize) -> ScanConfig {
    ScanConfig {
        parameter: ScanParameter::PowerMw,
        min,
        max,
        points,
    }
}

pub fn non_increasing(v: &[f64], slack: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + slack)
}
