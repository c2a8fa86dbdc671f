//! Parameter scans over the `spdcmux` models: multi-photon ratios, gate
//! visibilities, entangled-state and process fidelities, and the
//! efficiency × multiplexing visibility map.
//!
//! Runners are pure functions of an [`ExperimentConfig`]; grid points are
//! evaluated on a worker pool and returned in grid order, so output files
//! are byte-identical for identical configurations.

// `!(x > 0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod model;
pub mod output;
pub mod runners;
pub mod svg;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Overrides};
pub use error::RunError;
pub use output::{emit_outputs, Outputs, Table};
pub use runners::{
    run_cz_process, run_cz_state, run_hom_scan, run_pn_ratio, run_tomo_fit, run_validate, run_vis_heatmap,
};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "SPDCMUX_OUT_DIR";
