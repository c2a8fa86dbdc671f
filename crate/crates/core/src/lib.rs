//! Simulation toolkit for pulsed SPDC photon-pair sources under temporal
//! multiplexing: truncated Fock-space states, linear optics, bucket
//! detection and two-qubit tomography.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

// `!(x > 0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod optics;
pub mod scalar;
pub mod spdc;
pub mod tomography;

pub use error::{Error, Result};
pub use scalar::Real;

pub type CMatrixF64 = linalg::CMatrix<f64>;
pub type FockStateF64 = fock::FockState<f64>;
pub type ModeUnitaryF64 = fock::ModeUnitary<f64>;
pub type SourceParamsF64 = spdc::SourceParams<f64>;
pub type DualPassParamsF64 = spdc::DualPassParams<f64>;
pub type CircuitF64 = optics::Circuit<f64>;
pub type PpbsSpecF64 = optics::PpbsSpec<f64>;
pub type DetectorParamsF64 = detection::DetectorParams<f64>;
pub type ClickModelF64 = detection::network::ClickModel<f64>;
pub type MeasurementSetF64 = tomography::MeasurementSet<f64>;
pub type TomographyResultF64 = tomography::TomographyResult<f64>;
pub type ProcessResultF64 = tomography::ProcessResult<f64>;

pub type FockStateF32 = fock::FockState<f32>;
pub type SourceParamsF32 = spdc::SourceParams<f32>;
