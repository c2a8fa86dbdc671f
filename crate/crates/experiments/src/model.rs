//! Source, gate and detector layouts behind the scans.
//!
//! Gate inputs are the spatial modes `a` and `b` (polarization sub-modes
//! `a.H`, `a.V`, ...). Pairs are emitted horizontally polarized and rotated
//! by waveplates. The dependent source sends both photons of one pair into
//! `a` and `b`; the independent source sends one photon of each of two pairs
//! and heralds it on `h1` / `h2`.

use spdcmux::detection::network::{ClickModel, Detector, Interference};
use spdcmux::fock::FockState;
use spdcmux::linalg::CMatrix;
use spdcmux::optics::{h_mode, v_mode, waveplate, Circuit, CzGate, LossChannel, PhaseConvention, PpbsSpec};
use spdcmux::spdc::{generate_dual_pass_state, generate_spdc_state, truncation_for, DualPassParams, SourceParams};
use spdcmux::tomography::{mle_reconstruct, MeasurementSet, MleOptions, Pol};
use spdcmux::{Error, Result};

use crate::config::ExperimentConfig;

pub const ARM_A: &str = "a";
pub const ARM_B: &str = "b";
pub const HERALD_A: &str = "h1";
pub const HERALD_B: &str = "h2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// One pair feeds both gate inputs.
    Dependent,
    /// Two pairs, one photon each into the gate, partners heralded.
    Independent,
}

impl SourceKind {
    pub fn label(self) -> &'static str {
        match self {
            SourceKind::Dependent => "dependent",
            SourceKind::Independent => "independent",
        }
    }

    /// Fewest pairs that can produce a gate event.
    pub fn minimal_pairs(self) -> usize {
        match self {
            SourceKind::Dependent => 1,
            SourceKind::Independent => 2,
        }
    }

    /// Photons in different groups come from different pairs or pulses and
    /// only interfere through the overlap `γ`.
    pub fn groups(self) -> Vec<Vec<String>> {
        match self {
            SourceKind::Dependent => vec![
                vec![h_mode(ARM_A), v_mode(ARM_A)],
                vec![h_mode(ARM_B), v_mode(ARM_B)],
            ],
            SourceKind::Independent => vec![
                vec![h_mode(ARM_A), v_mode(ARM_A), HERALD_A.into()],
                vec![h_mode(ARM_B), v_mode(ARM_B), HERALD_B.into()],
            ],
        }
    }
}

/// Every mode the networks below touch.
pub fn network_modes() -> Vec<String> {
    vec![h_mode(ARM_A), v_mode(ARM_A), h_mode(ARM_B), v_mode(ARM_B), HERALD_A.into(), HERALD_B.into()]
}

/// Truncated source state at per-pulse `lambda`. With `max_pairs` set, all
/// components with more pairs are dropped (used for the small-λ column).
pub fn source_state(
    kind: SourceKind,
    lambda: f64,
    truncation: usize,
    max_pairs: Option<usize>,
) -> Result<FockState<f64>> {
    let p = SourceParams::new(lambda, 1.0, 1)?;
    let state = match kind {
        SourceKind::Dependent => generate_spdc_state(&p, &h_mode(ARM_A), &h_mode(ARM_B), truncation)?,
        SourceKind::Independent => {
            let dual = DualPassParams::new(p, p)?;
            let labels = [h_mode(ARM_A), HERALD_A.to_string(), h_mode(ARM_B), HERALD_B.to_string()];
            generate_dual_pass_state(&dual, [&labels[0], &labels[1], &labels[2], &labels[3]], truncation)?
        }
    };
    match max_pairs {
        None => Ok(state),
        Some(n) => truncate_pairs(&state, n),
    }
}

fn truncate_pairs(state: &FockState<f64>, max_pairs: usize) -> Result<FockState<f64>> {
    let reg = state.registry().clone();
    let mut amps = state
        .amplitudes()
        .ok_or_else(|| Error::NotPhysical("expected a pure source state".into()))?
        .clone();
    for (i, a) in amps.iter_mut().enumerate() {
        let photons: usize = reg.occupations(i).iter().sum();
        if photons > 2 * max_pairs {
            *a = num_complex::Complex::new(0.0, 0.0);
        }
    }
    FockState::from_amplitudes(reg, amps)
}

/// Adaptive cutoffs never go below this, so the full state always carries
/// more pairs than the small-λ approximation.
pub const MIN_ADAPTIVE_TRUNCATION: usize = 3;

/// Cutoff per mode: the fixed override, or the smallest one whose leakage
/// stays below `limit`.
pub fn pick_truncation(kind: SourceKind, lambda: f64, fixed: Option<usize>, limit: f64) -> usize {
    fixed.unwrap_or_else(|| {
        let t = match kind {
            SourceKind::Dependent => truncation_for(lambda, limit),
            // two independent pair sources each leak
            SourceKind::Independent => truncation_for(lambda, limit / 2.0),
        };
        t.max(MIN_ADAPTIVE_TRUNCATION)
    })
}

/// Source state that has passed the leakage check.
pub fn checked_state(
    kind: SourceKind,
    lambda: f64,
    fixed: Option<usize>,
    limit: f64,
    max_pairs: Option<usize>,
) -> Result<FockState<f64>> {
    let t = pick_truncation(kind, lambda, fixed, limit);
    let full = source_state(kind, lambda, t, None)?;
    full.check_leakage(limit)?;
    match max_pairs {
        None => Ok(full),
        Some(n) => truncate_pairs(&full, n),
    }
}

/// Gate and detection parameters of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct GateSetup {
    pub ppbs: PpbsSpec<f64>,
    pub compensation: f64,
    pub convention: PhaseConvention,
    pub detector_efficiency: f64,
    /// Transmission of each gate input arm.
    pub signal_transmission: f64,
    pub herald_transmission: f64,
}

impl GateSetup {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            ppbs: PpbsSpec::new(cfg.ppbs.eta_h, cfg.ppbs.eta_v)?,
            compensation: cfg.ppbs.compensation,
            convention: cfg.ppbs.convention,
            detector_efficiency: cfg.detectors.efficiency,
            signal_transmission: 1.0 - cfg.loss.signal,
            herald_transmission: 1.0 - cfg.loss.herald,
        })
    }

    /// Ideal PPBS, lossless arms, unit-efficiency detectors.
    pub fn ideal() -> Self {
        Self {
            ppbs: PpbsSpec::ideal(),
            compensation: 1.0 / 3.0,
            convention: PhaseConvention::Symmetric,
            detector_efficiency: 1.0,
            signal_transmission: 1.0,
            herald_transmission: 1.0,
        }
    }

    pub fn with_efficiency(mut self, eta: f64) -> Self {
        self.detector_efficiency = eta;
        self
    }

    /// Preparation waveplates, arm loss and the CZ gate.
    pub fn circuit(&self, prep: (Pol, Pol)) -> Result<Circuit<f64>> {
        let mut c = Circuit::new();
        for (pol, arm) in [(prep.0, ARM_A), (prep.1, ARM_B)] {
            if let Some(spec) = pol.preparation() {
                c.push_unitary(waveplate(&spec, arm)?);
            }
        }
        for arm in [ARM_A, ARM_B] {
            c.push_loss(LossChannel::new(&h_mode(arm), self.signal_transmission)?);
            c.push_loss(LossChannel::new(&v_mode(arm), self.signal_transmission)?);
        }
        for h in [HERALD_A, HERALD_B] {
            c.push_loss(LossChannel::new(h, self.herald_transmission)?);
        }
        let mut gate = CzGate::new(self.ppbs, (ARM_A, ARM_B)).with_convention(self.convention);
        gate.compensation = self.compensation;
        c.extend(&gate.circuit()?);
        Ok(c)
    }

    /// Gate-output coincidence (plus both heralds for the independent
    /// source) with `|VV⟩` at the inputs: `(C_dist, C_indist)`.
    pub fn hom_coincidences(&self, kind: SourceKind, state: &FockState<f64>) -> Result<(f64, f64)> {
        let eta = self.detector_efficiency;
        let mut detectors = vec![Detector::spatial_bucket("c", ARM_A, eta), Detector::spatial_bucket("d", ARM_B, eta)];
        if kind == SourceKind::Independent {
            detectors.push(Detector::bucket(HERALD_A, &[HERALD_A], eta));
            detectors.push(Detector::bucket(HERALD_B, &[HERALD_B], eta));
        }
        let model = ClickModel::new(&self.circuit((Pol::V, Pol::V))?, &network_modes(), &detectors)?;
        let click: Vec<usize> = (0..detectors.len()).collect();
        let dist = model.event_probability(state, &click, &[], &Interference::Groups(kind.groups()))?;
        let indist = model.event_probability(state, &click, &[], &Interference::Full)?;
        Ok((dist, indist))
    }

    /// Coincidence probabilities of the 36 polarization settings of
    /// [`MeasurementSet::overcomplete`] on the gate outputs, for the given
    /// input preparation; overlap `gamma` between photons of different pairs.
    pub fn tomography_probabilities(
        &self,
        kind: SourceKind,
        state: &FockState<f64>,
        prep: (Pol, Pol),
        gamma: f64,
    ) -> Result<Vec<f64>> {
        let eta = self.detector_efficiency;
        let mut detectors = Vec::with_capacity(14);
        for p in Pol::ALL {
            detectors.push(Detector::polarization(&format!("c.{}", p.label()), ARM_A, p.ket(), eta));
        }
        for p in Pol::ALL {
            detectors.push(Detector::polarization(&format!("d.{}", p.label()), ARM_B, p.ket(), eta));
        }
        if kind == SourceKind::Independent {
            detectors.push(Detector::bucket(HERALD_A, &[HERALD_A], eta));
            detectors.push(Detector::bucket(HERALD_B, &[HERALD_B], eta));
        }
        let model = ClickModel::new(&self.circuit(prep)?, &network_modes(), &detectors)?;
        let groups = kind.groups();
        MeasurementSet::<f64>::overcomplete()
            .settings
            .iter()
            .map(|&(p1, p2)| {
                let i1 = Pol::ALL.iter().position(|&p| p == p1).unwrap();
                let i2 = 6 + Pol::ALL.iter().position(|&p| p == p2).unwrap();
                let mut click = vec![i1, i2];
                if kind == SourceKind::Independent {
                    click.extend([12, 13]);
                }
                model.event_probability_partial(state, &click, &[], &groups, gamma)
            })
            .collect()
    }
}

/// Two-qubit state at the gate output, reconstructed by maximum likelihood
/// from simulated counts (`probabilities` scaled, or Poisson-sampled when
/// `counts_per_setting` is given).
pub fn reconstruct(
    probabilities: &[f64],
    counts_per_setting: Option<f64>,
    seed: u64,
    target: Option<&CMatrix<f64>>,
) -> Result<spdcmux::tomography::TomographyResult<f64>> {
    let total: f64 = probabilities.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NoCounts);
    }
    // exact zeros come out of the inclusion-exclusion sums as ±1e-17-sized noise
    let floor = -1e-12 * total;
    if let Some(&bad) = probabilities.iter().find(|&&p| p < floor || !p.is_finite()) {
        return Err(Error::OutOfRange {
            name: "probability",
            value: bad,
        });
    }
    let probabilities: Vec<f64> = probabilities.iter().map(|p| p.max(0.0)).collect();
    let probabilities = probabilities.as_slice();
    let counts: Vec<f64> = match counts_per_setting {
        None => probabilities.iter().map(|p| p / total).collect(),
        Some(n) => {
            let scale = n * probabilities.len() as f64 / total;
            spdcmux::detection::sample_poisson_counts(probabilities, scale, seed)?
                .into_iter()
                .map(|c| c as f64)
                .collect()
        }
    };
    let set = MeasurementSet::overcomplete().with_counts(counts)?;
    let opts = match target {
        Some(t) => MleOptions::with_target(t.clone()),
        None => MleOptions::default(),
    };
    mle_reconstruct(&set, &opts)
}

/// Visibility of a single pair through the PPBS, `1 − (1 − 2η_V)² / (η_V² + (1 − η_V)²)`.
pub fn single_pair_visibility(eta_v: f64) -> f64 {
    let indist = (1.0 - 2.0 * eta_v).powi(2);
    let dist = eta_v * eta_v + (1.0 - eta_v).powi(2);
    1.0 - indist / dist
}

/// `|HD⟩ + |VA⟩` over √2, the ideal output for `|DD⟩`.
pub fn hd_va() -> CMatrix<f64> {
    let h = 0.5;
    let ket = [h, h, h, -h].map(|x| num_complex::Complex::new(x, 0.0));
    spdcmux::linalg::ket_to_density(&ket)
}
