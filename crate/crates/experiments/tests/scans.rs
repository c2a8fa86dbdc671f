mod common;

use approx::assert_relative_eq;
use common::*;
use spdcmux::detection::{four_two_ratio, DetectorParams};
use spdcmux::optics::PhaseConvention;
use spdcmux::spdc::SourceParams;
use spdcmux::tomography::{concurrence, fidelity};
use spdcmux_experiments::model::{hd_va, single_pair_visibility, SourceKind};
use spdcmux_experiments::output::render_csv;
use spdcmux_experiments::runners::small_lambda_deviation;
use spdcmux_experiments::{run_cz_process, run_cz_state, run_hom_scan, run_pn_ratio, run_validate, run_vis_heatmap};

const BOTH: [SourceKind; 2] = [SourceKind::Dependent, SourceKind::Independent];

#[test]
fn pn_ratio_vanishes_without_pump() {
    let mut cfg = default_cfg();
    cfg.pn_ratio.scan = power_scan(0.0, 100.0, 5);
    let r = run_pn_ratio(&cfg).unwrap();
    for c in &r.curves {
        assert_eq!(c.points[0].ratio, 0.0);
        assert!(c.points[1..].iter().all(|p| p.ratio > 0.0));
    }
}

#[test]
fn pn_ratio_matches_photon_number_series() {
    // adaptive cutoffs are only as tight as the leakage limit allows; a cutoff
    // of 6 drops terms of relative size λ^10
    for (truncation, tol) in [(None, 1e-5), (Some(6), 1e-8)] {
        let mut cfg = default_cfg();
        cfg.run.truncation = truncation;
        cfg.detectors.efficiency = 0.45;
        cfg.pn_ratio.depth = 2;
        let r = run_pn_ratio(&cfg).unwrap();
        let det = DetectorParams::bucket(0.45).unwrap().with_split_depth(2);
        for c in &r.curves {
            for p in &c.points {
                let p0 = SourceParams::new(p.lambda, 76e6, c.m).unwrap();
                let oracle = four_two_ratio(&p0, &det, 2).unwrap();
                assert_relative_eq!(p.ratio, oracle, max_relative = tol);
            }
        }
    }
}

#[test]
fn pn_ratio_halves_with_doubled_rate() {
    let mut cfg = default_cfg();
    cfg.pn_ratio.scan = power_scan(10.0, 350.0, 6);
    let r = run_pn_ratio(&cfg).unwrap();
    let (c1, c2) = (r.curve(1).unwrap(), r.curve(2).unwrap());
    for (a, b) in c1.points.iter().zip(&c2.points) {
        assert_eq!(a.power_mw, b.power_mw);
        assert_relative_eq!(b.pulse_rate_hz, 2.0 * a.pulse_rate_hz);
        assert_relative_eq!(b.ratio / a.ratio, 0.5, max_relative = 0.02);
    }
    assert!(c1.max_rel_deviation_small_lambda < 0.05);
}

#[test]
fn hom_visibility_trends() {
    let cfg = default_cfg();
    let r = run_hom_scan(&cfg, &BOTH).unwrap();
    assert_eq!(r.curves.len(), 4);
    for kind in BOTH {
        let v1: Vec<f64> = r.curve(kind, 1).unwrap().points.iter().map(|p| p.visibility).collect();
        let v2: Vec<f64> = r.curve(kind, 2).unwrap().points.iter().map(|p| p.visibility).collect();
        assert!(non_increasing(&v1, 0.0), "{kind:?} {v1:?}");
        assert!(non_increasing(&v2, 0.0), "{kind:?} {v2:?}");
        assert!(v1.iter().zip(&v2).all(|(a, b)| b > a), "{kind:?}");
        for v in v1.iter().chain(&v2) {
            assert!(*v < r.single_pair_visibility && *v > 0.0);
        }
    }
    for c in &r.curves {
        assert!(c.max_rel_deviation_small_lambda < 0.05, "{:?}", c.source);
    }
}

#[test]
fn hom_low_pump_limits() {
    for (eta_v, expected) in [(2.0 / 3.0, 0.8), (0.682, 0.766_01)] {
        let mut cfg = ideal_cfg();
        cfg.ppbs.eta_v = eta_v;
        cfg.scan = lambda_scan(1e-4, 2e-4, 2);
        cfg.source.multiplex = vec![1];
        let r = run_hom_scan(&cfg, &BOTH).unwrap();
        assert_relative_eq!(r.single_pair_visibility, expected, epsilon = 1e-5);
        for c in &r.curves {
            assert_relative_eq!(c.points[0].visibility, single_pair_visibility(eta_v), epsilon = 1e-6);
        }
    }
}

#[test]
fn hom_independent_of_phase_convention() {
    let mut cfg = default_cfg();
    cfg.scan = power_scan(100.0, 700.0, 3);
    let a = run_hom_scan(&cfg, &BOTH).unwrap();
    cfg.ppbs.convention = PhaseConvention::Real;
    let b = run_hom_scan(&cfg, &BOTH).unwrap();
    for (ca, cb) in a.curves.iter().zip(&b.curves) {
        for (pa, pb) in ca.points.iter().zip(&cb.points) {
            assert_relative_eq!(pa.visibility, pb.visibility, epsilon = 1e-12);
        }
    }
}

#[test]
fn cz_state_trends() {
    let cfg = default_cfg();
    let r = run_cz_state(&cfg).unwrap();
    let (c1, c2) = (r.curve(1).unwrap(), r.curve(2).unwrap());
    for c in [c1, c2] {
        let f: Vec<f64> = c.points.iter().map(|p| p.fidelity).collect();
        let t: Vec<f64> = c.points.iter().map(|p| p.tangle).collect();
        assert!(non_increasing(&f, 1e-9), "{f:?}");
        assert!(non_increasing(&t, 1e-9), "{t:?}");
        assert!(c.max_rel_deviation_fidelity < 0.05);
        assert!(c.max_rel_deviation_tangle < 0.05);
        for p in &c.points {
            assert_relative_eq!(p.rho.trace().re, 1.0, epsilon = 1e-9);
            assert_relative_eq!(fidelity(&p.rho, &hd_va()).unwrap(), p.fidelity, epsilon = 1e-9);
            assert!(p.coincidence_probability > 0.0);
        }
    }
    for (a, b) in c1.points.iter().zip(&c2.points) {
        assert!(b.fidelity >= a.fidelity && b.tangle >= a.tangle);
    }
}

#[test]
fn cz_state_with_shot_noise() {
    let mut cfg = default_cfg();
    cfg.scan = power_scan(100.0, 700.0, 3);
    cfg.tomography.counts_per_setting = Some(100.0);
    let csv = |cfg: &spdcmux_experiments::ExperimentConfig| {
        let out = run_cz_state(cfg).unwrap().outputs();
        render_csv(&out.tables[0], "h").unwrap()
    };
    let r = run_cz_state(&cfg).unwrap();
    let first = csv(&cfg);
    cfg.run.workers = Some(1);
    assert_eq!(first, csv(&cfg));
    for c in &r.curves {
        for p in &c.points {
            let rho = &p.rho;
            assert!((rho - rho.adjoint()).norm() < 1e-10);
            assert_relative_eq!(rho.trace().re, 1.0, epsilon = 1e-9);
            let eig = rho.clone().hermitian_part().symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > -1e-10), "{eig:?}");
            assert!((0.0..=1.0).contains(&concurrence(rho).unwrap()));
        }
    }
    cfg.run.seed = 1;
    assert_ne!(first, csv(&cfg));
}

#[test]
fn cz_process_trends() {
    let cfg = default_cfg();
    let r = run_cz_process(&cfg).unwrap();
    let (c1, c2) = (r.curve(1).unwrap(), r.curve(2).unwrap());
    for c in [c1, c2] {
        let f: Vec<f64> = c.points.iter().map(|p| p.process_fidelity).collect();
        assert!(non_increasing(&f, 1e-9), "{f:?}");
        assert!(f.iter().all(|&x| x > 0.25 && x < 1.0));
        assert!(c.max_rel_deviation_small_lambda < 0.05);
        for p in &c.points {
            assert_relative_eq!(p.chi.trace().re, 1.0, epsilon = 1e-9);
        }
    }
    for (a, b) in c1.points.iter().zip(&c2.points) {
        assert!(b.process_fidelity >= a.process_fidelity);
    }
}

#[test]
fn cz_process_ideal_limit() {
    let mut cfg = ideal_cfg();
    cfg.scan = lambda_scan(1e-4, 1e-3, 2);
    cfg.source.multiplex = vec![1];
    let r = run_cz_process(&cfg).unwrap();
    assert!(r.curves[0].points[0].process_fidelity > 1.0 - 1e-6);
}

#[test]
fn heatmap_cross_sections_match_grid() {
    let cfg = default_cfg();
    let r = run_vis_heatmap(&cfg).unwrap();
    let mi = cfg.heatmap.cross_section_multiplex as usize - 1;
    for (ei, cell) in r.efficiency_section.iter().enumerate() {
        assert_eq!(cell.visibility, r.cell(ei, mi).visibility);
    }
    assert_eq!(r.multiplex_section.len(), r.multiplex.len());
    let v: Vec<f64> = r.multiplex_section.iter().map(|c| c.visibility).collect();
    assert!(v.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn small_lambda_deviation_window() {
    let pts = [(0.01, 1.0, 1.01), (0.05, 2.0, 2.0), (0.2, 1.0, 5.0)];
    assert_relative_eq!(small_lambda_deviation(pts.into_iter()), 0.01, epsilon = 1e-12);
}

#[test]
fn validate_defaults_pass() {
    let r = run_validate(&default_cfg()).unwrap();
    assert!(r.rep_rate_ok() && r.leakage_ok());
    assert!(r.truncation_convergence > 1.0 - 1e-6);
}

#[test]
fn validate_flags_coarse_truncation() {
    let mut cfg = default_cfg();
    cfg.run.truncation = Some(2);
    let r = run_validate(&cfg).unwrap();
    assert!(!r.leakage_ok());
    let bad = r.leakage.iter().find(|c| !c.ok).unwrap();
    assert!(bad.leakage > bad.limit);
}

#[test]
fn validate_rejects_fast_pump() {
    let mut cfg = default_cfg();
    cfg.source.coincidence_window_s = 1e-8;
    let r = run_validate(&cfg).unwrap();
    assert!(!r.rep_rate_ok());
    assert!(r.rep_rate.iter().any(|c| c.ok));
}
