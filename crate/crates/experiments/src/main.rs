use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use spdcmux::tomography::MatrixJson;
use spdcmux_experiments::model::SourceKind;
use spdcmux_experiments::runners::named_target;
use spdcmux_experiments::{
    emit_outputs, load_config, run_cz_process, run_cz_state, run_hom_scan, run_pn_ratio, run_tomo_fit, run_validate,
    run_vis_heatmap, ExperimentConfig, Outputs, Overrides, RunError, OUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "spdcmux", version, about = "Multiplexed SPDC source and CZ gate simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; the built-in default when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the config and $SPDCMUX_OUT_DIR).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Fixed Fock truncation per mode.
    #[arg(long, global = true, value_name = "N")]
    truncation: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Also write SVG line charts.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// 4-photon / 2-photon ratio versus pump power.
    PnRatio,
    /// Gate HOM visibility versus pump power.
    HomScan {
        #[arg(long, value_enum, default_value_t = SourceArg::Both)]
        source: SourceArg,
    },
    /// Entangled output state from |DD> versus pump power.
    CzState,
    /// Gate process fidelity versus pump power.
    CzProcess,
    /// Heralded visibility over detector efficiency and multiplexing factor.
    VisHeatmap,
    /// Maximum-likelihood fit of a counts CSV.
    TomoFit {
        /// CSV with columns setting_qubit1, setting_qubit2, counts.
        counts: PathBuf,
        /// `hd-va`, `phi-plus`, or a JSON matrix file.
        #[arg(long)]
        target: Option<String>,
    },
    /// Repetition-rate ceiling and truncation leakage checks.
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Dependent,
    Independent,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8, RunError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default_config(),
    };
    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .map(|p| p.display().to_string());
    cfg.apply(&Overrides {
        seed: cli.seed,
        truncation: cli.truncation,
        workers: cli.workers,
        output_dir: out_dir,
        svg: cli.svg,
    });
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = PathBuf::from(&cfg.run.output_dir);

    let mut code = 0;
    let outputs: Outputs = match &cli.command {
        Command::PnRatio => {
            let r = run_pn_ratio(&cfg)?;
            for c in &r.curves {
                println!("m={}: slope {:.6e} /mW, R^2 {:.6}", c.m, c.fit.slope, c.fit.r_squared);
            }
            if let Some(s) = r.slope_ratio(1, 2) {
                println!("slope ratio m=1/m=2: {s:.4}");
            }
            r.outputs()
        }
        Command::HomScan { source } => {
            let kinds: &[SourceKind] = match source {
                SourceArg::Dependent => &[SourceKind::Dependent],
                SourceArg::Independent => &[SourceKind::Independent],
                SourceArg::Both => &[SourceKind::Dependent, SourceKind::Independent],
            };
            let r = run_hom_scan(&cfg, kinds)?;
            println!("single-pair visibility {:.6}", r.single_pair_visibility);
            r.outputs()
        }
        Command::CzState => run_cz_state(&cfg)?.outputs(),
        Command::CzProcess => run_cz_process(&cfg)?.outputs(),
        Command::VisHeatmap => {
            let r = run_vis_heatmap(&cfg)?;
            println!(
                "m={} limit: visibility {:.6} vs single-pair {:.6}",
                r.limit.m, r.limit.visibility, r.limit.single_pair_visibility
            );
            r.outputs()
        }
        Command::TomoFit { counts, target } => {
            let bytes = std::fs::read(counts).map_err(|e| RunError::Io(format!("{}: {e}", counts.display())))?;
            let target = target.as_deref().map(load_target).transpose()?;
            let r = run_tomo_fit(&bytes, target)?;
            println!(
                "iterations {}, tangle {:.6}{}",
                r.result.iterations,
                r.result.tangle,
                r.result.fidelity.map(|f| format!(", fidelity {f:.6}")).unwrap_or_default()
            );
            let mut h = Sha256::new();
            h.update(hash.as_bytes());
            h.update(&bytes);
            let hash = hex::encode(h.finalize());
            report(&emit_outputs(&r.outputs(), &dir, &hash, false)?);
            return Ok(0);
        }
        Command::Validate => {
            let r = run_validate(&cfg)?;
            for c in &r.rep_rate {
                println!(
                    "rep rate m={}: {:.4e} Hz (ceiling {:.4e} Hz) {}",
                    c.m,
                    c.pulse_rate_hz,
                    c.max_rate_hz,
                    if c.ok { "ok" } else { "REJECTED" }
                );
            }
            for c in &r.leakage {
                println!(
                    "leakage {} {}: lambda {:.4}, truncation {}, leakage {:.3e} {}",
                    c.scan,
                    c.source.label(),
                    c.lambda,
                    c.truncation,
                    c.leakage,
                    if c.ok { "ok" } else { "EXCEEDS LIMIT" }
                );
            }
            println!("truncation convergence fidelity {:.12}", r.truncation_convergence);
            if !r.leakage_ok() {
                code = 3;
            } else if !r.rep_rate_ok() {
                code = 2;
            }
            r.outputs()
        }
    };
    report(&emit_outputs(&outputs, &dir, &hash, cfg.run.svg)?);
    Ok(code)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn load_target(spec: &str) -> Result<spdcmux::linalg::CMatrix<f64>, RunError> {
    if let Some(m) = named_target(spec) {
        return Ok(m);
    }
    let text = std::fs::read_to_string(Path::new(spec)).map_err(|e| RunError::Io(format!("{spec}: {e}")))?;
    let json: MatrixJson = serde_json::from_str(&text)
        .map_err(|e| RunError::Input(spdcmux::Error::Parse(format!("{spec}: {e}"))))?;
    Ok(json.to_matrix()?)
}
