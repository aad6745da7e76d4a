use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use itomap::harness::config::ScenarioConfig;
use itomap::harness::runner::{run_scenario, RunSections, RunSummary};
use itomap::harness::scenario::Scenario;
use itomap::harness::suite::martingale_scan;
use itomap::Error;

#[derive(Parser)]
#[command(name = "itomap", version, about = "Regime-switching jump-diffusion simulator with martingale-representation verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed worker count (results are identical for any value).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and persist the path bundle with its manifest.
    Simulate(Common),
    /// Compute and print the orthonormal basis coefficients.
    Basis(Common),
    /// Estimate the configured payoff's integrands and replicate out of sample.
    Represent(Common),
    /// Run the martingale and orthonormality suites (exit 3 on flags).
    Verify {
        #[command(flatten)]
        common: Common,
        /// Also scan the raw (uncompensated) counting processes; these must
        /// flag, demonstrating the suite detects drift.
        #[arg(long)]
        probe_uncompensated: bool,
    },
    /// Run everything and emit plot-ready columnar reports.
    Report(Common),
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn print_summary(summary: &RunSummary) {
    println!("config hash {}", summary.config_hash);
    println!("outputs under {}", summary.out_dir.display());
    if let Some(m) = &summary.martingale {
        let flagged = m.flags();
        println!(
            "martingale suite: {} level checks, {} increment checks, {} flagged",
            m.rows.len(),
            m.increment_rows.len(),
            flagged
        );
    }
    if let Some(o) = &summary.ortho {
        println!(
            "orthonormality at t=1: {} elements, max deviation {:.4}, {} flagged{}",
            o.dim(),
            o.max_abs_deviation_from_identity(),
            o.flag_count(),
            if o.h_asserted { "" } else { " (power-jump family reported only)" }
        );
    }
    if let Some(r) = &summary.replication {
        println!(
            "replication: relative L2 error {:.4} (se {:.4}) over {} paths",
            r.rel_error, r.rel_std_err, r.n_paths
        );
    }
    for rep in &summary.oracle {
        let finest = rep.levels.last().unwrap();
        println!(
            "oracle ({},{},{}): finest dt {:.2e} relative rms {:.3e}",
            rep.g, rep.p, rep.b, finest.dt, finest.rel_rms
        );
    }
    if summary.flags > 0 {
        println!("{} statistical flags raised", summary.flags);
    }
}

fn run() -> Result<i32, Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load_config(&common)?;
            let summary = run_scenario(
                &cfg,
                common.workers,
                RunSections { simulate: true, ..Default::default() },
            )?;
            print_summary(&summary);
            Ok(0)
        }
        Command::Basis(common) => {
            let cfg = load_config(&common)?;
            cfg.validate_core()?;
            let scn = Scenario::new(cfg)?;
            let report = itomap::harness::bundle::coefficients_report(&scn);
            let dir = PathBuf::from(&scn.config.output_dir);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("coefficients.txt"), &report)?;
            print!("{report}");
            Ok(0)
        }
        Command::Represent(common) => {
            let cfg = load_config(&common)?;
            if cfg.representation.payoff.is_none() {
                return Err(Error::Config(
                    "no [representation.payoff] section in the config".into(),
                ));
            }
            let summary = run_scenario(
                &cfg,
                common.workers,
                RunSections { represent: true, ..Default::default() },
            )?;
            print_summary(&summary);
            Ok(0)
        }
        Command::Verify { common, probe_uncompensated } => {
            let cfg = load_config(&common)?;
            let summary = run_scenario(
                &cfg,
                common.workers,
                RunSections { verify: true, ..Default::default() },
            )?;
            print_summary(&summary);
            let mut flags = summary.flags;
            if probe_uncompensated {
                let scn = Scenario::new(cfg.clone())?;
                let mut probe_flags = 0;
                for j in 0..scn.n_states() {
                    let rows = martingale_scan(
                        &scn,
                        cfg.paths.estimation.min(20_000),
                        &format!("Phi_{}_raw", j + 1),
                        |d, t| d.count(j, t),
                    )?;
                    probe_flags += rows.iter().filter(|r| r.flagged).count();
                }
                println!(
                    "uncompensated probe: {probe_flags} flags (expected to flag; 0 would mean the suite is blind)"
                );
                flags += probe_flags;
            }
            Ok(if flags > 0 { 3 } else { 0 })
        }
        Command::Report(common) => {
            let cfg = load_config(&common)?;
            let summary = run_scenario(&cfg, common.workers, RunSections::all())?;
            print_summary(&summary);
            Ok(if summary.flags > 0 { 3 } else { 0 })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
