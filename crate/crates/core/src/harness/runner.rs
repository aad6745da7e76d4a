//! Scenario orchestration: simulate/persist, run the statistical suites,
//! estimate and replicate the configured payoff, run the reconstruction
//! oracle, and write plot-ready columnar reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::bundle::write_bundle;
use crate::harness::config::ScenarioConfig;
use crate::harness::scenario::{PathRange, Scenario};
use crate::harness::suite::{
    default_martingale_processes, martingale_test, orthogonality_test, MartingaleReport,
    OrthoReport,
};
use crate::oracle::{poly_representation_oracle, PolyOracleReport};
use crate::represent::{
    estimate_predictable_representation, replicate, EstimateOptions, PayoffSpec,
    ReplicationReport, RepresentationEstimate,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunSections {
    pub simulate: bool,
    pub verify: bool,
    pub represent: bool,
    pub oracle: bool,
}

impl RunSections {
    pub fn all() -> Self {
        RunSections {
            simulate: true,
            verify: true,
            represent: true,
            oracle: true,
        }
    }
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub flags: usize,
    pub martingale: Option<MartingaleReport>,
    pub ortho: Option<OrthoReport>,
    pub estimate: Option<RepresentationEstimate>,
    pub replication: Option<ReplicationReport>,
    pub oracle: Vec<PolyOracleReport>,
}

/// Run the selected sections under an optional fixed-size worker pool.
/// Results are bit-identical for any worker count.
pub fn run_scenario(
    config: &ScenarioConfig,
    workers: Option<usize>,
    sections: RunSections,
) -> Result<RunSummary> {
    config.validate()?;
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Numeric(format!("worker pool: {e}")))?;
            pool.install(|| run_inner(config, sections))
        }
        None => run_inner(config, sections),
    }
}

fn run_inner(config: &ScenarioConfig, sections: RunSections) -> Result<RunSummary> {
    let scn = Scenario::new(config.clone())?;
    let out_dir = PathBuf::from(&config.output_dir);
    std::fs::create_dir_all(&out_dir)?;

    let mut summary = RunSummary {
        out_dir: out_dir.clone(),
        config_hash: scn.config_hash.clone(),
        flags: 0,
        martingale: None,
        ortho: None,
        estimate: None,
        replication: None,
        oracle: Vec::new(),
    };

    if sections.simulate {
        write_bundle(&scn, &out_dir)?;
    }

    if sections.verify {
        let procs = default_martingale_processes(&scn);
        let mart = martingale_test(&scn, config.paths.estimation, &procs)?;
        write_martingale_csv(&out_dir, &scn, &mart)?;
        summary.flags += mart.flags();
        summary.martingale = Some(mart);

        let ortho = orthogonality_test(&scn, config.paths.estimation)?;
        write_ortho_csv(&out_dir, &scn, &ortho)?;
        summary.flags += ortho.flag_count();
        summary.ortho = Some(ortho);
    }

    if sections.represent {
        if let Some(payoff_cfg) = &config.representation.payoff {
            let payoff: PayoffSpec = payoff_cfg.to_payoff(config.n_states())?;
            let opts = EstimateOptions::from_scenario(&scn);
            let est_range = PathRange::new(0, config.paths.estimation);
            let eval_range = PathRange::new(config.paths.estimation, config.paths.evaluation);
            let estimate = estimate_predictable_representation(&scn, est_range, &payoff, &opts)?;
            let report = replicate(&scn, eval_range, &payoff, &estimate)?;
            write_representation_csv(&out_dir, &scn, &estimate, &report, &payoff)?;
            summary.estimate = Some(estimate);
            summary.replication = Some(report);
        }
    }

    if sections.oracle {
        let oc = &config.oracle;
        let i_state = oc.i_state - 1;
        let j_state = oc.j_state - 1;
        let mut reports = Vec::new();
        for g in 0..=3usize {
            for p in 0..=(3 - g) {
                for b in 0..=(3 - g - p) {
                    if g + p + b == 0 {
                        continue;
                    }
                    reports.push(poly_representation_oracle(
                        &scn,
                        (g, p, b),
                        i_state,
                        j_state,
                        &oc.dt_levels,
                        PathRange::new(0, oc.paths),
                    )?);
                }
            }
        }
        write_oracle_csv(&out_dir, &scn, &reports)?;
        summary.oracle = reports;
    }

    Ok(summary)
}

fn stamp(scn: &Scenario) -> String {
    format!("# config_hash {}\n", scn.config_hash)
}

fn write_martingale_csv(dir: &Path, scn: &Scenario, report: &MartingaleReport) -> Result<()> {
    let mut out = stamp(scn);
    out.push_str("process,time,mean,std_err,z,flagged\n");
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.process, r.time, r.mean, r.std_err, r.z, r.flagged as u8
        );
    }
    std::fs::write(dir.join("martingale.csv"), out)?;

    let mut out = stamp(scn);
    out.push_str("process,t_from,t_to,group,n,mean,std_err,z,flagged\n");
    for r in &report.increment_rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.process,
            r.t_from,
            r.t_to,
            if r.positive_group { "pos" } else { "neg" },
            r.n,
            r.mean,
            r.std_err,
            r.z,
            r.flagged as u8
        );
    }
    std::fs::write(dir.join("martingale_increments.csv"), out)?;
    Ok(())
}

fn write_ortho_csv(dir: &Path, scn: &Scenario, report: &OrthoReport) -> Result<()> {
    let mut out = stamp(scn);
    let _ = writeln!(out, "# h_asserted {}", report.h_asserted as u8);
    out.push_str("row,col,mean,std_err,target,flagged\n");
    let d = report.dim();
    for a in 0..d {
        for b in 0..d {
            let target = if a == b { 1.0 } else { 0.0 };
            let flagged = report.flags.iter().any(|&(fa, fb, _)| fa == a && fb == b);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                report.labels[a],
                report.labels[b],
                report.mean[a * d + b],
                report.std_err[a * d + b],
                target,
                flagged as u8
            );
        }
    }
    std::fs::write(dir.join("orthogonality.csv"), out)?;
    Ok(())
}

fn write_representation_csv(
    dir: &Path,
    scn: &Scenario,
    estimate: &RepresentationEstimate,
    report: &ReplicationReport,
    payoff: &PayoffSpec,
) -> Result<()> {
    let mut out = stamp(scn);
    let _ = writeln!(out, "# payoff {}", payoff.label());
    out.push_str("bucket,t_left,element,integrand_estimate,std_err\n");
    for row in estimate.integrand_table() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.bucket, row.t_left, row.element, row.mean, row.std_err
        );
    }
    std::fs::write(dir.join("representation.csv"), out)?;

    let mut out = stamp(scn);
    out.push_str("metric,value\n");
    let _ = writeln!(out, "payoff,{}", payoff.label());
    let _ = writeln!(out, "n_paths,{}", report.n_paths);
    let _ = writeln!(out, "rmse,{}", report.rmse);
    let _ = writeln!(out, "payoff_std,{}", report.payoff_std);
    let _ = writeln!(out, "rel_error,{}", report.rel_error);
    let _ = writeln!(out, "rel_std_err,{}", report.rel_std_err);
    let _ = writeln!(out, "in_sample_bucket_residual,{}", estimate.in_sample_residual.0);
    std::fs::write(dir.join("replication.csv"), out)?;
    Ok(())
}

fn write_oracle_csv(dir: &Path, scn: &Scenario, reports: &[PolyOracleReport]) -> Result<()> {
    let mut out = stamp(scn);
    out.push_str("dt,g,p,b,i_state,j_state,max_err,rms_err,lhs_rms,rel_rms\n");
    for r in reports {
        for l in &r.levels {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                l.dt,
                r.g,
                r.p,
                r.b,
                r.i_state + 1,
                r.j_state + 1,
                l.max_err,
                l.rms_err,
                l.lhs_rms,
                l.rel_rms
            );
        }
    }
    std::fs::write(dir.join("oracle.csv"), out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(out: &Path) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::canonical();
        cfg.grid_step = 1.0 / 64.0;
        cfg.paths.estimation = 10_000;
        cfg.paths.evaluation = 1_000;
        cfg.paths.persisted = 8;
        cfg.paths.persist_points = 16;
        cfg.oracle.paths = 16;
        cfg.oracle.dt_levels = vec![1.0 / 16.0, 1.0 / 64.0];
        cfg.output_dir = out.to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let sections = RunSections {
            simulate: true,
            verify: true,
            represent: false,
            oracle: false,
        };
        // Identical config both times; stash the first run's files aside.
        let cfg = tiny_config(&out);
        run_scenario(&cfg, Some(1), sections).unwrap();
        let stash = tmp.path().join("first");
        std::fs::rename(&out, &stash).unwrap();
        run_scenario(&cfg, Some(8), sections).unwrap();
        for name in [
            "manifest.toml",
            "config.toml",
            "coefficients.txt",
            "paths.csv",
            "jumps.csv",
            "martingale.csv",
            "martingale_increments.csv",
            "orthogonality.csv",
        ] {
            let a = std::fs::read(stash.join(name)).unwrap();
            let b = std::fs::read(out.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between 1 and 8 workers");
        }
    }
}
