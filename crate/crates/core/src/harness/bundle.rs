//! Columnar path store: plain-text CSV with a schema sidecar and a manifest.
//!
//! Statistical suites stream over all paths; the store persists a configured
//! subset of paths on a decimated reporting grid plus their exact jump
//! records. Every derived column is reproducible from the persisted
//! primitives and the basis coefficients; loading spot-checks that on at
//! least 1% of the persisted paths.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{counting_and_compensators, ChainPath};
use crate::error::{Error, Result};
use crate::harness::config::ScenarioConfig;
use crate::harness::paths::{DerivedPath, Process};
use crate::harness::scenario::Scenario;
use crate::impulse::{ImpulsePath, ImpulseRecord};
use crate::levy::{LevyJump, LevyPath};
use crate::ortho::format_coefficient_report;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub package_version: String,
    pub config_hash: String,
    pub model_hash: String,
    pub master_seed: u64,
    pub n_states: usize,
    pub horizon: f64,
    pub grid_step: f64,
    pub n_cells: usize,
    pub persisted_paths: u64,
    pub persist_stride: usize,
    pub h_elements: usize,
    pub g_elements: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub path_id: u64,
    pub time: f64,
    pub process: String,
    pub state: usize,
    pub order: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRow {
    pub path_id: u64,
    pub kind: String,
    pub time: f64,
    /// 1-based: destination state for chain rows, pre-transition state for
    /// jump-measure rows.
    pub state: usize,
    pub raw: f64,
    pub applied: f64,
}

pub struct LoadedBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub config: ScenarioConfig,
    pub path_rows: Vec<PathRow>,
    pub jump_rows: Vec<JumpRow>,
}

const SCHEMA_TEXT: &str = "\
paths.csv columns:
  path_id  integer path index under the manifest's master seed
  time     grid time (decimated simulation grid; step = grid_step * persist_stride)
  process  column name: J (chain state, 1-based), Xbar (Levy component),
           X (full process), GammaSum (running applied-jump sum),
           Xpow/XbarPow (power sums and their compensated versions, `order`),
           Phi/phi/PhiBar (counts, compensators, compensated counts, `state`),
           Psi/PsiBar (impulse power sums and compensated versions, `state`+`order`),
           H (power-jump basis, `order` = kept position),
           G (impulse basis, `state` + `order` = kept position)
  state    1-based state index, 0 when not applicable
  order    power order / basis position, 0 when not applicable
  value    float value

jumps.csv columns:
  path_id  as above
  kind     levy | chain
  time     exact jump epoch (not rounded to any grid)
  state    1-based: J(t-) for levy rows, destination state for chain rows
  raw      raw mark (levy) or impulse draw (chain)
  applied  applied jump after the state transform (levy); equals raw for chain rows
";

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

/// Everything persisted for one path id.
fn path_rows_for(scn: &Scenario, real: &crate::harness::scenario::PathRealization) -> (Vec<PathRow>, Vec<JumpRow>) {
    let d = DerivedPath::new(scn, real);
    let stride = scn.n_cells() / scn.config.paths.persist_points;
    let n_points = scn.config.paths.persist_points;
    let dt = scn.dt();
    let mut processes: Vec<Process> = vec![
        Process::ChainState,
        Process::LevyComponent,
        Process::Full,
        Process::JumpSum,
    ];
    for k in 1..=scn.k_order() {
        processes.push(Process::PowerSum(k));
        processes.push(Process::PowerMart(k));
    }
    for j in 0..scn.n_states() {
        processes.push(Process::Count(j));
        processes.push(Process::CountComp(j));
        processes.push(Process::CountMart(j));
    }
    for i in 0..scn.n_states() {
        for l in 1..=scn.l_order() {
            processes.push(Process::ImpulseSum(i, l));
            processes.push(Process::ImpulseMart(i, l));
        }
    }
    for e in 1..=scn.h_coeffs().n_elements() {
        processes.push(Process::BasisH(e));
    }
    for i in 0..scn.n_states() {
        if let Some(c) = &scn.impulse_coeffs[i] {
            for e in 1..=c.n_elements() {
                processes.push(Process::BasisG(i, e));
            }
        }
    }

    let mut rows = Vec::with_capacity((n_points + 1) * processes.len());
    for m in 0..=n_points {
        let t = if m == n_points {
            scn.horizon()
        } else {
            (m * stride) as f64 * dt
        };
        for proc in &processes {
            rows.push(PathRow {
                path_id: real.index,
                time: t,
                process: proc.name().to_string(),
                state: proc.state_column(),
                order: proc.order_column(),
                value: d.value(*proc, t),
            });
        }
    }

    let mut jumps = Vec::new();
    for j in &real.levy.jumps {
        jumps.push(JumpRow {
            path_id: real.index,
            kind: "levy".into(),
            time: j.time,
            state: j.pre_state + 1,
            raw: j.raw,
            applied: j.applied,
        });
    }
    for r in &real.impulse.records {
        jumps.push(JumpRow {
            path_id: real.index,
            kind: "chain".into(),
            time: r.time,
            state: r.state + 1,
            raw: r.value,
            applied: r.value,
        });
    }
    jumps.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    (rows, jumps)
}

fn paths_csv(rows: &[PathRow]) -> String {
    let mut out = String::from("path_id,time,process,state,order,value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.path_id,
            fmt_f(r.time),
            r.process,
            r.state,
            r.order,
            fmt_f(r.value)
        );
    }
    out
}

fn jumps_csv(rows: &[JumpRow]) -> String {
    let mut out = String::from("path_id,kind,time,state,raw,applied\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.path_id,
            r.kind,
            fmt_f(r.time),
            r.state,
            fmt_f(r.raw),
            fmt_f(r.applied)
        );
    }
    out
}

pub fn coefficients_report(scn: &Scenario) -> String {
    let mut out = String::new();
    for i in 0..scn.n_states() {
        out.push_str(&format_coefficient_report(
            &format!("powerjump state={}", i + 1),
            &scn.teugels_grams[i],
            &scn.teugels_coeffs[i],
        ));
    }
    for i in 0..scn.n_states() {
        match (&scn.impulse_grams[i], &scn.impulse_coeffs[i]) {
            (Some(g), Some(c)) => {
                out.push_str(&format_coefficient_report(&format!("impulse state={}", i + 1), g, c));
            }
            _ => {
                out.push_str(&format!(
                    "family impulse state={}\nunreachable: no basis\n",
                    i + 1
                ));
            }
        }
    }
    out
}

fn manifest_for(scn: &Scenario) -> Manifest {
    Manifest {
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: scn.config_hash.clone(),
        model_hash: crate::represent::model_hash(scn),
        master_seed: scn.config.master_seed,
        n_states: scn.n_states(),
        horizon: scn.horizon(),
        grid_step: scn.dt(),
        n_cells: scn.n_cells(),
        persisted_paths: scn.config.paths.persisted,
        persist_stride: scn.n_cells() / scn.config.paths.persist_points,
        h_elements: scn.h_coeffs().n_elements(),
        g_elements: scn
            .impulse_coeffs
            .iter()
            .map(|c| c.as_ref().map_or(0, |c| c.n_elements()))
            .collect(),
    }
}

/// Write the full bundle under `dir`.
pub fn write_bundle(scn: &Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = manifest_for(scn);
    std::fs::write(
        dir.join("manifest.toml"),
        toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    std::fs::write(dir.join("config.toml"), scn.config.to_toml())?;
    std::fs::write(dir.join("coefficients.txt"), coefficients_report(scn))?;
    std::fs::write(dir.join("paths.schema.txt"), SCHEMA_TEXT)?;

    let mut all_rows = Vec::new();
    let mut all_jumps = Vec::new();
    for idx in 0..scn.config.paths.persisted {
        let real = scn.simulate_path(idx)?;
        let (rows, jumps) = path_rows_for(scn, &real);
        all_rows.extend(rows);
        all_jumps.extend(jumps);
    }
    std::fs::write(dir.join("paths.csv"), paths_csv(&all_rows))?;
    std::fs::write(dir.join("jumps.csv"), jumps_csv(&all_jumps))?;
    Ok(())
}

fn parse_paths_csv(text: &str) -> Result<Vec<PathRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Validation(format!("paths.csv line {}: bad field count", ln + 1)));
        }
        rows.push(PathRow {
            path_id: fields[0].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            time: fields[1].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            process: fields[2].to_string(),
            state: fields[3].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            order: fields[4].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            value: fields[5].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
        });
    }
    Ok(rows)
}

fn parse_jumps_csv(text: &str) -> Result<Vec<JumpRow>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Validation(format!("jumps.csv line {}: bad field count", ln + 1)));
        }
        rows.push(JumpRow {
            path_id: fields[0].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            kind: fields[1].to_string(),
            time: fields[2].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            state: fields[3].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            raw: fields[4].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
            applied: fields[5].parse().map_err(|e| Error::Validation(format!("line {}: {e}", ln + 1)))?,
        });
    }
    Ok(rows)
}

/// Load a bundle and spot-check derived columns on at least 1% of the paths.
pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let manifest: Manifest = toml::from_str(&std::fs::read_to_string(dir.join("manifest.toml"))?)
        .map_err(|e| Error::Validation(format!("manifest.toml: {e}")))?;
    let config = ScenarioConfig::from_path(&dir.join("config.toml"))?;
    let path_rows = parse_paths_csv(&std::fs::read_to_string(dir.join("paths.csv"))?)?;
    let jump_rows = parse_jumps_csv(&std::fs::read_to_string(dir.join("jumps.csv"))?)?;
    let bundle = LoadedBundle {
        dir: dir.to_path_buf(),
        manifest,
        config,
        path_rows,
        jump_rows,
    };
    spot_check(&bundle)?;
    Ok(bundle)
}

/// Recompute derived columns from persisted primitives for a 1% sample of
/// paths and compare against the stored values.
pub fn spot_check(bundle: &LoadedBundle) -> Result<()> {
    let scn = Scenario::new(bundle.config.clone())?;
    let n = bundle.manifest.persisted_paths;
    if n == 0 {
        return Ok(());
    }
    let step = (n / 100).max(1);
    let mut id = 0;
    while id < n {
        spot_check_path(bundle, &scn, id)?;
        id += step;
    }
    Ok(())
}

fn spot_check_path(bundle: &LoadedBundle, scn: &Scenario, path_id: u64) -> Result<()> {
    let rows: Vec<&PathRow> = bundle.path_rows.iter().filter(|r| r.path_id == path_id).collect();
    let jumps: Vec<&JumpRow> = bundle.jump_rows.iter().filter(|r| r.path_id == path_id).collect();
    if rows.is_empty() {
        return Err(Error::Validation(format!("path {path_id} missing from the store")));
    }
    let horizon = bundle.manifest.horizon;

    let initial_state = rows
        .iter()
        .find(|r| r.process == "J" && r.time == 0.0)
        .map(|r| r.value as usize - 1)
        .ok_or_else(|| Error::Validation(format!("path {path_id}: no initial chain state")))?;
    let mut epochs = Vec::new();
    let mut dests = Vec::new();
    let mut impulse_records = Vec::new();
    let mut levy_jumps = Vec::new();
    for j in &jumps {
        match j.kind.as_str() {
            "chain" => {
                epochs.push(j.time);
                dests.push(j.state - 1);
                impulse_records.push(ImpulseRecord {
                    time: j.time,
                    state: j.state - 1,
                    value: j.raw,
                });
            }
            "levy" => levy_jumps.push(LevyJump {
                time: j.time,
                raw: j.raw,
                applied: j.applied,
                pre_value: f64::NAN,
                pre_state: j.state - 1,
            }),
            other => return Err(Error::Validation(format!("unknown jump kind {other}"))),
        }
    }
    let chain = ChainPath::new(horizon, initial_state, epochs, dests, bundle.manifest.n_states)?;
    let counting = counting_and_compensators(&chain, &scn.chain_spec)?;
    let impulse = ImpulsePath::from_records(
        impulse_records,
        scn.l_order(),
        chain.id,
        bundle.manifest.n_states,
    );

    // The persisted component values form a uniform grid.
    let mut xbar_rows: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.process == "Xbar")
        .map(|r| (r.time, r.value))
        .collect();
    xbar_rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let values: Vec<f64> = xbar_rows.iter().map(|r| r.1).collect();
    let persisted_dt = bundle.manifest.grid_step * bundle.manifest.persist_stride as f64;
    let mut gamma_sum = Vec::with_capacity(values.len());
    let mut gi = 0usize;
    let mut running = 0.0;
    for (t, _) in &xbar_rows {
        while gi < levy_jumps.len() && levy_jumps[gi].time <= *t {
            running += levy_jumps[gi].applied;
            gi += 1;
        }
        gamma_sum.push(running);
    }
    let levy = LevyPath {
        dt: persisted_dt,
        horizon,
        values,
        jumps: levy_jumps,
        gamma_sum,
        chain_epoch_values: Vec::new(),
        chain_id: chain.id,
    };
    let real = scn.finish_path(path_id, chain, counting, levy, impulse);
    let d = DerivedPath::new(scn, &real);

    for row in rows {
        let process = match (row.process.as_str(), row.state, row.order) {
            ("J", _, _) | ("Xbar", _, _) => continue, // primitives
            ("X", _, _) => Process::Full,
            ("GammaSum", _, _) => Process::JumpSum,
            ("Xpow", _, k) => Process::PowerSum(k),
            ("XbarPow", _, k) => Process::PowerMart(k),
            ("Phi", j, _) => Process::Count(j - 1),
            ("phi", j, _) => Process::CountComp(j - 1),
            ("PhiBar", j, _) => Process::CountMart(j - 1),
            ("Psi", i, l) => Process::ImpulseSum(i - 1, l),
            ("PsiBar", i, l) => Process::ImpulseMart(i - 1, l),
            ("H", _, e) => Process::BasisH(e),
            ("G", i, e) => Process::BasisG(i - 1, e),
            (other, _, _) => {
                return Err(Error::Validation(format!("unknown process column {other}")))
            }
        };
        let recomputed = d.value(process, row.time);
        let tol = 1e-9 * (1.0 + row.value.abs());
        if (recomputed - row.value).abs() > tol {
            return Err(Error::Validation(format!(
                "path {path_id}: {} at t={} stored {} but recomputed {}",
                row.process, row.time, row.value, recomputed
            )));
        }
    }
    Ok(())
}

/// Re-emit a loaded bundle; byte-identical to the original by construction
/// (shortest-round-trip float formatting and deterministic serialization).
pub fn rewrite_bundle(bundle: &LoadedBundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.toml"),
        toml::to_string(&bundle.manifest).expect("manifest serializes"),
    )?;
    std::fs::write(dir.join("config.toml"), bundle.config.to_toml())?;
    let scn = Scenario::new(bundle.config.clone())?;
    std::fs::write(dir.join("coefficients.txt"), coefficients_report(&scn))?;
    std::fs::write(dir.join("paths.schema.txt"), SCHEMA_TEXT)?;
    std::fs::write(dir.join("paths.csv"), paths_csv(&bundle.path_rows))?;
    std::fs::write(dir.join("jumps.csv"), jumps_csv(&bundle.jump_rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ScenarioConfig;

    fn quick_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::canonical();
        cfg.grid_step = 1.0 / 64.0;
        cfg.paths.persisted = 12;
        cfg.paths.persist_points = 16;
        cfg
    }

    #[test]
    fn bundle_round_trip_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let scn = Scenario::new(quick_config()).unwrap();
        let dir1 = tmp.path().join("a");
        let dir2 = tmp.path().join("b");
        write_bundle(&scn, &dir1).unwrap();
        let loaded = load_bundle(&dir1).unwrap();
        rewrite_bundle(&loaded, &dir2).unwrap();
        for name in [
            "manifest.toml",
            "config.toml",
            "coefficients.txt",
            "paths.schema.txt",
            "paths.csv",
            "jumps.csv",
        ] {
            let a = std::fs::read(dir1.join(name)).unwrap();
            let b = std::fs::read(dir2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs after write-read-write");
        }
    }

    #[test]
    fn spot_check_catches_corruption() {
        let tmp = tempfile::tempdir().unwrap();
        let scn = Scenario::new(quick_config()).unwrap();
        let dir = tmp.path().join("a");
        write_bundle(&scn, &dir).unwrap();
        let mut loaded = load_bundle(&dir).unwrap();
        // Corrupt one derived value on a checked path.
        let idx = loaded
            .path_rows
            .iter()
            .position(|r| r.path_id == 0 && r.process == "X" && r.time > 0.9)
            .unwrap();
        loaded.path_rows[idx].value += 0.5;
        assert!(spot_check(&loaded).is_err());
    }

    #[test]
    fn manifest_names_the_config_hash() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = quick_config();
        let scn = Scenario::new(cfg.clone()).unwrap();
        let dir = tmp.path().join("a");
        write_bundle(&scn, &dir).unwrap();
        let loaded = load_bundle(&dir).unwrap();
        assert_eq!(loaded.manifest.config_hash, cfg.hash());
        assert_eq!(loaded.manifest.persisted_paths, 12);
    }
}
