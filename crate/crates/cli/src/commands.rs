//! `simulate`, `estimate` and `bench`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use doa_core::monte_carlo::aggregates_to_csv;
use doa_core::{
    aggregate, music_estimate, music_grid_step, recover_doas, run_icmra, run_monte_carlo,
    synthesize_snapshots, ArrayGeometry, DoaEstimate, Method, MonteCarloOptions, ScenarioSpec,
    TrialTable,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{load, ArraySpec, Format, MethodChoice, RunConfig};
use crate::container::SnapshotFile;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Bench => "bench",
        }
    }
}

/// Parsed command line.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
    pub deterministic: bool,
}

/// Validates the configuration, then runs the command.
pub fn run(inv: &Invocation, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load(inv.config.as_deref(), &inv.sets)?;
    if let Some(o) = &inv.output {
        cfg.output = Some(o.clone());
    }
    if let Some(f) = inv.format {
        cfg.format = f;
    }
    if inv.input.is_some() && inv.command != Command::Estimate {
        return Err(CliError::Config(format!(
            "--input is not accepted by `{}`",
            inv.command.name()
        )));
    }
    match inv.command {
        Command::Simulate => simulate(&cfg, out),
        Command::Estimate => estimate(&cfg, inv, out, err),
        Command::Bench => bench(&cfg, inv.deterministic, out, err),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn io(e: std::io::Error) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

fn metadata(cfg: &RunConfig, command: Command, deterministic: bool) -> serde_json::Value {
    let echo: Vec<serde_json::Value> = cfg
        .echo
        .iter()
        .map(|(k, v)| json!({ "key": k, "value": v }))
        .collect();
    let mut meta = json!({
        "tool": "doa-cli",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command.name(),
        "seed": cfg.seed,
        "seed0": cfg.seed0,
        "config": echo,
        "resolved": cfg,
        "rmse": "pooled jointly over trials and sources, sorted-order pairing",
        "units": { "angles": "degrees", "powers": "linear" },
    });
    if !deterministic {
        meta["generated_unix"] = json!(unix_now());
    }
    meta
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

// ---------------------------------------------------------------------------

fn simulate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    cfg.require_sources()?;
    let path = cfg
        .output
        .as_ref()
        .ok_or_else(|| CliError::Config("key `output`: simulate needs an output path".into()))?;
    let geometry = cfg.array.geometry();
    let scenario = cfg.scenario();
    let snapshots =
        synthesize_snapshots(&geometry, &scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let file = SnapshotFile {
        geometry,
        seed: cfg.seed,
        snr_db: cfg.snr_db,
        thetas_deg: scenario.thetas_deg.clone(),
        powers: scenario.powers.clone(),
        snapshots,
    };
    write_file(path, &file.to_text())?;
    writeln!(
        out,
        "wrote {}: {}x{} snapshots, seed {}, sigma_true {}",
        path.display(),
        file.snapshots.x.nrows(),
        file.snapshots.x.ncols(),
        file.seed,
        file.snapshots.sigma_true
    )
    .map_err(io)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default, Serialize)]
struct Timings {
    setup_s: f64,
    weights_s: f64,
    solves_s: f64,
    total_s: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
struct EstimateRecord {
    method: String,
    ok: bool,
    error: Option<String>,
    k_hat: usize,
    thetas_deg: Vec<f64>,
    powers: Vec<f64>,
    sigma_used: Option<f64>,
    iters: usize,
    converged: bool,
    stop_reason: Option<String>,
    surrogate_trace: Vec<f64>,
    eigen_history: Vec<Vec<f64>>,
    step_norms: Vec<Option<f64>>,
    time_s: f64,
    timings: Timings,
}

fn estimate_one(
    cfg: &RunConfig,
    method: MethodChoice,
    file: &SnapshotFile,
    deterministic: bool,
) -> EstimateRecord {
    let mut rec = EstimateRecord {
        method: method.id(),
        ..Default::default()
    };
    let start = Instant::now();
    let secs = |d: std::time::Duration| if deterministic { 0.0 } else { d.as_secs_f64() };
    let result: Result<DoaEstimate, doa_core::DoaError> = match method {
        MethodChoice::Music => {
            let step = cfg
                .music_step
                .unwrap_or_else(|| music_grid_step(file.snr_db));
            let k = cfg.k.expect("validated k");
            music_estimate(&file.snapshots.sample_covariance(), &file.geometry, k, step)
        }
        _ => {
            run_icmra(&file.snapshots, &file.geometry, &cfg.icmra_config(method)).and_then(|res| {
                rec.sigma_used = Some(res.sigma_used);
                rec.iters = res.iters_run;
                rec.converged = res.converged();
                rec.stop_reason = Some(format!("{:?}", res.stop_reason).to_lowercase());
                rec.surrogate_trace = res.surrogate_trace.clone();
                rec.eigen_history = res.eigen_history.clone();
                rec.step_norms = res.step_norms.clone();
                rec.timings = Timings {
                    setup_s: secs(res.timings.setup),
                    weights_s: secs(res.timings.weights),
                    solves_s: secs(res.timings.solves),
                    total_s: secs(res.timings.total),
                };
                recover_doas(&res.toeplitz(), cfg.rank_eta)
            })
        }
    };
    rec.time_s = secs(start.elapsed());
    match result {
        Ok(est) => {
            rec.ok = true;
            if method == MethodChoice::Music {
                rec.converged = true;
            }
            rec.k_hat = est.k_hat;
            rec.thetas_deg = est.thetas_deg;
            rec.powers = est.powers;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

const ESTIMATE_CSV_HEADER: &str =
    "method,status,k_hat,index,theta_deg,power,iters,converged,time_s";

fn estimate_csv(records: &[EstimateRecord]) -> String {
    let mut s = String::from(ESTIMATE_CSV_HEADER);
    s.push('\n');
    for r in records {
        let status = if r.ok { "ok" } else { "failed" };
        let tail = format!("{},{},{}", r.iters, r.converged, r.time_s);
        if r.thetas_deg.is_empty() {
            s.push_str(&format!("{},{status},{},,,,{tail}\n", r.method, r.k_hat));
        }
        for (i, (t, p)) in r.thetas_deg.iter().zip(&r.powers).enumerate() {
            s.push_str(&format!(
                "{},{status},{},{i},{t},{p},{tail}\n",
                r.method, r.k_hat
            ));
        }
    }
    s
}

fn estimate(
    cfg: &RunConfig,
    inv: &Invocation,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    cfg.require_music_k()?;
    let file = match &inv.input {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", p.display())))?;
            SnapshotFile::parse(&text)?
        }
        None => {
            cfg.require_sources()?;
            let geometry = cfg.array.geometry();
            let scenario = cfg.scenario();
            let snapshots = synthesize_snapshots(&geometry, &scenario)
                .map_err(|e| CliError::Config(e.to_string()))?;
            SnapshotFile {
                geometry,
                seed: cfg.seed,
                snr_db: cfg.snr_db,
                thetas_deg: scenario.thetas_deg,
                powers: scenario.powers,
                snapshots,
            }
        }
    };
    if let (Some(k), true) = (cfg.k, cfg.methods.contains(&MethodChoice::Music)) {
        if k >= file.geometry.num_sensors() {
            return Err(CliError::Config(format!(
                "key `k`: MUSIC needs fewer sources than the {} sensors",
                file.geometry.num_sensors()
            )));
        }
    }
    let records: Vec<EstimateRecord> = cfg
        .methods
        .iter()
        .map(|&m| estimate_one(cfg, m, &file, inv.deterministic))
        .collect();

    let body = match cfg.format {
        Format::Csv => estimate_csv(&records),
        Format::Json => {
            let mut meta = metadata(cfg, Command::Estimate, inv.deterministic);
            meta["truth"] = json!({
                "thetas_deg": file.thetas_deg,
                "powers": file.powers,
                "sigma": file.snapshots.sigma_true,
                "seed": file.seed,
                "sensors": file.geometry.sensors(),
                "snapshots": file.snapshots.x.ncols(),
            });
            let doc = json!({ "metadata": meta, "results": records });
            serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))? + "\n"
        }
    };
    match &cfg.output {
        Some(path) => {
            write_file(path, &body)?;
            for r in &records {
                if r.ok {
                    writeln!(
                        out,
                        "{}: k_hat {} thetas {:?} powers {:?}",
                        r.method, r.k_hat, r.thetas_deg, r.powers
                    )
                } else {
                    writeln!(out, "{}: failed", r.method)
                }
                .map_err(io)?;
            }
        }
        None => out.write_all(body.as_bytes()).map_err(io)?,
    }
    let failed: Vec<&EstimateRecord> = records.iter().filter(|r| !r.ok).collect();
    for r in &failed {
        writeln!(
            err,
            "error: {}: {}",
            r.method,
            r.error.as_deref().unwrap_or("")
        )
        .map_err(io)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} methods failed",
            failed.len(),
            records.len()
        )))
    }
}

// ---------------------------------------------------------------------------

fn fmt_num(v: f64) -> String {
    v.to_string()
}

/// Cartesian product of the sweep axes; each missing axis contributes the
/// base value.
pub fn scenario_grid(cfg: &RunConfig) -> Vec<ScenarioSpec> {
    let snrs = if cfg.sweep.snr_db.is_empty() {
        vec![cfg.snr_db]
    } else {
        cfg.sweep.snr_db.clone()
    };
    let ls = if cfg.sweep.snapshots.is_empty() {
        vec![cfg.n_snapshots]
    } else {
        cfg.sweep.snapshots.clone()
    };
    let arrays: Vec<(ArraySpec, Option<usize>)> = if cfg.sweep.sensors.is_empty() {
        vec![(cfg.array.clone(), None)]
    } else {
        cfg.sweep
            .sensors
            .iter()
            .map(|&m| (ArraySpec::Ula(m), Some(m)))
            .collect()
    };
    let seps: Vec<Option<f64>> = if cfg.sweep.separation_deg.is_empty() {
        vec![None]
    } else {
        cfg.sweep.separation_deg.iter().map(|&s| Some(s)).collect()
    };
    let base = cfg
        .sweep
        .separation_base
        .or(cfg.thetas_deg.first().copied())
        .unwrap_or(0.0);
    let mut out = Vec::new();
    for (array, m) in &arrays {
        for &sep in &seps {
            for &snr in &snrs {
                for &l in &ls {
                    let thetas = match sep {
                        Some(d) => vec![base, base + d],
                        None => cfg.thetas_deg.clone(),
                    };
                    let mut id = format!("snr={};L={}", fmt_num(snr), l);
                    if let Some(d) = sep {
                        id.push_str(&format!(";sep={}", fmt_num(d)));
                    }
                    if let Some(m) = m {
                        id.push_str(&format!(";M={m}"));
                    }
                    let geometry: ArrayGeometry = array.geometry();
                    let mut spec = ScenarioSpec::new(
                        id,
                        geometry,
                        cfg.scenario_with(thetas, snr, l, cfg.seed0),
                    );
                    spec.jitter_deg = cfg.jitter_deg;
                    out.push(spec);
                }
            }
        }
    }
    out
}

pub fn bench_methods(cfg: &RunConfig) -> Vec<Method> {
    cfg.methods
        .iter()
        .map(|&m| match m {
            MethodChoice::Music => Method::Music {
                id: m.id(),
                grid_step_deg: cfg.music_step,
            },
            _ => Method::Reweighted {
                id: m.id(),
                config: cfg.icmra_config(m),
                rank_eta: cfg.rank_eta,
            },
        })
        .collect()
}

fn bench(
    cfg: &RunConfig,
    deterministic: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    cfg.require_sources()?;
    let ids: Vec<String> = cfg.methods.iter().map(|m| m.id()).collect();
    for (i, id) in ids.iter().enumerate() {
        if ids[..i].contains(id) {
            return Err(CliError::Config(format!(
                "key `method`: `{id}` listed twice"
            )));
        }
    }
    let scenarios = scenario_grid(cfg);
    for s in &scenarios {
        s.scenario
            .validate()
            .map_err(|e| CliError::Config(format!("scenario {}: {e}", s.id)))?;
        if s.scenario
            .thetas_deg
            .iter()
            .any(|t| t.abs() + s.jitter_deg >= 90.0)
        {
            return Err(CliError::Config(format!(
                "scenario {}: DOAs leave (-90, 90)",
                s.id
            )));
        }
        if cfg.methods.contains(&MethodChoice::Music)
            && s.scenario.thetas_deg.len() >= s.geometry.num_sensors()
        {
            return Err(CliError::Config(format!(
                "scenario {}: MUSIC needs fewer sources than sensors",
                s.id
            )));
        }
    }
    let methods = bench_methods(cfg);
    let opts = MonteCarloOptions {
        n_trials: cfg.n_trials,
        seed0: cfg.seed0,
        deterministic,
    };
    let table = run_monte_carlo(&methods, &scenarios, &opts)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let aggregates = aggregate(&table, &scenarios);

    let (trials_text, agg_text, ext) = match cfg.format {
        Format::Csv => {
            let stamp = if deterministic {
                String::new()
            } else {
                format!("# generated_unix {}\n", unix_now())
            };
            (
                stamp.clone() + &table.to_csv(),
                stamp + &aggregates_to_csv(&aggregates),
                "csv",
            )
        }
        Format::Json => {
            let meta = metadata(cfg, Command::Bench, deterministic);
            let t = json!({ "metadata": meta, "rows": table.rows });
            let a = json!({ "metadata": meta, "rows": aggregates });
            let pretty = |v: &serde_json::Value| serde_json::to_string_pretty(v).map(|s| s + "\n");
            (
                pretty(&t).map_err(|e| CliError::Runtime(e.to_string()))?,
                pretty(&a).map_err(|e| CliError::Runtime(e.to_string()))?,
                "json",
            )
        }
    };
    match &cfg.output {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
            write_file(&dir.join(format!("trials.{ext}")), &trials_text)?;
            write_file(&dir.join(format!("aggregate.{ext}")), &agg_text)?;
            writeln!(
                out,
                "wrote {} trial rows and {} aggregate rows to {}",
                table.rows.len(),
                aggregates.len(),
                dir.display()
            )
            .map_err(io)?;
        }
        None => out.write_all(agg_text.as_bytes()).map_err(io)?,
    }
    report_failures(&table, err)
}

fn report_failures(table: &TrialTable, err: &mut dyn Write) -> Result<(), CliError> {
    let failed = table.failures();
    if failed == table.rows.len() {
        return Err(CliError::Runtime(format!("all {failed} trial rows failed")));
    }
    if failed > 0 {
        writeln!(
            err,
            "warning: {failed} of {} trial rows failed",
            table.rows.len()
        )
        .map_err(io)?;
    }
    Ok(())
}
