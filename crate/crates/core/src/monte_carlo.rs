//! Seeded Monte Carlo trials: every method sees the same snapshots per trial,
//! estimates are paired with the truth in sorted order, and per-trial rows are
//! reduced to RMSE, success rate and mean time per (method, scenario).

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{synthesize_snapshots, ArrayGeometry, Scenario, Snapshots};
use crate::doa_recovery::{
    music_estimate, music_grid_step, recover_doas, DoaEstimate, DEFAULT_RANK_ETA,
};
use crate::error::{domain, Result};
use crate::icmra::{run_icmra, IcmraConfig};
use crate::stats::crlb_stochastic;

/// A trial counts as a success when its DOA RMSE is below this (degrees).
pub const SUCCESS_RMSE_DEG: f64 = 0.1;

/// CSV header of [`TrialRow`].
pub const TRIAL_CSV_HEADER: &str =
    "method,scenario_id,trial,seed,rmse_deg,power_rmse,time_s,converged,k_hat";

/// CSV header of [`AggregateRow`].
pub const AGGREGATE_CSV_HEADER: &str =
    "method,scenario_id,snr_db,n_snapshots,separation_deg,thetas_deg,n_trials,\
n_failed,n_k_mismatch,rmse_deg,power_rmse,success_rate,mean_time_s,crlb_deg";

/// Output of one estimation call.
#[derive(Clone, Debug)]
pub struct MethodOutput {
    pub estimate: DoaEstimate,
    pub converged: bool,
}

/// Anything that maps snapshots to DOA estimates.
pub trait Estimator: Send + Sync {
    fn id(&self) -> &str;
    /// `scenario` is passed for estimators that are told the source count
    /// (MUSIC) or the truth (the oracle); blind methods ignore it.
    fn estimate(
        &self,
        x: &Snapshots,
        geom: &ArrayGeometry,
        scenario: &Scenario,
    ) -> Result<MethodOutput>;
}

/// Built-in estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// CMRA, ICMRA or FICMRA followed by rank estimation and decomposition.
    Reweighted {
        id: String,
        config: IcmraConfig,
        rank_eta: f64,
    },
    /// Grid MUSIC given the true source count; the step follows the SNR rule
    /// unless fixed.
    Music {
        id: String,
        grid_step_deg: Option<f64>,
    },
    /// Returns the ground truth.
    Oracle { id: String },
}

impl Method {
    pub fn reweighted(id: impl Into<String>, config: IcmraConfig) -> Self {
        Method::Reweighted {
            id: id.into(),
            config,
            rank_eta: DEFAULT_RANK_ETA,
        }
    }
}

impl Estimator for Method {
    fn id(&self) -> &str {
        match self {
            Method::Reweighted { id, .. } | Method::Music { id, .. } | Method::Oracle { id } => id,
        }
    }

    fn estimate(
        &self,
        x: &Snapshots,
        geom: &ArrayGeometry,
        scenario: &Scenario,
    ) -> Result<MethodOutput> {
        match self {
            Method::Reweighted {
                config, rank_eta, ..
            } => {
                let res = run_icmra(x, geom, config)?;
                let estimate = recover_doas(&res.toeplitz(), *rank_eta)?;
                Ok(MethodOutput {
                    estimate,
                    converged: res.converged(),
                })
            }
            Method::Music { grid_step_deg, .. } => {
                let step = grid_step_deg.unwrap_or_else(|| music_grid_step(scenario.snr_db));
                let estimate = music_estimate(
                    &x.sample_covariance(),
                    geom,
                    scenario.thetas_deg.len(),
                    step,
                )?;
                Ok(MethodOutput {
                    estimate,
                    converged: true,
                })
            }
            Method::Oracle { .. } => {
                let mut pairs: Vec<(f64, f64)> = scenario
                    .thetas_deg
                    .iter()
                    .copied()
                    .zip(scenario.powers.iter().copied())
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let estimate = DoaEstimate {
                    k_hat: pairs.len(),
                    thetas_deg: pairs.iter().map(|p| p.0).collect(),
                    powers: pairs.iter().map(|p| p.1).collect(),
                    residual: None,
                };
                Ok(MethodOutput {
                    estimate,
                    converged: true,
                })
            }
        }
    }
}

/// One point of a sweep grid.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub id: String,
    pub geometry: ArrayGeometry,
    /// Template; its seed is replaced by `seed0 + trial`.
    pub scenario: Scenario,
    /// Every trial shifts all DOAs by one common offset drawn uniformly from
    /// `[−jitter_deg, jitter_deg]`; 0 keeps them fixed.
    pub jitter_deg: f64,
}

impl ScenarioSpec {
    pub fn new(id: impl Into<String>, geometry: ArrayGeometry, scenario: Scenario) -> Self {
        ScenarioSpec {
            id: id.into(),
            geometry,
            scenario,
            jitter_deg: 0.0,
        }
    }

    /// Scenario of one trial.
    pub fn trial_scenario(&self, seed: u64) -> Scenario {
        let mut scenario = Scenario {
            seed,
            ..self.scenario.clone()
        };
        if self.jitter_deg > 0.0 {
            // Separate stream from the snapshot noise of the same seed.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ JITTER_STREAM);
            let v = rng.random_range(-self.jitter_deg..=self.jitter_deg);
            for t in scenario.thetas_deg.iter_mut() {
                *t += v;
            }
        }
        scenario
    }
}

const JITTER_STREAM: u64 = 0x6a09_e667_f3bc_c909;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MonteCarloOptions {
    pub n_trials: usize,
    pub seed0: u64,
    /// Record `time_s = 0` so tables are byte-reproducible.
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub method: String,
    pub scenario_id: String,
    pub trial: usize,
    pub seed: u64,
    /// NaN on failed trials.
    pub rmse_deg: f64,
    pub power_rmse: f64,
    pub time_s: f64,
    pub converged: bool,
    pub k_hat: usize,
    /// Signed errors of the scored pairs, ascending truth order.
    pub doa_errors_deg: Vec<f64>,
    pub power_errors: Vec<f64>,
    /// `K̂ ≠ K`; only `min(K̂, K)` pairs were scored.
    pub k_mismatch: bool,
    /// Failure message of outlier rows.
    pub error: Option<String>,
}

impl TrialRow {
    pub fn is_outlier(&self) -> bool {
        self.error.is_some()
    }

    pub fn succeeded(&self) -> bool {
        !self.is_outlier() && !self.k_mismatch && self.rmse_deg < SUCCESS_RMSE_DEG
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.scenario_id,
            self.trial,
            self.seed,
            self.rmse_deg,
            self.power_rmse,
            self.time_s,
            self.converged,
            self.k_hat
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTable {
    pub rows: Vec<TrialRow>,
}

impl TrialTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRIAL_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.is_outlier()).count()
    }
}

/// Pairs sorted estimates with sorted truth, keeping `min(K̂, K)` pairs.
/// Returns signed errors `estimate − truth`.
pub fn sorted_pair_errors(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    let mut e = estimate.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter().zip(&t).map(|(a, b)| a - b).collect()
}

/// `sqrt(mean(e²))`; NaN for an empty slice.
pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Joint RMSE over all non-outlier rows and all scored sources.
pub fn pooled_rmse(rows: &[&TrialRow]) -> f64 {
    let errs: Vec<f64> = rows
        .iter()
        .filter(|r| !r.is_outlier())
        .flat_map(|r| r.doa_errors_deg.iter().copied())
        .collect();
    rms(&errs)
}

fn score(
    method: &str,
    spec: &ScenarioSpec,
    scenario: &Scenario,
    trial: usize,
    out: Result<MethodOutput>,
    time_s: f64,
) -> TrialRow {
    let base = TrialRow {
        method: method.to_string(),
        scenario_id: spec.id.clone(),
        trial,
        seed: scenario.seed,
        rmse_deg: f64::NAN,
        power_rmse: f64::NAN,
        time_s,
        converged: false,
        k_hat: 0,
        doa_errors_deg: Vec::new(),
        power_errors: Vec::new(),
        k_mismatch: false,
        error: None,
    };
    match out {
        Err(e) => TrialRow {
            error: Some(e.to_string()),
            ..base
        },
        Ok(out) => {
            let est = out.estimate;
            let mut truth: Vec<(f64, f64)> = scenario
                .thetas_deg
                .iter()
                .copied()
                .zip(scenario.powers.iter().copied())
                .collect();
            truth.sort_by(|a, b| a.0.total_cmp(&b.0));
            let doa_errors = sorted_pair_errors(
                &est.thetas_deg,
                &truth.iter().map(|p| p.0).collect::<Vec<_>>(),
            );
            // Estimates are already ascending, so powers pair the same way.
            let power_errors: Vec<f64> = est
                .powers
                .iter()
                .zip(&truth)
                .map(|(p, t)| p - t.1)
                .collect();
            TrialRow {
                rmse_deg: rms(&doa_errors),
                power_rmse: rms(&power_errors),
                converged: out.converged,
                k_hat: est.k_hat,
                k_mismatch: est.k_hat != truth.len(),
                doa_errors_deg: doa_errors,
                power_errors,
                ..base
            }
        }
    }
}

/// Runs every method on every (scenario, trial). Trials run in parallel; rows
/// come back ordered by scenario, trial, then method.
pub fn run_monte_carlo<E: Estimator>(
    methods: &[E],
    scenarios: &[ScenarioSpec],
    opts: &MonteCarloOptions,
) -> Result<TrialTable> {
    if opts.n_trials == 0 {
        return domain("n_trials must be at least 1");
    }
    if methods.is_empty() {
        return domain("no methods to run");
    }
    for s in scenarios {
        s.scenario.validate()?;
        if !(s.jitter_deg >= 0.0)
            || s.scenario
                .thetas_deg
                .iter()
                .any(|t| t.abs() + s.jitter_deg >= 90.0)
        {
            return domain(format!(
                "scenario '{}': jittered DOAs must stay inside (-90, 90)",
                s.id
            ));
        }
    }
    let tasks: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..opts.n_trials).map(move |t| (s, t)))
        .collect();
    let chunks: Vec<Vec<TrialRow>> = tasks
        .par_iter()
        .map(|&(si, trial)| {
            let spec = &scenarios[si];
            let scenario = spec.trial_scenario(opts.seed0.wrapping_add(trial as u64));
            let data = synthesize_snapshots(&spec.geometry, &scenario);
            methods
                .iter()
                .map(|m| match &data {
                    Err(e) => score(m.id(), spec, &scenario, trial, Err(clone_error(e)), 0.0),
                    Ok(x) => {
                        let t = Instant::now();
                        let out = m.estimate(x, &spec.geometry, &scenario);
                        let elapsed = if opts.deterministic {
                            0.0
                        } else {
                            t.elapsed().as_secs_f64()
                        };
                        score(m.id(), spec, &scenario, trial, out, elapsed)
                    }
                })
                .collect()
        })
        .collect();
    Ok(TrialTable {
        rows: chunks.into_iter().flatten().collect(),
    })
}

fn clone_error(e: &crate::error::DoaError) -> crate::error::DoaError {
    crate::error::DoaError::Numeric(format!("snapshot synthesis failed: {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub scenario_id: String,
    pub snr_db: f64,
    pub n_snapshots: usize,
    /// Largest minus smallest DOA.
    pub separation_deg: f64,
    pub thetas_deg: Vec<f64>,
    pub n_trials: usize,
    pub n_failed: usize,
    pub n_k_mismatch: usize,
    /// Pooled over trials and sources.
    pub rmse_deg: f64,
    pub power_rmse: f64,
    pub success_rate: f64,
    pub mean_time_s: f64,
    /// Root of the mean stochastic CRB over sources, when computable.
    pub crlb_deg: Option<f64>,
}

impl AggregateRow {
    pub fn to_csv(&self) -> String {
        let thetas: Vec<String> = self.thetas_deg.iter().map(|t| t.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.scenario_id,
            self.snr_db,
            self.n_snapshots,
            self.separation_deg,
            thetas.join(";"),
            self.n_trials,
            self.n_failed,
            self.n_k_mismatch,
            self.rmse_deg,
            self.power_rmse,
            self.success_rate,
            self.mean_time_s,
            self.crlb_deg.map(|c| c.to_string()).unwrap_or_default()
        )
    }
}

/// Aggregates in first-appearance order of (scenario, method).
pub fn aggregate(table: &TrialTable, scenarios: &[ScenarioSpec]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for spec in scenarios {
        let mut methods: Vec<&str> = Vec::new();
        for r in table.rows.iter().filter(|r| r.scenario_id == spec.id) {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let crlb = crlb_stochastic(&spec.geometry, &spec.scenario)
            .ok()
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).sqrt());
        let thetas = &spec.scenario.thetas_deg;
        let separation = thetas.iter().copied().fold(f64::MIN, f64::max)
            - thetas.iter().copied().fold(f64::MAX, f64::min);
        for m in methods {
            let rows: Vec<&TrialRow> = table
                .rows
                .iter()
                .filter(|r| r.scenario_id == spec.id && r.method == m)
                .collect();
            let ok: Vec<&&TrialRow> = rows.iter().filter(|r| !r.is_outlier()).collect();
            let power_errs: Vec<f64> = ok
                .iter()
                .flat_map(|r| r.power_errors.iter().copied())
                .collect();
            out.push(AggregateRow {
                method: m.to_string(),
                scenario_id: spec.id.clone(),
                snr_db: spec.scenario.snr_db,
                n_snapshots: spec.scenario.n_snapshots,
                separation_deg: separation,
                thetas_deg: thetas.clone(),
                n_trials: rows.len(),
                n_failed: rows.len() - ok.len(),
                n_k_mismatch: ok.iter().filter(|r| r.k_mismatch).count(),
                rmse_deg: pooled_rmse(&rows),
                power_rmse: rms(&power_errs),
                success_rate: rows.iter().filter(|r| r.succeeded()).count() as f64
                    / rows.len() as f64,
                mean_time_s: rows.iter().map(|r| r.time_s).sum::<f64>() / rows.len() as f64,
                crlb_deg: crlb,
            });
        }
    }
    out
}

pub fn aggregates_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
