//! The outer reweighted loop: weight update, subproblem solve, ε annealing.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array_model::{
    estimate_noise_power, full_fill_covariance, ArrayGeometry, NoiseMode, Snapshots,
};
use crate::error::{domain, DoaError, Result};
use crate::linalg::{CMat, CVec, HermitianEigen};
use crate::penalty::{
    schedule_next, surrogate_from_eigenvalues, weight_from_eigen, PenaltyKind, PenaltySpec,
};
use crate::stats::{beta_threshold, DEFAULT_TAIL_PROB};
use crate::subproblem::{ConstrainedSolver, FicmraSolver, FicmraWhitener, SolverOptions};
use crate::toeplitz::{ToeplitzParam, WeightedErrorContext};

/// Eigenvalues of `T(u)` below this fraction of `λ_max(R̂)` count as zero for
/// the degenerate stop.
pub const DEGENERATE_EIGEN: f64 = 1e-12;

/// Default Lagrange multiplier of the closed-form backend.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Subproblem solved at every outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Backend {
    /// Constrained trace minimization. `beta_sq = None` derives the bound
    /// from the chi-square quantile with tail probability `tail_prob`.
    Constrained {
        beta_sq: Option<f64>,
        tail_prob: f64,
        #[serde(default)]
        solver: SolverOptions,
    },
    /// Closed-form Lagrangian step without the PSD constraint.
    Ficmra {
        lambda: f64,
        whitener: FicmraWhitener,
    },
}

impl Backend {
    pub fn constrained() -> Self {
        Backend::Constrained {
            beta_sq: None,
            tail_prob: DEFAULT_TAIL_PROB,
            solver: Default::default(),
        }
    }

    pub fn ficmra() -> Self {
        Backend::Ficmra {
            lambda: DEFAULT_LAMBDA,
            whitener: FicmraWhitener::SampleCovariance,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Constrained { .. } => "constrained",
            Backend::Ficmra { .. } => "ficmra",
        }
    }
}

/// Starting point `u₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// `u₀ = 0`, so the first weight is a multiple of the identity.
    Zero,
    /// Complex Gaussian entries scaled to `λ_max(R̂)`.
    RandomGaussian { seed: u64 },
    /// First column of the diagonal-averaged coarray covariance.
    FullFillColumn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcmraConfig {
    pub penalty: PenaltySpec,
    pub backend: Backend,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub sigma_mode: NoiseMode,
    /// Known noise power; skips estimation when set.
    pub sigma_override: Option<f64>,
    pub init: Initialization,
}

impl IcmraConfig {
    pub fn new(penalty: PenaltySpec, backend: Backend) -> Self {
        IcmraConfig {
            penalty,
            backend,
            max_outer_iters: 20,
            rel_tol: 1e-4,
            sigma_mode: NoiseMode::Direct,
            sigma_override: None,
            init: Initialization::Zero,
        }
    }

    /// Constrained backend with the default schedule of `kind`.
    pub fn icmra(kind: PenaltyKind) -> Self {
        Self::new(PenaltySpec::with_defaults(kind), Backend::constrained())
    }

    /// Closed-form backend with the default schedule of `kind` and `λ = 0.1`.
    pub fn ficmra(kind: PenaltyKind) -> Self {
        Self::new(PenaltySpec::with_defaults(kind), Backend::ficmra())
    }

    /// A single constrained solve with identity weight.
    pub fn cmra() -> Self {
        IcmraConfig {
            max_outer_iters: 1,
            ..Self::icmra(PenaltyKind::Logarithm)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if self.max_outer_iters == 0 {
            return domain("max_outer_iters must be at least 1");
        }
        if !(self.rel_tol > 0.0) {
            return domain("rel_tol must be positive");
        }
        if let Some(s) = self.sigma_override {
            if !(s >= 0.0) || !s.is_finite() {
                return domain(format!("noise power must be nonnegative, got {s}"));
            }
        }
        match &self.backend {
            Backend::Constrained {
                beta_sq, tail_prob, ..
            } => {
                if let Some(b) = beta_sq {
                    if !(*b > 0.0) || !b.is_finite() {
                        return domain(format!("beta_sq must be positive, got {b}"));
                    }
                }
                if !(*tail_prob > 0.0 && *tail_prob < 1.0) {
                    return domain(format!(
                        "tail probability must lie in (0, 1), got {tail_prob}"
                    ));
                }
            }
            Backend::Ficmra { lambda, .. } => {
                if !(*lambda > 0.0) || !lambda.is_finite() {
                    return domain(format!("lambda must be positive, got {lambda}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative step below `rel_tol`.
    Converged,
    MaxIterations,
    /// `T(u)` collapsed to numerically zero.
    Degenerate,
}

/// Accumulated wall time per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub setup: Duration,
    pub weights: Duration,
    pub solves: Duration,
    pub total: Duration,
}

#[derive(Clone, Debug, Serialize)]
pub struct IcmraResult {
    pub u_final: ToeplitzParam,
    /// `G^ε(T(u_{j+1}))` with the `ε` used for the `j`-th weight.
    pub surrogate_trace: Vec<f64>,
    /// Eigenvalues of `T(u_{j+1})`, descending.
    pub eigen_history: Vec<Vec<f64>>,
    /// `‖u_{j+1} − u_j‖ / ‖u_j‖`, `None` while `u_j = 0`.
    pub step_norms: Vec<Option<f64>>,
    pub iters_run: usize,
    pub timings: StageTimings,
    pub sigma_used: f64,
    /// Fitting bound of the constrained backend.
    pub beta_sq: Option<f64>,
    /// Multiplier of the closed-form backend.
    pub lambda: Option<f64>,
    /// Total inner iterations (Newton steps or splitting iterations).
    pub inner_iterations: usize,
    pub stop_reason: StopReason,
}

impl IcmraResult {
    pub fn converged(&self) -> bool {
        self.stop_reason != StopReason::MaxIterations || self.iters_run == 1
    }

    pub fn toeplitz(&self) -> CMat {
        self.u_final.to_matrix()
    }
}

/// Runs the reweighted loop on array snapshots.
pub fn run_icmra(x: &Snapshots, geom: &ArrayGeometry, cfg: &IcmraConfig) -> Result<IcmraResult> {
    if x.x.nrows() != geom.num_sensors() {
        return domain(format!(
            "snapshots have {} rows, array has {} sensors",
            x.x.nrows(),
            geom.num_sensors()
        ));
    }
    if x.num_snapshots() == 0 {
        return domain("at least one snapshot is required");
    }
    run_icmra_covariance(&x.sample_covariance(), x.num_snapshots() as f64, geom, cfg)
}

/// CMRA: one constrained solve with identity weight.
pub fn run_cmra(x: &Snapshots, geom: &ArrayGeometry, beta_sq: Option<f64>) -> Result<IcmraResult> {
    let mut cfg = IcmraConfig::cmra();
    if let Backend::Constrained { beta_sq: b, .. } = &mut cfg.backend {
        *b = beta_sq;
    }
    run_icmra(x, geom, &cfg)
}

#[allow(clippy::large_enum_variant)]
enum Stepper {
    Constrained(ConstrainedSolver),
    Ficmra { solver: FicmraSolver, lambda: f64 },
}

/// Runs the reweighted loop on a covariance estimate formed from
/// `l_snapshots` snapshots.
pub fn run_icmra_covariance(
    r_hat: &CMat,
    l_snapshots: f64,
    geom: &ArrayGeometry,
    cfg: &IcmraConfig,
) -> Result<IcmraResult> {
    let start = Instant::now();
    cfg.validate()?;
    if !(l_snapshots > 0.0) {
        return domain("snapshot count must be positive");
    }
    let m = geom.num_sensors();
    if r_hat.nrows() != m || r_hat.ncols() != m {
        return domain(format!(
            "covariance is {}x{}, array has {m} sensors",
            r_hat.nrows(),
            r_hat.ncols()
        ));
    }
    let sigma = match cfg.sigma_override {
        Some(s) => s,
        None => estimate_noise_power(r_hat, geom, cfg.sigma_mode)?,
    };
    let r_scale = HermitianEigen::new(r_hat).max();
    if !(r_scale > 0.0) {
        return Err(DoaError::Numeric("sample covariance is zero".into()));
    }

    let (mut stepper, beta_used, lambda_used) = match &cfg.backend {
        Backend::Constrained {
            beta_sq,
            tail_prob,
            solver,
        } => {
            let beta = match beta_sq {
                Some(b) => *b,
                None => beta_threshold(m, *tail_prob)?,
            };
            let ctx = WeightedErrorContext::sample_whitened(r_hat.clone(), sigma, l_snapshots)?;
            let solver = ConstrainedSolver::new(ctx, geom.clone(), beta, *solver)?;
            (Stepper::Constrained(solver), Some(beta), None)
        }
        Backend::Ficmra { lambda, whitener } => {
            let solver = FicmraSolver::new(r_hat, sigma, geom, *whitener)?;
            (
                Stepper::Ficmra {
                    solver,
                    lambda: *lambda,
                },
                None,
                Some(*lambda),
            )
        }
    };

    let mut u = initial_point(r_hat, sigma, geom, cfg.init, r_scale)?;
    let mut eig_u = HermitianEigen::new(&u.to_matrix());
    let mut spec = cfg.penalty.reset();
    let mut timings = StageTimings {
        setup: start.elapsed(),
        ..Default::default()
    };
    let mut surrogate_trace = Vec::new();
    let mut eigen_history = Vec::new();
    let mut step_norms = Vec::new();
    let mut inner_iterations = 0;
    let mut stop_reason = StopReason::MaxIterations;

    for j in 0..cfg.max_outer_iters {
        let wrap = |e: DoaError| DoaError::Iteration {
            iteration: j + 1,
            source: Box::new(e),
        };
        let t0 = Instant::now();
        let weight = weight_from_eigen(&spec, &eig_u);
        timings.weights += t0.elapsed();

        let t1 = Instant::now();
        let u_next = match &mut stepper {
            Stepper::Constrained(solver) => {
                let sol = solver.solve(&weight).map_err(wrap)?;
                inner_iterations += sol.iterations;
                sol.u
            }
            Stepper::Ficmra { solver, lambda } => solver.solve(&weight, *lambda).map_err(wrap)?,
        };
        timings.solves += t1.elapsed();

        let t_next = u_next.to_matrix();
        let eig = HermitianEigen::new(&t_next);
        surrogate_trace.push(surrogate_from_eigenvalues(&spec, &eig.values));
        let prev_norm = u.norm();
        let step = if prev_norm > 0.0 {
            Some((u_next.as_vector() - u.as_vector()).norm() / prev_norm)
        } else {
            None
        };
        step_norms.push(step);
        let degenerate = eig
            .values
            .iter()
            .all(|&v| v.abs() < DEGENERATE_EIGEN * r_scale);
        eigen_history.push(eig.values.clone());
        eig_u = eig;
        u = u_next;
        spec = schedule_next(&spec);

        if degenerate {
            stop_reason = StopReason::Degenerate;
            break;
        }
        if step.is_some_and(|s| s < cfg.rel_tol) {
            stop_reason = StopReason::Converged;
            break;
        }
    }
    timings.total = start.elapsed();
    Ok(IcmraResult {
        u_final: u,
        iters_run: surrogate_trace.len(),
        surrogate_trace,
        eigen_history,
        step_norms,
        timings,
        sigma_used: sigma,
        beta_sq: beta_used,
        lambda: lambda_used,
        inner_iterations,
        stop_reason,
    })
}

fn initial_point(
    r_hat: &CMat,
    sigma: f64,
    geom: &ArrayGeometry,
    init: Initialization,
    r_scale: f64,
) -> Result<ToeplitzParam> {
    let n = geom.coarray_len();
    let u = match init {
        Initialization::Zero => return Ok(ToeplitzParam::zeros(n)),
        Initialization::RandomGaussian { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = CVec::from_fn(n, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            });
            v[0] = Complex64::new(v[0].norm(), 0.0);
            v.scale(r_scale / (n as f64).sqrt())
        }
        Initialization::FullFillColumn => {
            let full = full_fill_covariance(r_hat, geom);
            let mut v = full.column(0).into_owned();
            v[0] = Complex64::new((v[0].re - sigma).max(0.0), 0.0);
            v
        }
    };
    ToeplitzParam::new(u)
}
