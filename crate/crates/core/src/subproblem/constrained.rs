//! The constrained reweighted step
//!
//! ```text
//! min_u  tr(W T(u))   s.t.  L ‖S (R̂ − σI − Γ T(u) Γᵀ) S‖_F² ≤ β²,   T(u) ⪰ 0
//! ```
//!
//! with `S = W_h^{−1/2}` the whitener. Two engines share one real-coordinate
//! formulation: a primal log-barrier interior-point method (default) and an
//! operator-splitting (ADMM) method.
//!
//! Internally `u` is divided by the largest eigenvalue of `R̂` and `W` by its
//! largest eigenvalue; both rescalings leave the minimizer unchanged.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::ArrayGeometry;
use crate::error::{domain, DoaError, Result};
use crate::linalg::{CMat, HermitianEigen, RMat, RVec};
use crate::penalty::WeightMatrix;
use crate::toeplitz::{select, weighted_error, ToeplitzParam, WeightedErrorContext};

use super::barrier::BarrierEngine;
use super::splitting::SplittingEngine;
pub use super::splitting::SplittingState;

/// Which engine solves the constrained step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Log-barrier path following with damped Newton steps.
    #[default]
    Barrier,
    /// ADMM on the splitting `Y = T(u)`, `Z = S Γ T(u) Γᵀ S`.
    Splitting,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: InnerMethod,
    /// Newton steps (barrier) or iterations (splitting).
    pub max_iters: usize,
    /// Relative slack on the fitting bound and on the PSD floor.
    pub tol_feas: f64,
    /// Relative duality gap (barrier) or relative primal/dual residual
    /// (splitting).
    pub tol_rel: f64,
    /// Initial augmented-Lagrangian penalty of the splitting engine.
    pub rho: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: InnerMethod::Barrier,
            max_iters: 2000,
            tol_feas: 1e-6,
            tol_rel: 1e-6,
            rho: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn splitting() -> Self {
        SolverOptions {
            method: InnerMethod::Splitting,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConstrainedProblem {
    pub weight: WeightMatrix,
    pub ctx: WeightedErrorContext,
    pub beta_sq: f64,
    pub geom: ArrayGeometry,
    pub solver_opts: SolverOptions,
}

#[derive(Clone, Debug)]
pub struct ConstrainedSolution {
    pub u: ToeplitzParam,
    /// `tr(W T(u))` at the returned point.
    pub objective: f64,
    pub weighted_error: f64,
    pub iterations: usize,
    /// Objective after each barrier stage or, for splitting, the best feasible
    /// objective after each iteration from the first feasible iterate on.
    pub objective_trace: Vec<f64>,
}

/// Solves one constrained subproblem from a cold start.
pub fn solve_constrained(p: &ConstrainedProblem) -> Result<ConstrainedSolution> {
    let mut solver =
        ConstrainedSolver::new(p.ctx.clone(), p.geom.clone(), p.beta_sq, p.solver_opts)?;
    solver.solve(&p.weight)
}

/// Real-coordinate data shared by both engines, in normalized units
/// `x = u / scale`.
#[derive(Clone, Debug)]
pub(crate) struct Lifted {
    pub n: usize,
    pub scale: f64,
    /// `T(e_i)` for each real coordinate.
    pub basis: Vec<CMat>,
    /// `x ↦ T(x)` as a real `2N² × (2N−1)` matrix.
    pub toeplitz_map: RMat,
    /// `x ↦ scale · S Γ T(x) Γᵀ S` as a real `2M² × (2N−1)` matrix.
    pub whitened_map: RMat,
    /// Whitened ball center `S (R̂ − σI) S` and squared radius `β²/L`.
    pub center: RVec,
    pub radius_sq: f64,
}

pub(crate) fn to_real(m: &CMat) -> RVec {
    let mut v = RVec::zeros(2 * m.len());
    for (i, z) in m.iter().enumerate() {
        v[2 * i] = z.re;
        v[2 * i + 1] = z.im;
    }
    v
}

pub(crate) fn from_real(v: &RVec, n: usize) -> CMat {
    CMat::from_iterator(
        n,
        n,
        (0..n * n).map(|i| Complex64::new(v[2 * i], v[2 * i + 1])),
    )
}

pub(crate) fn coords_to_param(x: &RVec) -> ToeplitzParam {
    ToeplitzParam::from_real_coords(x.as_slice())
}

impl Lifted {
    fn new(ctx: &WeightedErrorContext, geom: &ArrayGeometry, beta_sq: f64) -> Result<Self> {
        let n = geom.coarray_len();
        let m = geom.num_sensors();
        let dim = 2 * n - 1;
        let scale = HermitianEigen::new(ctx.r_hat()).max();
        if !(scale > 0.0) {
            return Err(DoaError::Numeric("sample covariance is zero".into()));
        }
        let s = ctx.whitener_inv_sqrt();
        let mut basis = Vec::with_capacity(dim);
        let mut toeplitz_map = RMat::zeros(2 * n * n, dim);
        let mut whitened_map = RMat::zeros(2 * m * m, dim);
        for i in 0..dim {
            let mut e = RVec::zeros(dim);
            e[i] = 1.0;
            let t = coords_to_param(&e).to_matrix();
            toeplitz_map.set_column(i, &to_real(&t));
            let k = s * select(geom, &t)? * s;
            whitened_map.set_column(i, &to_real(&k).scale(scale));
            basis.push(t);
        }
        let center = to_real(&(s * ctx.target() * s));
        Ok(Lifted {
            n,
            scale,
            basis,
            toeplitz_map,
            whitened_map,
            center,
            radius_sq: beta_sq / ctx.l_snapshots(),
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `Σ x_i T(e_i)`.
    pub fn toeplitz(&self, x: &RVec) -> CMat {
        coords_to_param(x).to_matrix()
    }
}

/// Re-usable solver for a fixed covariance, noise power and bound; only the
/// weight changes between calls.
#[derive(Clone, Debug)]
pub struct ConstrainedSolver {
    ctx: WeightedErrorContext,
    geom: ArrayGeometry,
    beta_sq: f64,
    opts: SolverOptions,
    lifted: Lifted,
    engine: Engine,
}

#[derive(Clone, Debug)]
enum Engine {
    Barrier(Box<BarrierEngine>),
    Splitting(Box<SplittingEngine>),
}

impl ConstrainedSolver {
    pub fn new(
        ctx: WeightedErrorContext,
        geom: ArrayGeometry,
        beta_sq: f64,
        opts: SolverOptions,
    ) -> Result<Self> {
        if !(beta_sq > 0.0) || !beta_sq.is_finite() {
            return domain(format!("fitting bound must be positive, got {beta_sq}"));
        }
        if ctx.r_hat().nrows() != geom.num_sensors() {
            return domain("covariance size does not match the array");
        }
        if opts.max_iters == 0
            || !(opts.rho > 0.0)
            || !(opts.tol_feas > 0.0)
            || !(opts.tol_rel > 0.0)
        {
            return domain("invalid solver options");
        }
        let lifted = Lifted::new(&ctx, &geom, beta_sq)?;
        let engine = match opts.method {
            InnerMethod::Barrier => Engine::Barrier(Box::new(BarrierEngine::new(&lifted, &opts)?)),
            InnerMethod::Splitting => {
                Engine::Splitting(Box::new(SplittingEngine::new(&lifted, &opts)?))
            }
        };
        Ok(ConstrainedSolver {
            ctx,
            geom,
            beta_sq,
            opts,
            lifted,
            engine,
        })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta_sq
    }

    /// Strictly feasible point used to start every barrier solve.
    pub fn interior_point(&self) -> Option<ToeplitzParam> {
        match &self.engine {
            Engine::Barrier(b) => Some(coords_to_param(&b.start().scale(self.lifted.scale))),
            Engine::Splitting(_) => None,
        }
    }

    /// Clears (or seeds) the splitting warm start; no effect on the barrier.
    pub fn set_warm_start(&mut self, state: Option<SplittingState>) {
        if let Engine::Splitting(s) = &mut self.engine {
            s.warm = state;
        }
    }

    /// Solves `min tr(W T(u))` over the feasible set.
    pub fn solve(&mut self, weight: &WeightMatrix) -> Result<ConstrainedSolution> {
        let n = self.geom.coarray_len();
        if weight.dim() != n {
            return domain(format!(
                "weight is {}x{}, coarray has {n} lags",
                weight.dim(),
                weight.dim()
            ));
        }
        let w_scale = HermitianEigen::new(weight.matrix()).max();
        let w_norm = if w_scale > 0.0 {
            weight.matrix().unscale(w_scale)
        } else {
            weight.matrix().clone()
        };
        // tr(W T(x)) = ⟨Aᵀ vec(W), x⟩.
        let cost = self.lifted.toeplitz_map.transpose() * to_real(&w_norm);
        let out = match &mut self.engine {
            Engine::Barrier(b) => b.solve(&self.lifted, &cost, &self.opts)?,
            Engine::Splitting(s) => s.solve(&self.lifted, &cost, &self.opts)?,
        };
        let unit = w_scale.max(f64::MIN_POSITIVE) * self.lifted.scale;
        let u = coords_to_param(&out.x.scale(self.lifted.scale));
        let err = weighted_error(&self.ctx, &u, &self.geom)?;
        Ok(ConstrainedSolution {
            objective: cost.dot(&out.x) * unit,
            weighted_error: err,
            iterations: out.iterations,
            objective_trace: out.trace.iter().map(|v| v * unit).collect(),
            u,
        })
    }
}

/// Result of one engine run, in normalized units.
pub(crate) struct EngineOutput {
    pub x: RVec,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// `tr(W T(u))`.
pub fn trace_objective(weight: &WeightMatrix, u: &ToeplitzParam) -> f64 {
    (weight.matrix() * u.to_matrix()).trace().re
}

/// Post-condition check used by tests and the driver.
pub fn is_feasible(p: &ConstrainedProblem, u: &ToeplitzParam) -> Result<bool> {
    let err = weighted_error(&p.ctx, u, &p.geom)?;
    let t = u.to_matrix();
    let eig = HermitianEigen::new(&t);
    let tr = t.trace().re;
    Ok(err <= p.beta_sq * (1.0 + p.solver_opts.tol_feas)
        && eig.min() >= -p.solver_opts.tol_feas * tr.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::model_covariance;

    fn toy() -> (WeightedErrorContext, ArrayGeometry) {
        let g = ArrayGeometry::ula(3).unwrap();
        let r = model_covariance(&g, &[10.0], &[2.0], 0.5).unwrap();
        (
            WeightedErrorContext::sample_whitened(r, 0.5, 100.0).unwrap(),
            g,
        )
    }

    #[test]
    fn slack_bound_gives_zero() {
        let (ctx, g) = toy();
        let w = WeightMatrix::scaled_identity(3, 1.0);
        let mut s = ConstrainedSolver::new(ctx, g, 1e6, SolverOptions::default()).unwrap();
        let sol = s.solve(&w).unwrap();
        assert!(sol.u.norm() < 1e-6, "{:?}", sol.u);
    }

    #[test]
    fn tight_bound_recovers_truth() {
        let (ctx, g) = toy();
        let truth = model_covariance(&g, &[10.0], &[2.0], 0.0).unwrap();
        let w = WeightMatrix::scaled_identity(3, 1.0);
        let mut s = ConstrainedSolver::new(ctx, g, 1e-6, SolverOptions::default()).unwrap();
        let sol = s.solve(&w).unwrap();
        let rel = (sol.u.to_matrix() - &truth).norm() / truth.norm();
        assert!(rel < 1e-3, "{rel}");
    }

    #[test]
    fn engines_agree_on_identity_weight() {
        let (ctx, g) = toy();
        let w = WeightMatrix::scaled_identity(3, 1.0);
        let mut a =
            ConstrainedSolver::new(ctx.clone(), g.clone(), 3.0, SolverOptions::default()).unwrap();
        let splitting = SolverOptions {
            max_iters: 20000,
            ..SolverOptions::splitting()
        };
        let mut b = ConstrainedSolver::new(ctx, g, 3.0, splitting).unwrap();
        let sa = a.solve(&w).unwrap();
        let sb = b.solve(&w).unwrap();
        assert!(
            (sa.objective - sb.objective).abs() < 1e-4 * sa.objective.abs(),
            "{} vs {}",
            sa.objective,
            sb.objective
        );
    }

    #[test]
    fn rejects_nonpositive_bound() {
        let (ctx, g) = toy();
        assert!(ConstrainedSolver::new(ctx, g, 0.0, SolverOptions::default()).is_err());
    }
}
