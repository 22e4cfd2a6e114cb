//! ADMM engine for the constrained step.
//!
//! Two copies of the Toeplitz variable are split off: `Y = T(x)` kept in the
//! PSD cone and `Z = K x` kept in the whitened fitting ball. Each iteration is
//! a least-squares Toeplitz fit for `x` (fixed Gram matrix, factored once), an
//! eigenvalue clip for `Y`, a radial scaling for `Z`, and a scaled dual update.
//! The returned point is the best iterate that passed the feasibility check.

use nalgebra::Cholesky;

use crate::error::{DoaError, Result};
use crate::linalg::{HermitianEigen, RVec};

use super::constrained::{
    coords_to_param, from_real, to_real, EngineOutput, Lifted, SolverOptions,
};

const OVER_RELAXATION: f64 = 1.6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

/// Iterates of the splitting method, reusable as a warm start for a problem
/// with the same data and a different weight.
#[derive(Clone, Debug)]
pub struct SplittingState {
    y: RVec,
    z: RVec,
    dual_y: RVec,
    dual_z: RVec,
    rho: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct SplittingEngine {
    gram: Cholesky<f64, nalgebra::Dyn>,
    pub warm: Option<SplittingState>,
}

impl SplittingEngine {
    pub fn new(lifted: &Lifted, _opts: &SolverOptions) -> Result<Self> {
        let a = &lifted.toeplitz_map;
        let k = &lifted.whitened_map;
        let gram_m = a.transpose() * a + k.transpose() * k;
        let gram = Cholesky::new(gram_m)
            .ok_or_else(|| DoaError::Numeric("Toeplitz Gram matrix is singular".into()))?;
        Ok(SplittingEngine { gram, warm: None })
    }

    fn cold_state(lifted: &Lifted, rho: f64) -> SplittingState {
        let n = lifted.n;
        SplittingState {
            y: RVec::zeros(2 * n * n),
            // Starting Z at the ball center puts the first Toeplitz fit near
            // the data.
            z: lifted.center.clone(),
            dual_y: RVec::zeros(2 * n * n),
            dual_z: RVec::zeros(lifted.center.len()),
            rho,
        }
    }

    /// `(weighted error / L, feasible)` for the normalized iterate `x`.
    fn feasibility(lifted: &Lifted, x: &RVec, tol: f64) -> (f64, bool) {
        let err = (&lifted.whitened_map * x - &lifted.center).norm_squared();
        if err > lifted.radius_sq * (1.0 + tol) {
            return (err, false);
        }
        let eig = HermitianEigen::new(&lifted.toeplitz(x));
        let trace = x[0] * lifted.n as f64;
        (err, eig.min() >= -tol * trace.max(0.0))
    }

    pub fn solve(
        &mut self,
        lifted: &Lifted,
        cost: &RVec,
        opts: &SolverOptions,
    ) -> Result<EngineOutput> {
        let a = &lifted.toeplitz_map;
        let k = &lifted.whitened_map;
        let n = lifted.n;
        let radius = lifted.radius_sq.sqrt();
        let mut st = self
            .warm
            .take()
            .unwrap_or_else(|| Self::cold_state(lifted, opts.rho));
        let mut trace = Vec::new();
        let mut incumbent: Option<(RVec, f64)> = None;
        let (mut primal, mut dual, mut excess) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut x = RVec::zeros(lifted.dim());

        for iter in 1..=opts.max_iters {
            let rhs = a.transpose() * (&st.y - &st.dual_y) + k.transpose() * (&st.z - &st.dual_z)
                - cost.unscale(st.rho);
            x = self.gram.solve(&rhs);
            let tx = a * &x;
            let kx = k * &x;
            let tx_relaxed = tx.scale(OVER_RELAXATION) + st.y.scale(1.0 - OVER_RELAXATION);
            let kx_relaxed = kx.scale(OVER_RELAXATION) + st.z.scale(1.0 - OVER_RELAXATION);

            let y_new = to_real(&crate::toeplitz::psd_project(&from_real(
                &(&tx_relaxed + &st.dual_y),
                n,
            )));
            let z_pre = &kx_relaxed + &st.dual_z;
            let d = &z_pre - &lifted.center;
            let z_new = if d.norm() <= radius {
                z_pre
            } else {
                &lifted.center + d.scale(radius / d.norm())
            };
            st.dual_y += &tx_relaxed - &y_new;
            st.dual_z += &kx_relaxed - &z_new;

            primal = ((&tx - &y_new).norm_squared() + (&kx - &z_new).norm_squared()).sqrt();
            dual = st.rho
                * (a.transpose() * (&y_new - &st.y) + k.transpose() * (&z_new - &st.z)).norm();
            st.y = y_new;
            st.z = z_new;

            let primal_scale = (tx.norm_squared() + kx.norm_squared())
                .sqrt()
                .max((st.y.norm_squared() + st.z.norm_squared()).sqrt())
                .max(1e-12);
            let dual_scale = (st.rho
                * (a.transpose() * &st.dual_y + k.transpose() * &st.dual_z).norm())
            .max(cost.norm());
            let primal_ok = primal <= opts.tol_rel * primal_scale;
            let dual_ok = dual <= opts.tol_rel * dual_scale;

            if primal <= 100.0 * opts.tol_rel * primal_scale {
                let (err, feasible) = Self::feasibility(lifted, &x, opts.tol_feas);
                excess = (err / lifted.radius_sq - 1.0).max(0.0);
                if feasible {
                    let obj = cost.dot(&x);
                    if incumbent.as_ref().is_none_or(|(_, best)| obj < *best) {
                        incumbent = Some((x.clone(), obj));
                    }
                }
            }
            if let Some((_, best)) = &incumbent {
                trace.push(*best);
            }
            if primal_ok && dual_ok {
                if let Some((x_best, _)) = incumbent.take() {
                    self.warm = Some(st);
                    return Ok(EngineOutput {
                        x: x_best,
                        iterations: iter,
                        trace,
                    });
                }
            }

            // Residual balancing.
            if iter % 10 == 0 {
                let rel_p = primal / primal_scale;
                let rel_d = dual / dual_scale.max(1e-12);
                let factor = if rel_p > 10.0 * rel_d {
                    2.0
                } else if rel_d > 10.0 * rel_p {
                    0.5
                } else {
                    1.0
                };
                let new_rho = (st.rho * factor).clamp(RHO_MIN, RHO_MAX);
                if new_rho != st.rho {
                    let ratio = st.rho / new_rho;
                    st.dual_y *= ratio;
                    st.dual_z *= ratio;
                    st.rho = new_rho;
                }
            }
        }
        self.warm = None;
        Err(DoaError::NonConvergence {
            iterations: opts.max_iters,
            primal_residual: primal,
            dual_residual: dual,
            constraint_excess: excess,
            last_iterate: coords_to_param(&x.scale(lifted.scale))
                .into_vector()
                .iter()
                .cloned()
                .collect(),
        })
    }
}
