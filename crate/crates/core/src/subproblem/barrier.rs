//! Log-barrier interior-point engine for the constrained step.
//!
//! Barrier `φ(x) = −log det T(x) − log(r² − ‖K x − d‖²)` with parameter
//! `ν = N + 1`; the central path `min t⟨c, x⟩ + φ(x)` is followed with damped
//! Newton steps until `ν/t` falls below the requested gap. The feasible set does
//! not depend on the weight, so its analytic center is computed once and every
//! solve starts there.

use crate::error::{domain, DoaError, Result};
use crate::linalg::{cholesky_pd, CMat, HermitianEigen, RMat, RVec};

use super::constrained::{coords_to_param, EngineOutput, Lifted, SolverOptions};

/// Path parameter growth per stage.
const MU: f64 = 20.0;
/// Newton decrement `λ²/2` at which a stage counts as centered.
const NEWTON_TOL: f64 = 1e-9;
/// Newton steps per stage before the stage is accepted as is.
const STAGE_STEPS: usize = 60;
/// Armijo fraction of the line search.
const ARMIJO: f64 = 0.25;
/// Objective magnitude below which the gap target stops shrinking
/// (normalized units).
const OBJECTIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub(crate) struct BarrierEngine {
    start: RVec,
    ktk: RMat,
}

struct Eval {
    value: f64,
    grad: RVec,
    hess: RMat,
}

impl BarrierEngine {
    pub fn new(lifted: &Lifted, opts: &SolverOptions) -> Result<Self> {
        let k = &lifted.whitened_map;
        let ktk = k.transpose() * k;
        let dim = lifted.dim();
        let ridge = 1e-14 * (0..dim).map(|i| ktk[(i, i)]).fold(0.0, f64::max);
        let normal = &ktk + RMat::identity(dim, dim).scale(ridge);
        let x_fit = normal
            .cholesky()
            .ok_or_else(|| DoaError::Numeric("fitting map is rank deficient".into()))?
            .solve(&(k.transpose() * &lifted.center));
        let q_fit = (k * &x_fit - &lifted.center).norm_squared();
        if q_fit >= lifted.radius_sq {
            return domain(format!(
                "fitting bound is infeasible: the best Toeplitz fit has whitened error {:.4e} > {:.4e}",
                q_fit, lifted.radius_sq
            ));
        }
        let mut engine = BarrierEngine {
            start: x_fit.clone(),
            ktk,
        };
        let mut budget = opts.max_iters.max(200);
        let min_eig = HermitianEigen::new(&lifted.toeplitz(&x_fit)).min();
        let interior = if min_eig > 0.0 {
            x_fit
        } else {
            engine.phase_one(lifted, x_fit, -min_eig + 1.0, &mut budget)?
        };
        let zero = RVec::zeros(dim);
        engine.start = engine.center(lifted, interior, &zero, 0.0, false, &mut budget)?;
        Ok(engine)
    }

    pub fn start(&self) -> &RVec {
        &self.start
    }

    /// Minimizes the PSD slack `s` in `T(x) + sI ⪰ 0` until it turns negative.
    fn phase_one(&self, lifted: &Lifted, x: RVec, s0: f64, budget: &mut usize) -> Result<RVec> {
        let dim = lifted.dim();
        let mut z = RVec::zeros(dim + 1);
        z.rows_mut(0, dim).copy_from(&x);
        z[dim] = s0;
        let mut c = RVec::zeros(dim + 1);
        c[dim] = 1.0;
        let nu = lifted.n as f64 + 1.0;
        let mut t = 1.0;
        loop {
            z = self.center(lifted, z, &c, t, true, budget)?;
            if z[dim] < 0.0 {
                return Ok(z.rows(0, dim).into_owned());
            }
            if nu / t < 1e-10 {
                return domain(
                    "no positive semidefinite Toeplitz matrix satisfies the fitting bound",
                );
            }
            t *= MU;
        }
    }

    fn evaluate(
        &self,
        lifted: &Lifted,
        z: &RVec,
        slack: bool,
        with_derivatives: bool,
    ) -> Option<Eval> {
        let dim = lifted.dim();
        let x = z.rows(0, dim).into_owned();
        let mut f: CMat = lifted.toeplitz(&x);
        if slack {
            for i in 0..lifted.n {
                f[(i, i)] += z[dim];
            }
        }
        let chol = cholesky_pd(&f)?;
        let logdet: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.re.ln())
                .sum::<f64>();
        let res = &lifted.whitened_map * &x - &lifted.center;
        let room = lifted.radius_sq - res.norm_squared();
        if !(room > 0.0) || !logdet.is_finite() {
            return None;
        }
        let value = -logdet - room.ln();
        let p = z.len();
        if !with_derivatives {
            return Some(Eval {
                value,
                grad: RVec::zeros(0),
                hess: RMat::zeros(0, 0),
            });
        }
        let f_inv = chol.inverse();
        let mut prods: Vec<CMat> = lifted.basis.iter().map(|b| &f_inv * b).collect();
        if slack {
            prods.push(f_inv.clone());
        }
        let mut grad = RVec::zeros(p);
        let mut hess = RMat::zeros(p, p);
        for i in 0..p {
            grad[i] = -prods[i].trace().re;
            for j in 0..=i {
                let h = trace_of_product(&prods[i], &prods[j]);
                hess[(i, j)] = h;
                hess[(j, i)] = h;
            }
        }
        let gq = lifted.whitened_map.transpose() * &res * 2.0;
        let mut g_ball = RVec::zeros(p);
        g_ball.rows_mut(0, dim).copy_from(&gq.unscale(room));
        grad += &g_ball;
        let mut block = hess.view_mut((0, 0), (dim, dim));
        block += self.ktk.scale(2.0 / room);
        hess += &g_ball * g_ball.transpose();
        Some(Eval { value, grad, hess })
    }

    /// Damped Newton minimization of `t⟨c, z⟩ + φ(z)` from a strictly feasible
    /// `z`.
    fn center(
        &self,
        lifted: &Lifted,
        mut z: RVec,
        c: &RVec,
        t: f64,
        slack: bool,
        budget: &mut usize,
    ) -> Result<RVec> {
        for _ in 0..STAGE_STEPS {
            let ev = self
                .evaluate(lifted, &z, slack, true)
                .ok_or_else(|| DoaError::Numeric("barrier iterate left the interior".into()))?;
            let g = c.scale(t) + &ev.grad;
            let step = newton_direction(&ev.hess, &g);
            let decrement = -g.dot(&step);
            let f0 = t * c.dot(&z) + ev.value;
            // Below the round-off level of f the line search cannot see descent.
            if !(decrement > 2.0 * NEWTON_TOL.max(1e-14 * f0.abs())) {
                return Ok(z);
            }
            if *budget == 0 {
                return Err(DoaError::NonConvergence {
                    iterations: 0,
                    primal_residual: decrement,
                    dual_residual: f64::NAN,
                    constraint_excess: 0.0,
                    last_iterate: coords_to_param(
                        &z.rows(0, lifted.dim()).into_owned().scale(lifted.scale),
                    )
                    .into_vector()
                    .iter()
                    .copied()
                    .collect(),
                });
            }
            *budget -= 1;
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let trial = &z + step.scale(alpha);
                if let Some(e) = self.evaluate(lifted, &trial, slack, false) {
                    if t * c.dot(&trial) + e.value <= f0 - ARMIJO * alpha * decrement {
                        z = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                return Ok(z);
            }
        }
        Ok(z)
    }

    pub fn solve(
        &mut self,
        lifted: &Lifted,
        cost: &RVec,
        opts: &SolverOptions,
    ) -> Result<EngineOutput> {
        let nu = lifted.n as f64 + 1.0;
        let mut budget = opts.max_iters;
        let mut z = self.start.clone();
        let mut t = nu / cost.dot(&z).abs().max(OBJECTIVE_FLOOR);
        let mut trace = Vec::new();
        loop {
            z = self
                .center(lifted, z, cost, t, false, &mut budget)
                .map_err(|e| match e {
                    DoaError::NonConvergence {
                        primal_residual,
                        dual_residual,
                        constraint_excess,
                        last_iterate,
                        ..
                    } => DoaError::NonConvergence {
                        iterations: opts.max_iters,
                        primal_residual,
                        dual_residual,
                        constraint_excess,
                        last_iterate,
                    },
                    other => other,
                })?;
            let obj = cost.dot(&z);
            trace.push(obj);
            if nu / t <= opts.tol_rel * obj.abs().max(OBJECTIVE_FLOOR) {
                break;
            }
            t *= MU;
        }
        Ok(EngineOutput {
            x: z,
            iterations: opts.max_iters - budget,
            trace,
        })
    }
}

/// `Re tr(A B)`.
fn trace_of_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for r in 0..n {
        for k in 0..n {
            acc += (a[(r, k)] * b[(k, r)]).re;
        }
    }
    acc
}

/// Solves `H Δ = −g`, falling back to LU when round-off breaks positive
/// definiteness.
fn newton_direction(h: &RMat, g: &RVec) -> RVec {
    if let Some(ch) = h.clone().cholesky() {
        return -ch.solve(g);
    }
    match h.clone().lu().solve(g) {
        Some(v) => -v,
        None => -g.clone(),
    }
}
