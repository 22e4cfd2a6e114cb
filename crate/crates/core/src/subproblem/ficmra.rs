//! Closed-form reweighted step without the PSD constraint.
//!
//! The Lagrangian form `λ tr(W T(u)) + ½ ‖S (R̂ − σI − T_Ω(u)) S‖_F²` is
//! stationary where
//!
//! ```text
//! T*(C T(u) C) = T*(B − λW),   C = Γᵀ W_h⁻¹ Γ,   B = Γᵀ W_h⁻¹ (R̂ − σI) W_h⁻¹ Γ
//! ```
//!
//! (`B = C` when the whitener is `W_h = R̂ − σI`). The left side is
//! real-linear in `u` and is written as `Z₁ u + Z₂ ū`, then solved as a real
//! least-squares system with a minimum-norm pseudo-inverse.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::ArrayGeometry;
use crate::error::{domain, DoaError, Result};
use crate::linalg::{ensure_hermitian, pinv_real, CMat, CVec, RMat, RVec};
use crate::penalty::WeightMatrix;
use crate::toeplitz::{lift, toeplitz_adjoint, ToeplitzParam, WeightedErrorContext};

/// Relative singular-value cutoff of the pseudo-inverse.
pub const PINV_RCOND: f64 = 1e-10;

/// `u ↦ T*(C T(u) C) = Z₁ u + Z₂ ū` for a fixed `N×N` matrix `C`.
#[derive(Clone, Debug)]
pub struct QuadraticOperator {
    pub z1: CMat,
    pub z2: CMat,
    pub c: CMat,
}

impl QuadraticOperator {
    pub fn apply(&self, u: &CVec) -> CVec {
        &self.z1 * u + &self.z2 * u.map(|z| z.conj())
    }

    /// Direct evaluation of `T*(C T(u) C)`; `u[0]` may carry an imaginary part
    /// here, the matrix `T(u)` is then built from the same first-column rule.
    pub fn apply_direct(&self, u: &CVec) -> CVec {
        direct_map(&self.c, u)
    }

    /// Real system acting on `[Re u; Im u]` and producing `[Re h; Im h]`.
    pub fn real_system(&self) -> RMat {
        let rows = self.z1.nrows();
        let n = self.z1.ncols();
        let sum = &self.z1 + &self.z2;
        let diff = &self.z1 - &self.z2;
        let mut zr = RMat::zeros(2 * rows, 2 * n);
        for r in 0..rows {
            for c in 0..n {
                zr[(r, c)] = sum[(r, c)].re;
                zr[(r, n + c)] = -diff[(r, c)].im;
                zr[(rows + r, c)] = sum[(r, c)].im;
                zr[(rows + r, n + c)] = diff[(r, c)].re;
            }
        }
        zr
    }
}

/// `T(u)` extended to a complex `u[0]` (lower triangle `u[m−n]`, upper
/// triangle conjugated, diagonal `u[0]`).
fn raw_toeplitz(u: &CVec) -> CMat {
    let n = u.len();
    CMat::from_fn(n, n, |r, c| if r >= c { u[r - c] } else { u[c - r].conj() })
}

fn direct_map(c: &CMat, u: &CVec) -> CVec {
    toeplitz_adjoint(&(c * raw_toeplitz(u) * c)).expect("square by construction")
}

/// Builds `Z₁, Z₂` by probing the map with `e_k` and `j e_k`:
/// `f(e_k) = Z₁e_k + Z₂e_k`, `f(j e_k) = j(Z₁e_k − Z₂e_k)`.
pub fn build_quadratic_operator(c: &CMat) -> Result<QuadraticOperator> {
    let n = crate::linalg::ensure_square(c, "C")?;
    if n == 0 {
        return domain("C is empty");
    }
    let j = Complex64::new(0.0, 1.0);
    let mut z1 = CMat::zeros(2 * n - 1, n);
    let mut z2 = CMat::zeros(2 * n - 1, n);
    for k in 0..n {
        let mut e = CVec::zeros(n);
        e[k] = Complex64::new(1.0, 0.0);
        let f_re = direct_map(c, &e);
        if k == 0 {
            // u[0] enters T(u) only once (real diagonal), all of it in Z₁.
            z1.set_column(0, &f_re);
            continue;
        }
        e[k] = j;
        let f_im = direct_map(c, &e);
        let col1 = (&f_re - f_im.map(|z| z * j)).unscale(2.0);
        let col2 = (&f_re + f_im.map(|z| z * j)).unscale(2.0);
        z1.set_column(k, &col1);
        z2.set_column(k, &col2);
    }
    Ok(QuadraticOperator {
        z1,
        z2,
        c: c.clone(),
    })
}

/// Builds `Z₁, Z₂` from column/row slices of a Hermitian `C`.
///
/// Row `k` of `Φ` is `T*(Σ_a C[:, a] C[a+k, :])`, the response to the
/// `k`-th superdiagonal (the coefficient of `ū_k`). The coefficient of `u_k`
/// is the response to the `k`-th subdiagonal, which for Hermitian `C` is the
/// conjugated, lag-reversed row of `Φ`.
pub fn build_quadratic_operator_explicit(c: &CMat) -> Result<QuadraticOperator> {
    ensure_hermitian(c, 1e-10, "C")?;
    let n = c.nrows();
    if n == 0 {
        return domain("C is empty");
    }
    let lags = 2 * n - 1;
    let mut z1 = CMat::zeros(lags, n);
    let mut z2 = CMat::zeros(lags, n);
    for k in 0..n {
        let cols = c.columns(0, n - k);
        let rows = c.rows(k, n - k);
        let phi_k = toeplitz_adjoint(&(cols * rows))?;
        for l in 0..lags {
            z1[(l, k)] = phi_k[lags - 1 - l].conj();
        }
        if k > 0 {
            z2.set_column(k, &phi_k);
        }
    }
    Ok(QuadraticOperator {
        z1,
        z2,
        c: c.clone(),
    })
}

/// Which matrix whitens the fitting term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FicmraWhitener {
    /// `R̂_Ω`: always invertible when `R̂` is.
    SampleCovariance,
    /// `R̂_Ω − σI`: singular when `σ` is the smallest eigenvalue of `R̂_Ω`.
    NoiseRemoved,
}

/// Closed-form solver with the data-dependent pieces (`C`, `B`, `Z_r⁺`)
/// computed once; only the weight changes between calls.
#[derive(Clone, Debug)]
pub struct FicmraSolver {
    n: usize,
    linear_term: CMat,
    operator: QuadraticOperator,
    system_pinv: RMat,
}

impl FicmraSolver {
    pub fn new(
        r_hat: &CMat,
        sigma: f64,
        geom: &ArrayGeometry,
        whitener: FicmraWhitener,
    ) -> Result<Self> {
        let ctx = match whitener {
            FicmraWhitener::SampleCovariance => {
                WeightedErrorContext::sample_whitened(r_hat.clone(), sigma, 1.0)
            }
            FicmraWhitener::NoiseRemoved => {
                WeightedErrorContext::noise_removed(r_hat.clone(), sigma, 1.0)
            }
        }
        .map_err(|e| match e {
            DoaError::Numeric(msg) => DoaError::Numeric(format!(
                "{msg}; the noise-removed covariance cannot be inverted, \
                 use more snapshots or the full-fill noise estimate"
            )),
            other => other,
        })?;
        Self::from_context(&ctx, geom)
    }

    pub fn from_context(ctx: &WeightedErrorContext, geom: &ArrayGeometry) -> Result<Self> {
        if ctx.r_hat().nrows() != geom.num_sensors() {
            return domain("covariance size does not match the array");
        }
        let w_inv = ctx.whitener_inv();
        let c = lift(geom, w_inv);
        let linear_term = lift(geom, &(w_inv * ctx.target() * w_inv));
        let operator = build_quadratic_operator(&c)?;
        let system_pinv = pinv_real(&operator.real_system(), PINV_RCOND);
        Ok(FicmraSolver {
            n: geom.coarray_len(),
            linear_term,
            operator,
            system_pinv,
        })
    }

    pub fn operator(&self) -> &QuadraticOperator {
        &self.operator
    }

    /// Right-hand side `h = T*(B − λW)`.
    pub fn rhs(&self, weight: &WeightMatrix, lambda: f64) -> Result<CVec> {
        if weight.dim() != self.n {
            return domain("weight dimension does not match the coarray");
        }
        toeplitz_adjoint(&(&self.linear_term - weight.matrix().scale(lambda)))
    }

    pub fn solve(&self, weight: &WeightMatrix, lambda: f64) -> Result<ToeplitzParam> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return domain(format!("lambda must be positive, got {lambda}"));
        }
        let h = self.rhs(weight, lambda)?;
        let lags = h.len();
        let mut hr = RVec::zeros(2 * lags);
        for (i, z) in h.iter().enumerate() {
            hr[i] = z.re;
            hr[lags + i] = z.im;
        }
        let ur = &self.system_pinv * hr;
        let n = self.n;
        let mut u = CVec::from_fn(n, |k, _| Complex64::new(ur[k], ur[n + k]));
        // The Im u[0] column is orthogonal to every Hermitian-consistent
        // right-hand side, so this only removes round-off.
        u[0].im = 0.0;
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DoaError::Numeric(
                "closed-form step produced non-finite values".into(),
            ));
        }
        ToeplitzParam::new(u)
    }
}

/// One closed-form step with the noise-removed whitener `R̂ − σI`.
pub fn solve_ficmra(
    weight: &WeightMatrix,
    r_hat: &CMat,
    sigma: f64,
    lambda: f64,
    geom: &ArrayGeometry,
) -> Result<ToeplitzParam> {
    FicmraSolver::new(r_hat, sigma, geom, FicmraWhitener::NoiseRemoved)?.solve(weight, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_operator_reduces_to_diagonal_sums() {
        // T*(T(u)) = [u₁, 2u₀, ū₁] for N = 2 (lags −1, 0, 1).
        let op = build_quadratic_operator(&CMat::identity(2, 2)).unwrap();
        let u = CVec::from_vec(vec![c(0.7, 0.0), c(-0.3, 1.1)]);
        let got = op.apply(&u);
        let want = CVec::from_vec(vec![u[1], u[0] * 2.0, u[1].conj()]);
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn explicit_and_probed_constructions_agree() {
        let m = CMat::from_fn(4, 4, |r, k| {
            c((r * 3 + k) as f64 * 0.1, (r as f64 - k as f64) * 0.2)
        });
        let herm = &m * m.adjoint();
        let a = build_quadratic_operator(&herm).unwrap();
        let b = build_quadratic_operator_explicit(&herm).unwrap();
        assert!((&a.z1 - &b.z1).norm() < 1e-12);
        assert!((&a.z2 - &b.z2).norm() < 1e-12);
    }

    #[test]
    fn noise_removed_whitener_singular_for_direct_sigma() {
        let g = ArrayGeometry::ula(3).unwrap();
        let r = crate::array_model::model_covariance(&g, &[5.0], &[2.0], 1.0).unwrap();
        let w = WeightMatrix::scaled_identity(3, 1.0);
        let err = solve_ficmra(&w, &r, 1.0, 0.1, &g).unwrap_err();
        assert!(err.to_string().contains("full-fill"), "{err}");
    }
}
