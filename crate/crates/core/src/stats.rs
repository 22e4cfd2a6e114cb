//! Chi-square quantiles for the fitting bound and the stochastic Cramér–Rao
//! bound used as the reference curve.

use num_complex::Complex64;
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::array_model::{manifold, ArrayGeometry, Scenario};
use crate::error::{domain, DoaError, Result};
use crate::linalg::{cholesky_pd, CMat, RMat};

/// Default tail probability of the fitting bound.
pub const DEFAULT_TAIL_PROB: f64 = 1e-3;

/// `P(χ²_dof ≤ x)`.
pub fn chi2_cdf(x: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return domain("chi-square degrees of freedom must be positive");
    }
    if x.is_nan() {
        return domain("chi-square argument is NaN");
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    Ok(gamma_lr(dof as f64 / 2.0, x / 2.0))
}

fn chi2_sf(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(dof as f64 / 2.0, x / 2.0)
    }
}

/// Inverse CDF of the chi-square distribution.
///
/// Bisection on a bracket grown from the mean; for `p > 1/2` the upper tail is
/// matched instead so quantiles near 1 keep full relative accuracy.
pub fn chi2_inv(p: f64, dof: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return domain(format!("probability must lie in (0, 1), got {p}"));
    }
    if dof == 0 {
        return domain("chi-square degrees of freedom must be positive");
    }
    let upper = p > 0.5;
    let q = 1.0 - p;
    // g(x) increases in x and is zero at the quantile.
    let g = |x: f64| {
        if upper {
            q - chi2_sf(x, dof)
        } else {
            gamma_lr(dof as f64 / 2.0, x / 2.0) - p
        }
    };
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(DoaError::Numeric(
                "chi-square quantile bracket overflow".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `β² = chi2_inv(1 − p, M²)`.
pub fn beta_threshold(m: usize, p: f64) -> Result<f64> {
    if m == 0 {
        return domain("sensor count must be positive");
    }
    chi2_inv(1.0 - p, (m * m) as u32)
}

/// Stochastic (unconditional) CRB for Gaussian sources in white noise,
/// returned as per-source variances in degrees².
///
/// `CRB(θ) = σ/(2L) · [Re{(Dᴴ Π⊥ D) ⊙ (P Aᴴ R⁻¹ A P)ᵀ}]⁻¹` with `D` the
/// derivatives of the steering vectors in radians.
pub fn crlb_stochastic(geom: &ArrayGeometry, scenario: &Scenario) -> Result<Vec<f64>> {
    scenario.validate()?;
    let k = scenario.thetas_deg.len();
    let m = geom.num_sensors();
    if k >= m {
        return domain(format!(
            "stochastic CRB needs fewer sources ({k}) than sensors ({m})"
        ));
    }
    let sigma = scenario.noise_variance();
    let a = manifold(geom, &scenario.thetas_deg)?;
    let p = match &scenario.source_covariance {
        Some(c) => c.clone(),
        None => CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            k,
            scenario.powers.iter().map(|&p| Complex64::new(p, 0.0)),
        )),
    };
    let positions: Vec<f64> = geom.sensors().iter().map(|&s| (s - 1) as f64).collect();
    let d = CMat::from_fn(m, k, |r, c| {
        let theta = scenario.thetas_deg[c].to_radians();
        a[(r, c)] * Complex64::new(0.0, std::f64::consts::PI * positions[r] * theta.cos())
    });
    let r = &a * &p * a.adjoint() + CMat::identity(m, m).scale(sigma);
    let r_inv = cholesky_pd(&r)
        .ok_or_else(|| DoaError::Numeric("model covariance is singular".into()))?
        .inverse();
    let aha = a.adjoint() * &a;
    let aha_inv = cholesky_pd(&aha)
        .ok_or_else(|| DoaError::Numeric("steering vectors are linearly dependent".into()))?
        .inverse();
    let proj_perp = CMat::identity(m, m) - &a * aha_inv * a.adjoint();
    let h = d.adjoint() * proj_perp * &d;
    let g = &p * a.adjoint() * r_inv * &a * &p;
    let fim = RMat::from_fn(k, k, |i, j| (h[(i, j)] * g[(j, i)]).re);
    let inv = fim
        .clone()
        .cholesky()
        .ok_or_else(|| DoaError::Numeric("Fisher information is singular".into()))?
        .inverse();
    let factor = sigma / (2.0 * scenario.n_snapshots as f64);
    let deg2 = (180.0 / std::f64::consts::PI).powi(2);
    Ok((0..k).map(|i| inv[(i, i)] * factor * deg2).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_case_closed_form() {
        assert!((chi2_inv(0.5, 2).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-10);
        assert!((chi2_inv(0.999, 2).unwrap() + 2.0 * 0.001f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &d in &[1u32, 4, 49, 144] {
            for &p in &[0.01, 0.3, 0.9, 0.999] {
                let x = chi2_inv(p, d).unwrap();
                assert!((chi2_cdf(x, d).unwrap() - p).abs() < 1e-9, "p={p} d={d}");
            }
        }
    }

    #[test]
    fn rejects_bad_probability() {
        assert!(chi2_inv(0.0, 3).is_err());
        assert!(chi2_inv(1.0, 3).is_err());
    }

    #[test]
    fn beta_grows_with_sensors() {
        assert!(beta_threshold(8, 1e-3).unwrap() > beta_threshold(7, 1e-3).unwrap());
        assert_eq!(
            beta_threshold(7, 1e-3).unwrap(),
            chi2_inv(0.999, 49).unwrap()
        );
    }

    #[test]
    fn crb_shrinks_with_snr_and_snapshots() {
        let g = ArrayGeometry::ula(7).unwrap();
        let base =
            crlb_stochastic(&g, &Scenario::equal_power(vec![-5.0, 10.0], 0.0, 100, 0)).unwrap();
        let hi_snr =
            crlb_stochastic(&g, &Scenario::equal_power(vec![-5.0, 10.0], 10.0, 100, 0)).unwrap();
        let more_l =
            crlb_stochastic(&g, &Scenario::equal_power(vec![-5.0, 10.0], 0.0, 400, 0)).unwrap();
        for i in 0..2 {
            assert!(hi_snr[i] < base[i]);
            assert!((more_l[i] * 4.0 - base[i]).abs() < 1e-9 * base[i]);
        }
        let close =
            crlb_stochastic(&g, &Scenario::equal_power(vec![-2.0, 2.0], 0.0, 100, 0)).unwrap();
        let far =
            crlb_stochastic(&g, &Scenario::equal_power(vec![-20.0, 20.0], 0.0, 100, 0)).unwrap();
        assert!(close[0] > far[0]);
    }
}
