//! DOAs and powers from a recovered `T(û)`, and the grid-search MUSIC
//! baseline.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array_model::{spatial_frequency, steering_vector, ArrayGeometry};
use crate::error::{domain, DoaError, Result};
use crate::linalg::{ensure_hermitian, polynomial_roots, CMat, HermitianEigen, RMat, RVec};
use crate::toeplitz::{lift, psd_project, toeplitz_adjoint};

/// Default relative eigenvalue threshold of [`estimate_rank`].
pub const DEFAULT_RANK_ETA: f64 = 5e-3;

/// Roots with modulus up to `1 + ROOT_MODULUS_SLACK` are admissible.
const ROOT_MODULUS_SLACK: f64 = 1e-6;
/// Roots closer than this in angle are one root.
const ROOT_ANGLE_MERGE: f64 = 1e-4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    /// Ascending, each in (−90°, 90°).
    pub thetas_deg: Vec<f64>,
    pub powers: Vec<f64>,
    pub k_hat: usize,
    /// `‖T − Σ p_k a_k a_kᴴ‖_F` of the decomposition it came from, when
    /// meaningful.
    pub residual: Option<f64>,
}

impl DoaEstimate {
    pub fn empty() -> Self {
        DoaEstimate::default()
    }

    fn checked(self) -> Result<Self> {
        if self.thetas_deg.len() != self.k_hat || self.powers.len() != self.k_hat {
            return Err(DoaError::Numeric(
                "estimate sizes disagree with k_hat".into(),
            ));
        }
        if self.thetas_deg.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DoaError::Numeric(format!(
                "estimated DOAs not strictly increasing: {:?}",
                self.thetas_deg
            )));
        }
        if self.thetas_deg.iter().any(|t| !(t.abs() < 90.0))
            || self.powers.iter().any(|p| !(*p >= 0.0))
        {
            return Err(DoaError::Numeric(
                "estimate violates angle or power bounds".into(),
            ));
        }
        Ok(self)
    }
}

/// Number of eigenvalues above `eta · λ_max`, capped at `N − 1`.
pub fn estimate_rank(t: &CMat, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return domain(format!("rank threshold must lie in (0, 1), got {eta}"));
    }
    ensure_hermitian(t, 1e-8, "rank argument")?;
    let n = t.nrows();
    let eig = HermitianEigen::new(t);
    let top = eig.max();
    if !(top > 0.0) {
        return Ok(0);
    }
    let k = eig.values.iter().filter(|&&v| v > eta * top).count();
    Ok(k.min(n.saturating_sub(1)))
}

/// `f(ω) = Σ_l c_l e^{jωl}` over lags `l = −(N−1)..N−1`, with its first two
/// derivatives.
fn lag_series(coeffs: &[Complex64], omega: f64) -> (f64, f64, f64) {
    let n = coeffs.len().div_ceil(2);
    let (mut f, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for (i, c) in coeffs.iter().enumerate() {
        let l = i as f64 - (n - 1) as f64;
        let z = c * Complex64::from_polar(1.0, omega * l);
        f += z.re;
        d1 -= l * z.im;
        d2 -= l * l * z.re;
    }
    (f, d1, d2)
}

/// Newton refinement of a minimum of the null spectrum `f(ω)`.
fn polish_frequency(coeffs: &[Complex64], mut omega: f64) -> f64 {
    for _ in 0..20 {
        let (_, d1, d2) = lag_series(coeffs, omega);
        if !(d2 > 0.0) {
            break;
        }
        let step = d1 / d2;
        if step.abs() > 1e-2 {
            break;
        }
        omega -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    omega
}

/// Vandermonde decomposition of a PSD Toeplitz matrix with `k` components by
/// rooting its noise-subspace polynomial.
pub fn vandermonde_decompose(t: &CMat, k: usize) -> Result<DoaEstimate> {
    ensure_hermitian(t, 1e-8, "Toeplitz argument")?;
    let n = t.nrows();
    if k == 0 {
        return Ok(DoaEstimate::empty());
    }
    if k >= n {
        return domain(format!("{k} components need more than {n} lags"));
    }
    let eig = HermitianEigen::new(t);
    let noise = eig.vectors.columns(k, n - k);
    let g = noise * noise.adjoint();
    let coeffs: Vec<Complex64> = toeplitz_adjoint(&g)?.iter().copied().collect();
    let roots = polynomial_roots(&coeffs)?;

    let mut candidates: Vec<(f64, f64, Complex64)> = roots
        .iter()
        .filter(|z| z.norm() <= 1.0 + ROOT_MODULUS_SLACK)
        .map(|&z| ((1.0 - z.norm()).abs(), lag_series(&coeffs, z.arg()).0, z))
        .collect();
    // Closest to the circle first, lower null spectrum (higher pseudo-spectrum)
    // breaking ties.
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut omegas: Vec<f64> = Vec::with_capacity(k);
    let mut kept = Vec::new();
    for (_, _, z) in &candidates {
        if omegas.len() == k {
            break;
        }
        let w = z.arg();
        if omegas.iter().any(|&o| angle_gap(o, w) < ROOT_ANGLE_MERGE) {
            continue;
        }
        let w = polish_frequency(&coeffs, w);
        let s = w / PI;
        if !(s.abs() < 1.0) || s.asin().to_degrees().abs() >= 90.0 {
            log::warn!("dropping root at the array endfire (ω = {w:.6})");
            continue;
        }
        omegas.push(w);
        kept.push(*z);
    }
    if omegas.len() < k {
        return Err(DoaError::RootPairing {
            expected: k,
            found: candidates.iter().map(|c| c.2).collect(),
        });
    }
    let mut thetas: Vec<f64> = omegas
        .iter()
        .map(|w| (w / PI).asin().to_degrees())
        .collect();
    thetas.sort_by(f64::total_cmp);
    let coarray = ArrayGeometry::ula(n)?;
    let powers = power_least_squares(t, 0.0, &thetas, &coarray)?;
    let residual = reconstruction_residual(t, &thetas, &powers, &coarray)?;
    DoaEstimate {
        k_hat: k,
        thetas_deg: thetas,
        powers,
        residual: Some(residual),
    }
    .checked()
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn reconstruction_residual(
    t: &CMat,
    thetas: &[f64],
    powers: &[f64],
    geom: &ArrayGeometry,
) -> Result<f64> {
    let mut model = CMat::zeros(t.nrows(), t.ncols());
    for (&th, &p) in thetas.iter().zip(powers) {
        let a = steering_vector(geom, th)?;
        model += (&a * a.adjoint()).scale(p);
    }
    Ok((t - model).norm())
}

/// Nonnegative least squares `min ‖vec(R̂ − σI) − Σ p_k vec(a_k a_kᴴ)‖` over
/// `p ⪰ 0`, by repeatedly zeroing negative coordinates and re-solving on the
/// remaining support.
pub fn power_least_squares(
    r_hat: &CMat,
    sigma: f64,
    thetas: &[f64],
    geom: &ArrayGeometry,
) -> Result<Vec<f64>> {
    let m = geom.num_sensors();
    if r_hat.nrows() != m || r_hat.ncols() != m {
        return domain(format!(
            "covariance is {}x{}, array has {m} sensors",
            r_hat.nrows(),
            r_hat.ncols()
        ));
    }
    let k = thetas.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let steer = thetas
        .iter()
        .map(|&t| steering_vector(geom, t))
        .collect::<Result<Vec<_>>>()?;
    let target = r_hat - CMat::identity(m, m).scale(sigma);
    // Normal equations: G_kl = |a_kᴴ a_l|², b_k = Re(a_kᴴ (R̂ − σI) a_k).
    let gram = RMat::from_fn(k, k, |i, j| steer[i].dotc(&steer[j]).norm_sqr());
    let rhs = RVec::from_fn(k, |i, _| steer[i].dotc(&(&target * &steer[i])).re);
    if gram.clone().cholesky().is_none() || gram_condition(&gram) > 1e12 {
        return domain("steering vectors are numerically dependent (coalesced DOAs)");
    }
    let mut support: Vec<usize> = (0..k).collect();
    let mut p = vec![0.0; k];
    loop {
        let s = support.len();
        let g = RMat::from_fn(s, s, |i, j| gram[(support[i], support[j])]);
        let b = RVec::from_fn(s, |i, _| rhs[support[i]]);
        let sol = g
            .cholesky()
            .ok_or_else(|| DoaError::Numeric("power normal equations are singular".into()))?
            .solve(&b);
        p.iter_mut().for_each(|v| *v = 0.0);
        for (i, &idx) in support.iter().enumerate() {
            p[idx] = sol[i];
        }
        let before = support.len();
        support.retain(|&idx| p[idx] >= 0.0);
        if support.len() == before {
            break;
        }
        if support.is_empty() {
            p.iter_mut().for_each(|v| *v = 0.0);
            break;
        }
    }
    Ok(p.into_iter().map(|v| v.max(0.0)).collect())
}

fn gram_condition(g: &RMat) -> f64 {
    let sv = g.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// PSD projection, rank estimate and Vandermonde decomposition of a recovered
/// Toeplitz matrix.
pub fn recover_doas(t: &CMat, eta: f64) -> Result<DoaEstimate> {
    let projected = psd_project(t);
    let k = estimate_rank(&projected, eta)?;
    vandermonde_decompose(&projected, k)
}

/// MUSIC grid step in degrees for a given SNR: `10^(−SNR/20 − 1)`.
pub fn music_grid_step(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0 - 1.0)
}

/// Grid-search MUSIC on the physical array. Powers use the mean noise
/// eigenvalue as `σ`.
pub fn music_estimate(
    r_hat: &CMat,
    geom: &ArrayGeometry,
    k: usize,
    grid_step_deg: f64,
) -> Result<DoaEstimate> {
    ensure_hermitian(r_hat, 1e-10, "sample covariance")?;
    let m = geom.num_sensors();
    if r_hat.nrows() != m {
        return domain(format!(
            "covariance is {}x{}, array has {m} sensors",
            r_hat.nrows(),
            r_hat.ncols()
        ));
    }
    if !(grid_step_deg > 0.0) || !grid_step_deg.is_finite() {
        return domain(format!("grid step must be positive, got {grid_step_deg}"));
    }
    if k == 0 {
        return Ok(DoaEstimate::empty());
    }
    if k >= m {
        return domain(format!(
            "MUSIC needs fewer sources ({k}) than sensors ({m})"
        ));
    }
    let eig = HermitianEigen::new(r_hat);
    let noise = eig.vectors.columns(k, m - k);
    let coeffs: Vec<Complex64> = toeplitz_adjoint(&lift(geom, &(noise * noise.adjoint())))?
        .iter()
        .copied()
        .collect();

    let steps = (180.0 / grid_step_deg).floor() as usize;
    let grid: Vec<f64> = (1..steps)
        .map(|i| -90.0 + i as f64 * grid_step_deg)
        .filter(|t| t.abs() < 90.0)
        .collect();
    let spectrum: Vec<f64> = grid
        .iter()
        .map(|&t| {
            1.0 / lag_series(&coeffs, spatial_frequency(t))
                .0
                .max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut peaks: Vec<usize> = (1..grid.len().saturating_sub(1))
        .filter(|&i| spectrum[i] > spectrum[i - 1] && spectrum[i] >= spectrum[i + 1])
        .collect();
    if peaks.len() < k {
        return Err(DoaError::MissingPeaks {
            expected: k,
            found_deg: peaks.iter().map(|&i| grid[i]).collect(),
        });
    }
    peaks.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]));
    let mut thetas: Vec<f64> = peaks[..k].iter().map(|&i| grid[i]).collect();
    thetas.sort_by(f64::total_cmp);
    let sigma = eig.values[k..].iter().sum::<f64>() / (m - k) as f64;
    let powers = power_least_squares(r_hat, sigma, &thetas, geom)?;
    DoaEstimate {
        k_hat: k,
        thetas_deg: thetas,
        powers,
        residual: None,
    }
    .checked()
}
