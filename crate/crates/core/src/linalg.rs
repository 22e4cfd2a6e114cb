//! Small dense complex linear-algebra helpers shared by the estimation modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{domain, DoaError, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Cholesky factorization of a Hermitian matrix that fails unless every pivot
/// is strictly positive.
///
/// `nalgebra`'s complex Cholesky accepts indefinite input (the complex square
/// root never fails), so definiteness tests go through this instead.
pub fn cholesky_pd(h: &CMat) -> Option<Cholesky<Complex64, Dyn>> {
    let n = h.nrows();
    if h.ncols() != n {
        return None;
    }
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        let mut d = h[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut acc = h[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / djj;
        }
    }
    Some(Cholesky::pack_dirty(l))
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order (columns of `vectors` follow the same order).
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn new(h: &CMat) -> Self {
        let n = h.nrows();
        let herm = hermitian_part(h);
        let eig = herm.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        HermitianEigen { values, vectors }
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// Reassembles `U diag(f(λ)) Uᴴ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &v) in self.values.iter().enumerate() {
            let s = f(v);
            for r in 0..n {
                scaled[(r, c)] *= s;
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

pub fn hermitian_part(h: &CMat) -> CMat {
    (h + h.adjoint()).scale(0.5)
}

pub fn ensure_square(m: &CMat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return domain(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(m.nrows())
}

/// Checks `‖H − Hᴴ‖_F ≤ tol · max(1, ‖H‖_F)`.
pub fn ensure_hermitian(h: &CMat, tol: f64, what: &str) -> Result<()> {
    ensure_square(h, what)?;
    let skew = (h - h.adjoint()).norm();
    if skew > tol * h.norm().max(1.0) {
        return domain(format!("{what} is not Hermitian (skew norm {skew:.3e})"));
    }
    Ok(())
}

/// Moore–Penrose pseudo-inverse with singular values below
/// `rcond · σ_max` treated as zero.
pub fn pinv_real(a: &RMat, rcond: f64) -> RMat {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = rcond * s_max;
    let mut out = RMat::zeros(a.ncols(), a.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (v_t.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}

/// Roots of `Σ coeffs[i] zⁱ` (ascending powers) from the companion matrix,
/// each refined by a few Newton steps on the polynomial.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut deg = coeffs.len();
    while deg > 0 && coeffs[deg - 1].norm() == 0.0 {
        deg -= 1;
    }
    if deg == 0 {
        return Err(DoaError::Numeric(
            "zero polynomial has no isolated roots".into(),
        ));
    }
    // Zero low-order coefficients are roots at the origin.
    let zeros = coeffs.iter().take_while(|c| c.norm() == 0.0).count();
    let coeffs = &coeffs[zeros..deg];
    let mut out = vec![Complex64::new(0.0, 0.0); zeros];
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(out);
    }
    let lead = coeffs[deg];
    let mut companion = CMat::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = Complex64::new(1.0, 0.0);
    }
    for i in 0..deg {
        companion[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let roots = companion
        .try_schur(f64::EPSILON, 100 * deg.max(10))
        .and_then(|s| s.eigenvalues())
        .ok_or_else(|| DoaError::Numeric("companion Schur form did not converge".into()))?;
    out.extend(roots.iter().map(|&z| newton_polish(coeffs, z)));
    Ok(out)
}

fn newton_polish(poly: &[Complex64], mut z: Complex64) -> Complex64 {
    let eval = |z: Complex64| {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &c in poly.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    };
    for _ in 0..8 {
        let (p, dp) = eval(z);
        if dp.norm() == 0.0 {
            break;
        }
        let next = z - p / dp;
        if !next.re.is_finite() || !next.im.is_finite() || eval(next).0.norm() >= p.norm() {
            break;
        }
        z = next;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_is_sorted_descending_and_reconstructs() {
        let h = CMat::from_fn(4, 4, |r, c| {
            if r == c {
                Complex64::new((r + 1) as f64, 0.0)
            } else if r < c {
                Complex64::new(0.1 * (r + c) as f64, 0.2)
            } else {
                Complex64::new(0.1 * (r + c) as f64, -0.2)
            }
        });
        let eig = HermitianEigen::new(&h);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        assert!((eig.map(|x| x) - &h).norm() < 1e-12);
    }

    #[test]
    fn roots_of_quadratic() {
        // z² − 3z + 2 = (z − 1)(z − 2)
        let c = [2.0, -3.0, 1.0].map(|x| Complex64::new(x, 0.0));
        let mut roots: Vec<f64> = polynomial_roots(&c).unwrap().iter().map(|z| z.re).collect();
        roots.sort_by(f64::total_cmp);
        assert!((roots[0] - 1.0).abs() < 1e-12 && (roots[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_of_rank_deficient() {
        let a = RMat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let p = pinv_real(&a, 1e-10);
        assert!((&a * &p * &a - &a).norm() < 1e-12);
    }
}
