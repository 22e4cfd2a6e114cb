//! Hermitian Toeplitz parameterization `T(u)`, its adjoint `T*`, selection
//! onto the physical sensors, the whitened covariance-fitting error and the
//! PSD projection.

use num_complex::Complex64;

use crate::array_model::ArrayGeometry;
use crate::error::{domain, DoaError, Result};
use crate::linalg::{ensure_hermitian, ensure_square, CMat, CVec, HermitianEigen};

/// First column `u` of a Hermitian Toeplitz matrix; `u[0]` is real.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzParam(CVec);

impl serde::Serialize for ToeplitzParam {
    /// As a list of `[re, im]` pairs.
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = self.0.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }
}

impl ToeplitzParam {
    pub fn new(u: CVec) -> Result<Self> {
        if u.is_empty() {
            return domain("Toeplitz parameter must be non-empty");
        }
        let scale = u.norm().max(1.0);
        if u[0].im.abs() > 1e-12 * scale {
            return domain(format!(
                "u[0] must be real, has imaginary part {:.3e}",
                u[0].im
            ));
        }
        let mut u = u;
        u[0].im = 0.0;
        Ok(ToeplitzParam(u))
    }

    pub fn zeros(n: usize) -> Self {
        ToeplitzParam(CVec::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &CVec {
        &self.0
    }

    pub fn into_vector(self) -> CVec {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_matrix(&self) -> CMat {
        toeplitz_from_param(self)
    }

    /// Real coordinates `[u0, Re u1, Im u1, …, Re u_{N−1}, Im u_{N−1}]`.
    pub fn to_real_coords(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len() - 1);
        out.push(self.0[0].re);
        for z in self.0.iter().skip(1) {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    pub fn from_real_coords(coords: &[f64]) -> Self {
        debug_assert!(coords.len() % 2 == 1);
        let n = coords.len().div_ceil(2);
        let mut u = CVec::zeros(n);
        u[0] = Complex64::new(coords[0], 0.0);
        for k in 1..n {
            u[k] = Complex64::new(coords[2 * k - 1], coords[2 * k]);
        }
        ToeplitzParam(u)
    }

    pub fn scaled(&self, s: f64) -> Self {
        ToeplitzParam(self.0.scale(s))
    }
}

/// Builds `T(u)`: `T[m][n] = u[m−n]` for `m ≥ n` and the conjugate above the
/// diagonal.
pub fn toeplitz_from_param(u: &ToeplitzParam) -> CMat {
    let v = &u.0;
    let n = v.len();
    CMat::from_fn(n, n, |r, c| if r >= c { v[r - c] } else { v[c - r].conj() })
}

/// Diagonal sums `[v_{−(N−1)}, …, v_0, …, v_{N−1}]` of a square matrix, with
/// lag `n = column − row`.
pub fn toeplitz_adjoint(v: &CMat) -> Result<CVec> {
    let n = ensure_square(v, "adjoint input")?;
    if n == 0 {
        return domain("adjoint input is empty");
    }
    let mut out = CVec::zeros(2 * n - 1);
    for r in 0..n {
        for c in 0..n {
            out[c + n - 1 - r] += v[(r, c)];
        }
    }
    Ok(out)
}

/// Rows and columns of an `N×N` coarray matrix at the sensor positions.
pub fn select(geom: &ArrayGeometry, t_full: &CMat) -> Result<CMat> {
    let n = geom.coarray_len();
    if t_full.nrows() != n || t_full.ncols() != n {
        return domain(format!(
            "expected {n}x{n} coarray matrix, got {}x{}",
            t_full.nrows(),
            t_full.ncols()
        ));
    }
    let pos: Vec<usize> = geom.positions().collect();
    Ok(CMat::from_fn(pos.len(), pos.len(), |i, j| {
        t_full[(pos[i], pos[j])]
    }))
}

/// `Γᵀ X Γ`: embeds an `M×M` sensor-domain matrix into the coarray, zero
/// elsewhere.
pub fn lift(geom: &ArrayGeometry, x: &CMat) -> CMat {
    let n = geom.coarray_len();
    let pos: Vec<usize> = geom.positions().collect();
    let mut out = CMat::zeros(n, n);
    for (i, &pi) in pos.iter().enumerate() {
        for (j, &pj) in pos.iter().enumerate() {
            out[(pi, pj)] = x[(i, j)];
        }
    }
    out
}

/// Data for the whitened fitting error `L ‖W^{−1/2} (R̂ − σI − T_Ω(u)) W^{−1/2}‖_F²`.
#[derive(Clone, Debug)]
pub struct WeightedErrorContext {
    r_hat: CMat,
    sigma: f64,
    l_snapshots: f64,
    whitener: CMat,
    whitener_inv_sqrt: CMat,
    whitener_inv: CMat,
}

impl WeightedErrorContext {
    /// Whitener relative floor: eigenvalues at or below
    /// `WHITENER_FLOOR · λ_max` make the whitener singular.
    pub const WHITENER_FLOOR: f64 = 1e-12;

    pub fn new(r_hat: CMat, sigma: f64, l_snapshots: f64, whitener: CMat) -> Result<Self> {
        ensure_hermitian(&r_hat, 1e-10, "sample covariance")?;
        ensure_hermitian(&whitener, 1e-10, "whitener")?;
        if whitener.nrows() != r_hat.nrows() {
            return domain("whitener and covariance dimensions differ");
        }
        if !(l_snapshots > 0.0) {
            return domain("snapshot count must be positive");
        }
        if !(sigma >= 0.0) {
            return domain("noise power must be nonnegative");
        }
        let eig = HermitianEigen::new(&whitener);
        let top = eig.max();
        if !(top > 0.0) || eig.min() <= Self::WHITENER_FLOOR * top {
            return Err(DoaError::Numeric(format!(
                "whitener is numerically singular (eigenvalues {:.3e}..{:.3e})",
                eig.min(),
                top
            )));
        }
        let floor = Self::WHITENER_FLOOR * top;
        let whitener_inv_sqrt = eig.map(|x| 1.0 / x.max(floor).sqrt());
        let whitener_inv = eig.map(|x| 1.0 / x.max(floor));
        Ok(WeightedErrorContext {
            r_hat,
            sigma,
            l_snapshots,
            whitener,
            whitener_inv_sqrt,
            whitener_inv,
        })
    }

    /// Whitener `R̂_Ω`, used by the constrained reconstruction.
    pub fn sample_whitened(r_hat: CMat, sigma: f64, l_snapshots: f64) -> Result<Self> {
        let w = r_hat.clone();
        Self::new(r_hat, sigma, l_snapshots, w)
    }

    /// Whitener `R̂_Ω − σI`.
    pub fn noise_removed(r_hat: CMat, sigma: f64, l_snapshots: f64) -> Result<Self> {
        let m = r_hat.nrows();
        let w = &r_hat - CMat::identity(m, m).scale(sigma);
        Self::new(r_hat, sigma, l_snapshots, w)
    }

    pub fn r_hat(&self) -> &CMat {
        &self.r_hat
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn l_snapshots(&self) -> f64 {
        self.l_snapshots
    }

    pub fn whitener(&self) -> &CMat {
        &self.whitener
    }

    pub fn whitener_inv_sqrt(&self) -> &CMat {
        &self.whitener_inv_sqrt
    }

    pub fn whitener_inv(&self) -> &CMat {
        &self.whitener_inv
    }

    /// `R̂_Ω − σI`, the noise-free covariance the Toeplitz model should fit.
    pub fn target(&self) -> CMat {
        let m = self.r_hat.nrows();
        &self.r_hat - CMat::identity(m, m).scale(self.sigma)
    }

    /// `L ‖W^{−1/2} E W^{−1/2}‖_F²` for an arbitrary residual `E`.
    pub fn whitened_norm_sq(&self, e: &CMat) -> f64 {
        let s = &self.whitener_inv_sqrt;
        self.l_snapshots * (s * e * s).norm_squared()
    }
}

/// `‖Q vec(E_Ω)‖²` with `E_Ω = (R̂ − σI) − T_Ω(u)`, evaluated in the
/// equivalent matrix form.
pub fn weighted_error(
    ctx: &WeightedErrorContext,
    u: &ToeplitzParam,
    geom: &ArrayGeometry,
) -> Result<f64> {
    if ctx.r_hat.nrows() != geom.num_sensors() || u.len() != geom.coarray_len() {
        return domain("dimensions of context, parameter and geometry disagree");
    }
    let t_sel = select(geom, &u.to_matrix())?;
    Ok(ctx.whitened_norm_sq(&(ctx.target() - t_sel)))
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to 0.
pub fn psd_project(h: &CMat) -> CMat {
    let eig = HermitianEigen::new(h);
    if eig.min() >= 0.0 {
        return crate::linalg::hermitian_part(h);
    }
    eig.map(|x| x.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_from_unit_first_column() {
        let u = ToeplitzParam::new(CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]))
            .unwrap();
        assert_eq!(u.to_matrix(), CMat::identity(3, 3));
    }

    #[test]
    fn explicit_three_by_three() {
        let u = ToeplitzParam::new(CVec::from_vec(vec![c(2.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]))
            .unwrap();
        let want = CMat::from_row_slice(
            3,
            3,
            &[
                c(2.0, 0.0),
                c(0.0, -1.0),
                c(0.0, 0.0),
                c(0.0, 1.0),
                c(2.0, 0.0),
                c(0.0, -1.0),
                c(0.0, 0.0),
                c(0.0, 1.0),
                c(2.0, 0.0),
            ],
        );
        assert_eq!(u.to_matrix(), want);
    }

    #[test]
    fn complex_leading_entry_is_rejected() {
        assert!(ToeplitzParam::new(CVec::from_vec(vec![c(1.0, 0.5)])).is_err());
    }

    #[test]
    fn adjoint_of_identity_and_corner() {
        let a = toeplitz_adjoint(&CMat::identity(3, 3)).unwrap();
        let want: Vec<Complex64> = [0.0, 0.0, 3.0, 0.0, 0.0]
            .iter()
            .map(|&x| c(x, 0.0))
            .collect();
        assert_eq!(a.as_slice(), &want[..]);

        let mut v = CMat::zeros(3, 3);
        v[(0, 2)] = c(1.0, 0.0);
        let a = toeplitz_adjoint(&v).unwrap();
        assert_eq!(a[4], c(1.0, 0.0));
        assert_eq!(a.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn adjoint_rejects_rectangular() {
        assert!(toeplitz_adjoint(&CMat::zeros(2, 3)).is_err());
    }

    #[test]
    fn select_picks_sensor_rows_and_columns() {
        let g = ArrayGeometry::sparse(vec![1, 3]).unwrap();
        let t = CMat::from_fn(3, 3, |r, c_| c((10 * r + c_) as f64, 0.0));
        let s = select(&g, &t).unwrap();
        assert_eq!(
            s,
            CMat::from_row_slice(
                2,
                2,
                &[c(0.0, 0.0), c(2.0, 0.0), c(20.0, 0.0), c(22.0, 0.0)]
            )
        );
        let ula = ArrayGeometry::ula(3).unwrap();
        assert_eq!(select(&ula, &t).unwrap(), t);
    }

    #[test]
    fn weighted_error_reduces_to_frobenius() {
        let g = ArrayGeometry::ula(2).unwrap();
        let r = CMat::from_row_slice(2, 2, &[c(3.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let ctx = WeightedErrorContext::new(r.clone(), 0.5, 1.0, CMat::identity(2, 2)).unwrap();
        let u = ToeplitzParam::new(CVec::from_vec(vec![c(1.0, 0.0), c(0.5, 0.0)])).unwrap();
        let e = (&r - CMat::identity(2, 2).scale(0.5)) - u.to_matrix();
        assert!((weighted_error(&ctx, &u, &g).unwrap() - e.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn singular_whitener_is_a_numeric_error() {
        let r = CMat::identity(2, 2);
        let w = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]));
        assert!(matches!(
            WeightedErrorContext::new(r, 0.0, 1.0, w),
            Err(DoaError::Numeric(_))
        ));
    }

    #[test]
    fn psd_projection_clips() {
        let h = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(-1.0, 0.0)]));
        let p = psd_project(&h);
        let want = CMat::from_diagonal(&CVec::from_vec(vec![c(2.0, 0.0), c(0.0, 0.0)]));
        assert!((p - want).norm() < 1e-14);
    }
}
