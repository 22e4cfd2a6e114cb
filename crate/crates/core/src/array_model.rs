//! Linear-array geometry, steering vectors, snapshot synthesis, sample
//! covariance and noise-power estimation.
//!
//! Angles are in degrees throughout and the inter-element spacing of the
//! coarray is half a wavelength, so a sensor at (1-based) index `Ω_m` sees
//! the phase `π (Ω_m − 1) sin θ`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{ensure_hermitian, CMat, CVec, HermitianEigen};

/// Sensor index set `Ω ⊆ {1..N}` of a (sparse) linear array together with
/// the length `N` of its coarray.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    omega: Vec<usize>,
    n_coarray: usize,
}

impl ArrayGeometry {
    /// Uniform linear array with `n` sensors.
    pub fn ula(n: usize) -> Result<Self> {
        if n == 0 {
            return domain("a ULA needs at least one sensor");
        }
        Ok(ArrayGeometry {
            omega: (1..=n).collect(),
            n_coarray: n,
        })
    }

    /// Sparse linear array from its 1-based sensor indices. The first index
    /// must be 1 and the last defines the coarray length.
    pub fn sparse(omega: Vec<usize>) -> Result<Self> {
        match omega.first() {
            None => return domain("sensor index set is empty"),
            Some(&first) if first != 1 => {
                return domain(format!("first sensor index must be 1, got {first}"))
            }
            _ => {}
        }
        if omega.windows(2).any(|w| w[0] >= w[1]) {
            return domain("sensor indices must be strictly increasing");
        }
        let n_coarray = *omega.last().unwrap();
        Ok(ArrayGeometry { omega, n_coarray })
    }

    pub fn sensors(&self) -> &[usize] {
        &self.omega
    }

    /// Number of physical sensors `M`.
    pub fn num_sensors(&self) -> usize {
        self.omega.len()
    }

    /// Length `N` of the virtual coarray.
    pub fn coarray_len(&self) -> usize {
        self.n_coarray
    }

    pub fn is_uniform(&self) -> bool {
        self.omega.len() == self.n_coarray
    }

    /// The ULA spanning this array's coarray.
    pub fn coarray(&self) -> ArrayGeometry {
        ArrayGeometry {
            omega: (1..=self.n_coarray).collect(),
            n_coarray: self.n_coarray,
        }
    }

    /// Zero-based coarray positions of the sensors.
    pub(crate) fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.omega.iter().map(|&o| o - 1)
    }
}

/// Ground truth and acquisition parameters for one synthetic experiment.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub thetas_deg: Vec<f64>,
    /// Linear source powers; the noise variance follows from `powers[0]` and
    /// `snr_db`.
    pub powers: Vec<f64>,
    pub snr_db: f64,
    pub n_snapshots: usize,
    pub seed: u64,
    /// Optional K×K source covariance (rows of `S` correlated). When `None`
    /// sources are uncorrelated with variances `powers`.
    pub source_covariance: Option<CMat>,
}

impl Scenario {
    /// Equal-power sources at unit noise variance, i.e. every source has power
    /// `10^(snr_db/10)`.
    pub fn equal_power(thetas_deg: Vec<f64>, snr_db: f64, n_snapshots: usize, seed: u64) -> Self {
        let p = 10f64.powf(snr_db / 10.0);
        let powers = vec![p; thetas_deg.len()];
        Scenario {
            thetas_deg,
            powers,
            snr_db,
            n_snapshots,
            seed,
            source_covariance: None,
        }
    }

    /// Noise variance implied by `SNR_dB = 10 log10(powers[0] / σ)`.
    pub fn noise_variance(&self) -> f64 {
        self.powers.first().copied().unwrap_or(1.0) / 10f64.powf(self.snr_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas_deg.is_empty() {
            return domain("scenario needs at least one source");
        }
        if self.thetas_deg.len() != self.powers.len() {
            return domain(format!(
                "{} DOAs but {} powers",
                self.thetas_deg.len(),
                self.powers.len()
            ));
        }
        for &t in &self.thetas_deg {
            check_angle(t)?;
        }
        for (i, a) in self.thetas_deg.iter().enumerate() {
            if self.thetas_deg[i + 1..].contains(a) {
                return domain(format!("duplicate DOA {a}"));
            }
        }
        if self.powers.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return domain("source powers must be positive and finite");
        }
        if self.n_snapshots == 0 {
            return domain("snapshot count must be at least 1");
        }
        if !self.snr_db.is_finite() {
            return domain("SNR must be finite");
        }
        if let Some(cov) = &self.source_covariance {
            let k = self.thetas_deg.len();
            if cov.nrows() != k || cov.ncols() != k {
                return domain("source covariance must be K×K");
            }
            ensure_hermitian(cov, 1e-12, "source covariance")?;
        }
        Ok(())
    }
}

/// Array output `X = A S + N` together with the noise variance used.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshots {
    pub x: CMat,
    pub sigma_true: f64,
}

impl Snapshots {
    pub fn num_snapshots(&self) -> usize {
        self.x.ncols()
    }

    pub fn sample_covariance(&self) -> CMat {
        sample_covariance(&self.x)
    }
}

/// How the noise power is estimated from the sample covariance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Smallest eigenvalue of `R̂_Ω`.
    Direct,
    /// Smallest eigenvalue of the diagonal-averaged coarray covariance.
    FullFill,
}

fn check_angle(theta_deg: f64) -> Result<()> {
    if !(theta_deg.abs() < 90.0) {
        return domain(format!("angle {theta_deg}° outside (−90°, 90°)"));
    }
    Ok(())
}

/// Steering vector for coarray positions `positions` (zero-based) at spatial
/// frequency `omega = π sin θ`.
pub(crate) fn phase_vector(positions: impl Iterator<Item = usize>, omega: f64) -> CVec {
    let v: Vec<Complex64> = positions
        .map(|p| Complex64::from_polar(1.0, omega * p as f64))
        .collect();
    CVec::from_vec(v)
}

/// Array response `a_Ω(θ)` with entries `exp(jπ(Ω_m − 1) sin θ)`.
pub fn steering_vector(geom: &ArrayGeometry, theta_deg: f64) -> Result<CVec> {
    check_angle(theta_deg)?;
    Ok(phase_vector(geom.positions(), spatial_frequency(theta_deg)))
}

/// `π sin θ` for `θ` in degrees.
pub fn spatial_frequency(theta_deg: f64) -> f64 {
    std::f64::consts::PI * theta_deg.to_radians().sin()
}

/// Manifold matrix `A_Ω = [a_Ω(θ_1), …, a_Ω(θ_K)]`.
pub fn manifold(geom: &ArrayGeometry, thetas_deg: &[f64]) -> Result<CMat> {
    let cols = thetas_deg
        .iter()
        .map(|&t| steering_vector(geom, t))
        .collect::<Result<Vec<_>>>()?;
    if cols.is_empty() {
        return Ok(CMat::zeros(geom.num_sensors(), 0));
    }
    Ok(CMat::from_columns(&cols))
}

/// Model covariance `A diag(p) Aᴴ + σ I`.
pub fn model_covariance(
    geom: &ArrayGeometry,
    thetas_deg: &[f64],
    powers: &[f64],
    sigma: f64,
) -> Result<CMat> {
    if thetas_deg.len() != powers.len() {
        return domain("DOA and power lists differ in length");
    }
    let m = geom.num_sensors();
    let mut r = CMat::identity(m, m).scale(sigma);
    for (&t, &p) in thetas_deg.iter().zip(powers) {
        let a = steering_vector(geom, t)?;
        r += (&a * a.adjoint()).scale(p);
    }
    Ok(r)
}

fn circular_gaussian(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(scale * re, scale * im)
}

/// Draws `X = A_Ω S + N` with circular complex Gaussian sources and noise.
/// The output is a deterministic function of `scenario.seed`.
pub fn synthesize_snapshots(geom: &ArrayGeometry, scenario: &Scenario) -> Result<Snapshots> {
    scenario.validate()?;
    let k = scenario.thetas_deg.len();
    let l = scenario.n_snapshots;
    let m = geom.num_sensors();
    let sigma = scenario.noise_variance();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut s = CMat::zeros(k, l);
    for row in 0..k {
        let var = match &scenario.source_covariance {
            Some(_) => 1.0,
            None => scenario.powers[row],
        };
        for col in 0..l {
            s[(row, col)] = circular_gaussian(&mut rng, var);
        }
    }
    if let Some(cov) = &scenario.source_covariance {
        // Symmetric square root, so singular (coherent) covariances work too.
        let eig = HermitianEigen::new(cov);
        if eig.min() < -1e-10 * eig.max().abs() {
            return domain("source covariance is not positive semidefinite");
        }
        s = eig.map(|v| v.max(0.0).sqrt()) * s;
    }
    let mut noise = CMat::zeros(m, l);
    for row in 0..m {
        for col in 0..l {
            noise[(row, col)] = circular_gaussian(&mut rng, sigma);
        }
    }
    let a = manifold(geom, &scenario.thetas_deg)?;
    Ok(Snapshots {
        x: a * s + noise,
        sigma_true: sigma,
    })
}

/// `R̂ = X Xᴴ / L`.
pub fn sample_covariance(x: &CMat) -> CMat {
    let l = x.ncols().max(1) as f64;
    let r = x * x.adjoint() / Complex64::new(l, 0.0);
    crate::linalg::hermitian_part(&r)
}

/// `Γᵀ R̂ Γ` with every unobserved entry replaced by the mean of the observed
/// entries on its diagonal (0 when a diagonal has no observed entry).
pub fn full_fill_covariance(r_hat: &CMat, geom: &ArrayGeometry) -> CMat {
    let n = geom.coarray_len();
    let pos: Vec<usize> = geom.positions().collect();
    let mut full = CMat::zeros(n, n);
    let mut observed = vec![vec![false; n]; n];
    for (i, &pi) in pos.iter().enumerate() {
        for (j, &pj) in pos.iter().enumerate() {
            full[(pi, pj)] = r_hat[(i, j)];
            observed[pi][pj] = true;
        }
    }
    // Lag d = col − row, offset by n − 1.
    let mut sums = vec![Complex64::new(0.0, 0.0); 2 * n - 1];
    let mut counts = vec![0usize; 2 * n - 1];
    for r in 0..n {
        for c in 0..n {
            if observed[r][c] {
                let d = c + n - 1 - r;
                sums[d] += full[(r, c)];
                counts[d] += 1;
            }
        }
    }
    for r in 0..n {
        for c in 0..n {
            if !observed[r][c] {
                let d = c + n - 1 - r;
                full[(r, c)] = if counts[d] > 0 {
                    sums[d] / counts[d] as f64
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
    }
    full
}

/// Noise power as the smallest eigenvalue of `R̂_Ω` (direct) or of its
/// diagonal-averaged coarray extension (full fill), clamped at 0.
pub fn estimate_noise_power(r_hat: &CMat, geom: &ArrayGeometry, mode: NoiseMode) -> Result<f64> {
    ensure_hermitian(r_hat, 1e-10, "sample covariance")?;
    let m = geom.num_sensors();
    if r_hat.nrows() != m {
        return domain(format!(
            "covariance is {}x{}, array has {m} sensors",
            r_hat.nrows(),
            r_hat.ncols()
        ));
    }
    let matrix = match mode {
        NoiseMode::Direct => r_hat.clone(),
        NoiseMode::FullFill => full_fill_covariance(r_hat, geom),
    };
    Ok(HermitianEigen::new(&matrix).min().max(0.0))
}
