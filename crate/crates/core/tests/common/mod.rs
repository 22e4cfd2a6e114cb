//! Independent reference computations shared by the integration and
//! acceptance tests. Nothing here calls the library routine it checks.
#![allow(dead_code)]

use doa_core::{ArrayGeometry, CMat, CVec};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, k: usize) -> CMat {
    CMat::from_fn(r, k, |_, _| random_complex(rng))
}

/// `B Bᴴ + shift·I`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> CMat {
    let b = random_matrix(rng, n, n);
    &b * b.adjoint() + CMat::identity(n, n).scale(shift)
}

/// `B Bᴴ` with `B` of `rank` columns.
pub fn random_low_rank(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMat {
    let b = random_matrix(rng, n, rank);
    &b * b.adjoint()
}

pub fn random_param(rng: &mut ChaCha8Rng, n: usize) -> CVec {
    let mut u = CVec::from_fn(n, |_, _| random_complex(rng));
    u[0].im = 0.0;
    u
}

/// Hermitian Toeplitz matrix written out entry by entry.
pub fn toeplitz_explicit(u: &CVec) -> CMat {
    let n = u.len();
    let mut t = CMat::zeros(n, n);
    for r in 0..n {
        for k in 0..n {
            t[(r, k)] = if r >= k { u[r - k] } else { u[k - r].conj() };
        }
    }
    t
}

/// Sums along each diagonal, lag `col − row` from `−(N−1)` to `N−1`.
pub fn diagonal_sums(v: &CMat) -> CVec {
    let n = v.nrows() as isize;
    CVec::from_fn((2 * n - 1) as usize, |i, _| {
        let lag = i as isize - (n - 1);
        let mut s = c(0.0, 0.0);
        for r in 0..n {
            let k = r + lag;
            if (0..n).contains(&k) {
                s += v[(r as usize, k as usize)];
            }
        }
        s
    })
}

/// Rows/columns of `t` indexed by the (1-based) sensor positions.
pub fn submatrix(geom: &ArrayGeometry, t: &CMat) -> CMat {
    let idx: Vec<usize> = geom.sensors().iter().map(|&s| s - 1).collect();
    CMat::from_fn(idx.len(), idx.len(), |r, k| t[(idx[r], idx[k])])
}

/// Zero-padded `Γᵀ X Γ`.
pub fn embed(geom: &ArrayGeometry, x: &CMat) -> CMat {
    let n = geom.coarray_len();
    let idx: Vec<usize> = geom.sensors().iter().map(|&s| s - 1).collect();
    let mut out = CMat::zeros(n, n);
    for (r, &i) in idx.iter().enumerate() {
        for (k, &j) in idx.iter().enumerate() {
            out[(i, j)] = x[(r, k)];
        }
    }
    out
}

/// Hermitian `H^p` via nalgebra's eigendecomposition (eigenvalues floored at
/// zero for fractional powers).
pub fn hermitian_power(h: &CMat, p: f64) -> CMat {
    let herm = (h + h.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let d = CVec::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&x| c(x.max(0.0).powf(p), 0.0)),
    );
    &eig.eigenvectors * CMat::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

pub fn hermitian_map(h: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let herm = (h + h.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let d = CVec::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&x| c(f(x), 0.0)),
    );
    &eig.eigenvectors * CMat::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

pub fn eigenvalues_desc(h: &CMat) -> Vec<f64> {
    let herm = (h + h.adjoint()).scale(0.5);
    let mut v: Vec<f64> = herm.symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Column-major `vec`.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_iterator(m.len(), m.iter().copied())
}

pub fn kronecker(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    CMat::from_fn(ar * br, ac * bc, |r, k| {
        a[(r / br, k / bc)] * b[(r % br, k % bc)]
    })
}

/// Steering vector `exp(jπ(Ω_m − 1) sin θ)`.
pub fn steering(geom: &ArrayGeometry, theta_deg: f64) -> CVec {
    let s = theta_deg.to_radians().sin();
    CVec::from_iterator(
        geom.num_sensors(),
        geom.sensors()
            .iter()
            .map(|&m| Complex64::from_polar(1.0, std::f64::consts::PI * (m as f64 - 1.0) * s)),
    )
}

/// `Σ p_k a_k a_kᴴ + σ I` on the physical array.
pub fn exact_covariance(geom: &ArrayGeometry, thetas: &[f64], powers: &[f64], sigma: f64) -> CMat {
    let m = geom.num_sensors();
    let mut r = CMat::identity(m, m).scale(sigma);
    for (&t, &p) in thetas.iter().zip(powers) {
        let a = steering(geom, t);
        r += (&a * a.adjoint()).scale(p);
    }
    r
}

// ---------------------------------------------------------------------------
// Regularized incomplete gamma (series / Lentz continued fraction).

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &cf) in COEF.iter().enumerate().skip(1) {
        a += cf / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `P(a, x)` and `Q(a, x) = 1 − P(a, x)`, each computed directly in its
/// well-conditioned regime.
pub fn incomplete_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = 1.0;
        while term.abs() > sum.abs() * 1e-17 {
            term *= x / (a + n);
            sum += term;
            n += 1.0;
        }
        let p = sum * log_prefactor.exp();
        (p, 1.0 - p)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut cc = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            cc = b + an / cc;
            if cc.abs() < tiny {
                cc = tiny;
            }
            d = 1.0 / d;
            let delta = d * cc;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = h * log_prefactor.exp();
        (1.0 - q, q)
    }
}

/// χ² quantile by bisection on the oracle CDF (upper tail for `p > ½`).
pub fn chi2_quantile_oracle(p: f64, dof: u32) -> f64 {
    let a = dof as f64 / 2.0;
    let below = |x: f64| {
        let (lower, upper) = incomplete_gamma(a, x / 2.0);
        if p > 0.5 {
            upper > 1.0 - p
        } else {
            lower < p
        }
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while below(hi) {
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Fisher information by finite differences of the Gaussian log-likelihood.

/// Expected log-likelihood `−L(log det R(η) + tr(R(η)⁻¹ R₀))` for a single
/// source, `η = (θ [rad], p, σ)`.
fn log_likelihood(geom: &ArrayGeometry, eta: [f64; 3], r0: &CMat, l: f64) -> f64 {
    let r = exact_covariance(geom, &[eta[0].to_degrees()], &[eta[1]], eta[2]);
    let lu = r.clone().lu();
    let det = lu.determinant().re;
    let inv = lu.try_inverse().expect("covariance invertible");
    -l * (det.ln() + (inv * r0).trace().re)
}

/// CRB of θ (deg²) for one source from the negated Hessian of the expected
/// log-likelihood at the truth.
pub fn fisher_crb_single_source(
    geom: &ArrayGeometry,
    theta_deg: f64,
    power: f64,
    sigma: f64,
    l: f64,
) -> f64 {
    let eta0 = [theta_deg.to_radians(), power, sigma];
    let r0 = exact_covariance(geom, &[theta_deg], &[power], sigma);
    let steps = [1e-4, 1e-4 * power, 1e-4 * sigma];
    let f = |e: [f64; 3]| log_likelihood(geom, e, &r0, l);
    let mut fim = DMatrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let mut pp = eta0;
            let mut pm = eta0;
            let mut mp = eta0;
            let mut mm = eta0;
            pp[i] += steps[i];
            pp[j] += steps[j];
            pm[i] += steps[i];
            pm[j] -= steps[j];
            mp[i] -= steps[i];
            mp[j] += steps[j];
            mm[i] -= steps[i];
            mm[j] -= steps[j];
            let h = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * steps[i] * steps[j]);
            fim[(i, j)] = -h;
        }
    }
    let inv = fim.try_inverse().expect("Fisher information invertible");
    inv[(0, 0)] * (180.0 / std::f64::consts::PI).powi(2)
}

// ---------------------------------------------------------------------------
// Per-draw identity checks. Each returns a relative residual for one seed so
// property tests and the acceptance run share the same draws.

use doa_core::penalty::{
    penalty_value, surrogate_value, weight_matrix, weight_matrix_with, WeightPath,
};
use doa_core::subproblem::{build_quadratic_operator, solve_ficmra};
use doa_core::{
    toeplitz_adjoint, toeplitz_from_param, vandermonde_decompose, PenaltyKind, PenaltySpec,
    ToeplitzParam,
};

fn rel(diff: f64, scale: f64) -> f64 {
    diff / scale.max(1.0)
}

/// Random Hermitian PSD `C`, sized for a coarray of 2..=8 lags, optionally
/// supported on a sparse sensor subset.
fn random_c(rng: &mut ChaCha8Rng) -> CMat {
    let n = rng.random_range(2..=8);
    if n >= 4 && rng.random_bool(0.5) {
        let geom = random_sparse(rng, n);
        embed(&geom, &random_psd(rng, geom.num_sensors(), 0.1))
    } else {
        random_psd(rng, n, 0.1)
    }
}

/// Sparse array on `1..=n` containing both ends.
pub fn random_sparse(rng: &mut ChaCha8Rng, n: usize) -> ArrayGeometry {
    let mut omega = vec![1];
    for s in 2..n {
        if rng.random_bool(0.5) {
            omega.push(s);
        }
    }
    omega.push(n);
    ArrayGeometry::sparse(omega).expect("valid sparse array")
}

/// `Z₁u + Z₂ū` against diagonal sums of `C T(u) C` written out by hand.
pub fn quadratic_operator_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let cm = random_c(&mut r);
    let u = random_param(&mut r, cm.nrows());
    let op = build_quadratic_operator(&cm).expect("operator");
    let reference = diagonal_sums(&(&cm * toeplitz_explicit(&u) * &cm));
    rel((op.apply(&u) - &reference).norm(), reference.norm())
}

/// Stationarity `T*(C T(u) C) = T*(C − λW)` of the closed-form step, with
/// `C = Γᵀ(R̂ − σI)⁻¹Γ`, measured against `‖h‖`.
pub fn ficmra_stationarity_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let m = r.random_range(3..=7);
    let geom = ArrayGeometry::ula(m).unwrap();
    let r_hat = random_psd(&mut r, m, 0.5);
    let sigma = 0.5 * eigenvalues_desc(&r_hat)[m - 1];
    let lambda = r.random_range(0.01..1.0);
    let w = random_psd(&mut r, m, 0.1);
    let weight = doa_core::WeightMatrix::new(w.clone()).unwrap();
    let u = solve_ficmra(&weight, &r_hat, sigma, lambda, &geom).expect("closed-form step");
    let shifted = &r_hat - CMat::identity(m, m).scale(sigma);
    let cm = embed(&geom, &shifted.try_inverse().unwrap());
    let h = diagonal_sums(&(&cm - w.scale(lambda)));
    let lhs = diagonal_sums(&(&cm * toeplitz_explicit(u.as_vector()) * &cm));
    (lhs - &h).norm() / h.norm()
}

/// `⟨T(u), V⟩ = ⟨ũ, T*(V)⟩` where `ũ` lists the diagonal values of `T(u)`
/// by lag; also checks both maps against their hand-written versions.
pub fn adjoint_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=9);
    let u = random_param(&mut r, n);
    let v = random_matrix(&mut r, n, n);
    let t = toeplitz_from_param(&ToeplitzParam::new(u.clone()).unwrap());
    let adj = toeplitz_adjoint(&v).unwrap();
    let lags = CVec::from_fn(2 * n - 1, |i, _| {
        let lag = i as isize - (n as isize - 1);
        if lag <= 0 {
            u[(-lag) as usize]
        } else {
            u[lag as usize].conj()
        }
    });
    let lhs: Complex64 = t.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
    let rhs: Complex64 = lags.iter().zip(adj.iter()).map(|(a, b)| a.conj() * b).sum();
    let scale = t.norm() * v.norm();
    let identity = (lhs - rhs).norm();
    let forward = (t - toeplitz_explicit(&u)).norm();
    let backward = (adj - diagonal_sums(&v)).norm();
    rel(identity, scale)
        .max(rel(forward, u.norm()))
        .max(rel(backward, v.norm()))
}

/// Fast weight path (`(T + εI)⁻¹` for the logarithm, `εT^{ε−1}` for ℓp)
/// against the eigen path.
pub fn weight_path_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=8);
    let t = random_psd(&mut r, n, 0.05);
    let mut worst: f64 = 0.0;
    for kind in [PenaltyKind::Logarithm, PenaltyKind::Lp] {
        let eps = if kind == PenaltyKind::Lp {
            r.random_range(0.05..1.0)
        } else {
            r.random_range(1e-3..2.0)
        };
        let spec = PenaltySpec::new(kind, eps, 2.0).unwrap();
        let fast = weight_matrix_with(&spec, &t, WeightPath::Fast).unwrap();
        let eig = weight_matrix_with(&spec, &t, WeightPath::Eigen).unwrap();
        let oracle = match kind {
            PenaltyKind::Logarithm => (&t + CMat::identity(n, n).scale(eps))
                .try_inverse()
                .unwrap(),
            _ => hermitian_map(&t, |x| eps * x.powf(eps - 1.0)),
        };
        let scale = oracle.norm();
        worst = worst
            .max((fast.matrix() - eig.matrix()).norm() / scale)
            .max((eig.matrix() - &oracle).norm() / scale);
    }
    worst
}

/// Decomposes `Σ p_k a(θ_k) a(θ_k)ᴴ` with `K ≤ min(N − 2, 3)` and sources at
/// least `4/N` apart in `sin θ`; worst of the angle (deg) and relative power
/// errors.
pub fn vandermonde_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(5..=10);
    let k = r.random_range(1..=(n - 2).min(3));
    let gap = 4.0 / n as f64;
    let sines: Vec<f64> = loop {
        let mut s: Vec<f64> = (0..k).map(|_| r.random_range(-0.9..0.9)).collect();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] >= gap) {
            break s;
        }
    };
    let thetas: Vec<f64> = sines.iter().map(|s| s.asin().to_degrees()).collect();
    let powers: Vec<f64> = (0..k).map(|_| r.random_range(0.2..3.0)).collect();
    let geom = ArrayGeometry::ula(n).unwrap();
    let t = exact_covariance(&geom, &thetas, &powers, 0.0);
    let est = vandermonde_decompose(&t, k).expect("decomposition");
    let mut worst: f64 = 0.0;
    for i in 0..k {
        worst = worst
            .max((est.thetas_deg[i] - thetas[i]).abs())
            .max((est.powers[i] - powers[i]).abs() / powers[i]);
    }
    worst
}

/// `chi2_inv` against the bisection oracle, relative.
pub fn chi2_residual(seed: u64) -> f64 {
    let mut r = rng(seed);
    let dof = r.random_range(1..=200u32);
    let p = if r.random_bool(0.3) {
        1.0 - 10f64.powf(r.random_range(-4.0..-1.0))
    } else {
        r.random_range(1e-3..0.999)
    };
    let lib = doa_core::chi2_inv(p, dof).unwrap();
    let oracle = chi2_quantile_oracle(p, dof);
    (lib - oracle).abs() / oracle
}

/// Concavity bound `G(T₂) ≤ G(T₁) + Re tr(W(T₁)(T₂ − T₁))` for each penalty;
/// returns the largest violation relative to `|G(T₂)|` (≤ 0 when it holds).
pub fn majorization_violation(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(2..=7);
    let r1 = r.random_range(1..=n);
    let r2 = r.random_range(1..=n);
    let t1 = random_low_rank(&mut r, n, r1) + CMat::identity(n, n).scale(1e-3);
    let t2 = random_low_rank(&mut r, n, r2);
    let mut worst = f64::NEG_INFINITY;
    for kind in [
        PenaltyKind::Logarithm,
        PenaltyKind::Lp,
        PenaltyKind::Laplace,
    ] {
        let eps = r.random_range(0.05..1.0);
        let spec = PenaltySpec::new(kind, eps, 2.0).unwrap();
        let g1 = surrogate_value(&spec, &t1).unwrap();
        let g2 = surrogate_value(&spec, &t2).unwrap();
        let w = weight_matrix(&spec, &t1).unwrap();
        let lin = (w.matrix() * (&t2 - &t1)).trace().re;
        // Independent evaluation of G from nalgebra's eigenvalues.
        let g2_oracle: f64 = eigenvalues_desc(&t2)
            .iter()
            .map(|&x| penalty_value(&spec, x.max(0.0)).unwrap())
            .sum();
        assert!((g2 - g2_oracle).abs() <= 1e-9 * g2_oracle.abs().max(1.0));
        worst = worst.max((g2 - g1 - lin) / g2.abs().max(1.0));
    }
    worst
}

// ---------------------------------------------------------------------------
// Driver scenarios.

use doa_core::{run_icmra, synthesize_snapshots, IcmraConfig, IcmraResult, Scenario, Snapshots};

/// The `i`-th random scenario of the fixed-ε descent check: 1–3 sources at
/// least 8° apart on a 5–7 element ULA or the {1,2,5,7} array.
pub fn random_scenario(i: u64) -> (ArrayGeometry, Scenario, Snapshots) {
    let mut r = rng(9_000 + i);
    let geom = if r.random_bool(0.3) {
        ArrayGeometry::sparse(vec![1, 2, 5, 7]).unwrap()
    } else {
        ArrayGeometry::ula(r.random_range(5..=7)).unwrap()
    };
    let k = r.random_range(1..=3);
    let thetas = loop {
        let mut t: Vec<f64> = (0..k).map(|_| r.random_range(-60.0..60.0)).collect();
        t.sort_by(f64::total_cmp);
        if t.windows(2).all(|w| w[1] - w[0] >= 8.0) {
            break t;
        }
    };
    let snr = r.random_range(0.0..20.0);
    let l = r.random_range(100..=400);
    let scenario = Scenario::equal_power(thetas, snr, l, 1_000 + i);
    let x = synthesize_snapshots(&geom, &scenario).unwrap();
    (geom, scenario, x)
}

/// Constrained ICMRA-Logarithm with `δ = 1` (fixed `ε`).
pub fn fixed_epsilon_run(i: u64) -> IcmraResult {
    let (geom, _, x) = random_scenario(i);
    let mut cfg = IcmraConfig::icmra(PenaltyKind::Logarithm);
    cfg.penalty = PenaltySpec::new(PenaltyKind::Logarithm, 0.1, 1.0).unwrap();
    cfg.max_outer_iters = 100;
    run_icmra(&x, &geom, &cfg).expect("fixed-ε run")
}

/// Largest increase between consecutive surrogate values.
pub fn largest_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest MUSIC vs ICMRA DOA gap on the exact covariance of two unit-power
/// sources on a 7-element ULA, noise power known.
pub fn exact_pipeline_gap(thetas: &[f64]) -> f64 {
    let geom = ArrayGeometry::ula(7).unwrap();
    let sigma = 0.1;
    let r = doa_core::model_covariance(&geom, thetas, &[1.0, 1.0], sigma).unwrap();
    let music = doa_core::music_estimate(&r, &geom, 2, 0.01).unwrap();
    let cfg = IcmraConfig {
        sigma_override: Some(sigma),
        ..IcmraConfig::icmra(PenaltyKind::Logarithm)
    };
    let res = doa_core::run_icmra_covariance(&r, 1e6, &geom, &cfg).unwrap();
    let est = doa_core::recover_doas(&res.toeplitz(), doa_core::DEFAULT_RANK_ETA).unwrap();
    assert_eq!(est.k_hat, 2);
    music
        .thetas_deg
        .iter()
        .zip(&est.thetas_deg)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
