//! Nonconvex rank surrogates applied to eigenvalues, the reweighting matrix
//! they induce, and the smoothing-parameter schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, DoaError, Result};
use crate::linalg::{ensure_hermitian, CMat, HermitianEigen};

/// Eigenvalues below this are raised to it before evaluating gradients that
/// are unbounded at 0.
pub const GRADIENT_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `ln(x + ε)`
    Logarithm,
    /// `x^ε`, the smoothing parameter doubling as the exponent.
    Lp,
    /// `1 − exp(−x/ε)`
    Laplace,
}

impl PenaltyKind {
    /// Annealing factor used when none is configured.
    pub fn default_delta(self) -> f64 {
        match self {
            PenaltyKind::Logarithm => 2.0,
            PenaltyKind::Lp | PenaltyKind::Laplace => 10.0,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PenaltyKind::Logarithm => "log",
            PenaltyKind::Lp => "lp",
            PenaltyKind::Laplace => "lap",
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for PenaltyKind {
    type Err = DoaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "log" | "logarithm" => Ok(PenaltyKind::Logarithm),
            "lp" | "l_p" => Ok(PenaltyKind::Lp),
            "lap" | "laplace" => Ok(PenaltyKind::Laplace),
            other => domain(format!(
                "unknown penalty '{other}' (expected log, lp or lap)"
            )),
        }
    }
}

/// Penalty family with its current smoothing parameter `epsilon`, the initial
/// value `epsilon0` and the annealing factor `delta` (`ε ← ε/δ`).
///
/// `delta = 1` keeps `ε` fixed, which is how the fixed-ε descent property is
/// exercised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon0: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, epsilon0: f64, delta: f64) -> Result<Self> {
        let spec = PenaltySpec {
            kind,
            epsilon: epsilon0,
            delta,
            epsilon0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `ε₀ = 1` and the per-kind default annealing factor.
    pub fn with_defaults(kind: PenaltyKind) -> Self {
        PenaltySpec {
            kind,
            epsilon: 1.0,
            delta: kind.default_delta(),
            epsilon0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("epsilon0", self.epsilon0)] {
            if !(v > 0.0) || !v.is_finite() {
                return domain(format!("{name} must be positive, got {v}"));
            }
            if self.kind == PenaltyKind::Lp && v > 1.0 {
                return domain(format!("lp exponent {name} must lie in (0, 1], got {v}"));
            }
        }
        if !(self.delta >= 1.0) || !self.delta.is_finite() {
            return domain(format!(
                "annealing factor must be at least 1, got {}",
                self.delta
            ));
        }
        Ok(())
    }

    /// Same spec with `ε` reset to `ε₀`.
    pub fn reset(&self) -> Self {
        PenaltySpec {
            epsilon: self.epsilon0,
            ..*self
        }
    }
}

/// `g^ε(x)` for `x ≥ 0`.
pub fn penalty_value(spec: &PenaltySpec, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("penalty argument must be nonnegative, got {x}"));
    }
    let eps = spec.epsilon;
    Ok(match spec.kind {
        PenaltyKind::Logarithm => (x + eps).ln(),
        PenaltyKind::Lp => {
            if x == 0.0 {
                0.0
            } else {
                x.powf(eps)
            }
        }
        PenaltyKind::Laplace => -(-x / eps).exp_m1(),
    })
}

/// `∇g^ε(x)`; for ℓp and Laplace the argument is floored at [`GRADIENT_FLOOR`].
pub fn penalty_gradient(spec: &PenaltySpec, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("penalty argument must be nonnegative, got {x}"));
    }
    Ok(gradient_unchecked(spec, x))
}

fn gradient_unchecked(spec: &PenaltySpec, x: f64) -> f64 {
    let eps = spec.epsilon;
    match spec.kind {
        PenaltyKind::Logarithm => 1.0 / (x + eps),
        PenaltyKind::Lp => eps * x.max(GRADIENT_FLOOR).powf(eps - 1.0),
        PenaltyKind::Laplace => (-x.max(GRADIENT_FLOOR) / eps).exp() / eps,
    }
}

/// Eigenvalues of a matrix declared PSD, with round-off negatives clipped.
/// Strongly indefinite input is rejected.
fn psd_eigen(t: &CMat) -> Result<HermitianEigen> {
    ensure_hermitian(t, 1e-8, "surrogate argument")?;
    let mut eig = HermitianEigen::new(t);
    let top = eig.max().max(0.0);
    let bottom = eig.min();
    if bottom < -1e-6 * top || (top == 0.0 && bottom < -1e-10) {
        return domain(format!(
            "matrix is not PSD (eigenvalues {bottom:.3e}..{top:.3e})"
        ));
    }
    for v in eig.values.iter_mut() {
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// `G^ε(T) = Σ_i g^ε(λ_i(T))`.
pub fn surrogate_value(spec: &PenaltySpec, t: &CMat) -> Result<f64> {
    let eig = psd_eigen(t)?;
    eig.values.iter().map(|&x| penalty_value(spec, x)).sum()
}

/// Hermitian PSD reweighting matrix, the gradient of `G^ε` at some `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    w: CMat,
}

impl WeightMatrix {
    pub fn new(w: CMat) -> Result<Self> {
        ensure_hermitian(&w, 1e-10, "weight matrix")?;
        Ok(WeightMatrix {
            w: crate::linalg::hermitian_part(&w),
        })
    }

    /// `c · I`.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        WeightMatrix {
            w: CMat::identity(n, n).scale(c),
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Selects how [`weight_matrix_with`] evaluates the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPath {
    /// `U diag(∇g(λ)) Uᴴ` from an eigendecomposition.
    Eigen,
    /// `(T + εI)⁻¹` for the logarithm, `ε T^{ε−1}` for ℓp; Laplace falls back
    /// to the eigen path.
    Fast,
}

/// `W = U diag(∇g^ε(λ)) Uᴴ` where `T = U diag(λ) Uᴴ`.
pub fn weight_matrix(spec: &PenaltySpec, t: &CMat) -> Result<WeightMatrix> {
    weight_matrix_with(spec, t, WeightPath::Eigen)
}

pub fn weight_matrix_with(spec: &PenaltySpec, t: &CMat, path: WeightPath) -> Result<WeightMatrix> {
    match (path, spec.kind) {
        (WeightPath::Fast, PenaltyKind::Logarithm) => {
            ensure_hermitian(t, 1e-8, "weight argument")?;
            let n = t.nrows();
            let shifted =
                crate::linalg::hermitian_part(t) + CMat::identity(n, n).scale(spec.epsilon);
            let inv = crate::linalg::cholesky_pd(&shifted)
                .map(|c| c.inverse())
                .ok_or_else(|| DoaError::Numeric("T + εI is not positive definite".into()))?;
            WeightMatrix::new(inv)
        }
        (WeightPath::Fast, PenaltyKind::Lp) => {
            let eig = psd_eigen(t)?;
            let eps = spec.epsilon;
            Ok(WeightMatrix {
                w: eig.map(|x| eps * x.max(GRADIENT_FLOOR).powf(eps - 1.0)),
            })
        }
        _ => {
            let eig = psd_eigen(t)?;
            Ok(WeightMatrix {
                w: eig.map(|x| gradient_unchecked(spec, x)),
            })
        }
    }
}

/// Weight from an existing eigendecomposition of a possibly indefinite
/// Hermitian `T`, with the gradient taken at the singular values `|λ|`.
pub fn weight_from_eigen(spec: &PenaltySpec, eig: &HermitianEigen) -> WeightMatrix {
    WeightMatrix {
        w: eig.map(|x| gradient_unchecked(spec, x.abs())),
    }
}

/// `Σ_i g^ε(|λ_i|)`.
pub fn surrogate_from_eigenvalues(spec: &PenaltySpec, values: &[f64]) -> f64 {
    values
        .iter()
        .map(|&x| penalty_value(spec, x.abs()).unwrap_or(f64::NAN))
        .sum()
}

/// `ε ← ε/δ`, other fields unchanged.
pub fn schedule_next(spec: &PenaltySpec) -> PenaltySpec {
    PenaltySpec {
        epsilon: spec.epsilon / spec.delta,
        ..*spec
    }
}
