//! Gridless direction-of-arrival estimation by reweighted low-rank Toeplitz
//! covariance reconstruction.
//!
//! The pipeline is: snapshots → sample covariance and noise power
//! ([`array_model`]) → reweighted trace minimization ([`icmra`], with
//! subproblems in [`subproblem`] and weights in [`penalty`]) → DOAs and powers
//! from the recovered Toeplitz matrix ([`doa_recovery`]). [`monte_carlo`]
//! scores estimators over seeded trials.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_model;
pub mod doa_recovery;
pub mod error;
pub mod icmra;
pub mod linalg;
pub mod monte_carlo;
pub mod penalty;
pub mod stats;
pub mod subproblem;
pub mod toeplitz;

pub use array_model::{
    estimate_noise_power, full_fill_covariance, manifold, model_covariance, sample_covariance,
    steering_vector, synthesize_snapshots, ArrayGeometry, NoiseMode, Scenario, Snapshots,
};
pub use doa_recovery::{
    estimate_rank, music_estimate, music_grid_step, power_least_squares, recover_doas,
    vandermonde_decompose, DoaEstimate, DEFAULT_RANK_ETA,
};
pub use error::{DoaError, Result};
pub use icmra::{
    run_cmra, run_icmra, run_icmra_covariance, Backend, IcmraConfig, IcmraResult, Initialization,
    StopReason,
};
pub use linalg::{CMat, CVec};
pub use monte_carlo::{
    aggregate, run_monte_carlo, AggregateRow, Estimator, Method, MonteCarloOptions, ScenarioSpec,
    TrialRow, TrialTable,
};
pub use penalty::{weight_matrix, PenaltyKind, PenaltySpec, WeightMatrix};
pub use stats::{beta_threshold, chi2_cdf, chi2_inv, crlb_stochastic};
pub use subproblem::{FicmraWhitener, InnerMethod, SolverOptions};
pub use toeplitz::{psd_project, toeplitz_adjoint, toeplitz_from_param, ToeplitzParam};
