//! EP-based sparse signal recovery from unitarily invariant measurements.
//!
//! The crate has five pieces:
//!
//! - [`ensembles`]: SVD-factored measurement models with Haar unitary
//!   factors, plus spectral densities and trace-law statistics.
//! - [`priors`]: the Bernoulli-Gaussian signal prior, its posterior-mean
//!   denoiser, MMSE function, and extrinsic denoiser.
//! - [`ep`]: the two-module message-passing loop (LMMSE filter on one side,
//!   separable denoiser on the other) and its per-iteration trajectory.
//! - [`state_evolution`]: the scalar recursion that predicts the
//!   per-iteration MSE, fixed-point analysis, and cross-iteration error
//!   covariance prediction.
//! - [`diagnostics`]: an instrumented run of the error recursions in SVD
//!   coordinates plus empirical checks of the asymptotic orthogonality and
//!   covariance identities at finite size.

pub mod diagnostics;
pub mod ensembles;
pub mod ep;
mod error;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;

pub use diagnostics::{
    instrumented_run, lemma1_check, orthogonality_report, ErrorTrace, IdentityCheck, IdentityKind,
    IdentityReport, Lemma1Check,
};
pub use ensembles::{
    build_measurement, sample_haar_unitary, spectrum_of, trace_law_statistics, Ensemble,
    HermitianOp, MeasurementModel, SpectralDensity, SpectrumKind, UnitaryMatrix,
};
pub use ep::{gamma_coeff, lmmse_step, run_ep, EpIteration, EpOptions, EpTrajectory};
pub use error::{CoreError, Result};
pub use priors::{
    extrinsic_denoise, mmse, posterior_mean, sample_signal, AwgnDenoiser, DenoiserOutput,
    PriorSpec, V_CEIL, V_FLOOR,
};
pub use state_evolution::{
    cross_gamma, phi_a_to_b, phi_b_to_a, predict_error_covariance, se_fixed_points, se_recursion,
    CovarianceTables, FixedPoint, FixedPointGrid, FixedPointReport, McOptions, SeTrajectory,
};
