//! Tuning-free bootstrap test of factor regression against factor-augmented
//! sparse alternatives.
//!
//! The null hypothesis is that, after controlling for a small number of
//! latent common factors extracted from a high-dimensional panel, the
//! idiosyncratic part of the regressors carries no signal for the outcome.
//! The test statistic is the sup-norm of the scores of the residualized
//! regression, its critical value comes from a Gaussian multiplier
//! bootstrap, and the LASSO penalty it depends on is selected by a
//! data-driven fixed-point rule, so there are no tuning parameters.

pub mod bootstrap;
pub mod data_io;
pub mod error;
pub mod factor;
pub mod lasso;
pub mod rng;
pub mod sim;

pub use bootstrap::{
    criterion_q, decide, empirical_quantile, p_value, prepare, run_test, select_lambda,
    BootstrapDraws, KChoice, PValueResult, TestConfig, TestResult,
};
pub use error::{Error, Result};
pub use factor::{
    estimate_factors, estimate_num_factors, residualize, FactorDecomposition, FactorEstimate,
    PanelData,
};
pub use lasso::{compute_lambda_bar, fit, fit_path, kkt_residual, LambdaGrid, LassoFit};
pub use rng::{standard_normal_vector, uniform_vector, StreamKey};
pub use sim::{
    generate_panel, run_monte_carlo, CovarianceSampler, Design, RejectionTable, SignalShape,
    SimulationConfig,
};
