//! Likelihood-based hyperparameter estimation and batch statistics.

mod batch;
mod fit;
mod likelihood;
mod optimize;

pub use batch::{
    characterize_batch, compare_batches, compare_lengths, sample_batch_params, welch_t_test, AxisTest, BatchModel,
    MAX_SAMPLING_ATTEMPTS,
};
pub use fit::{fit_params, fitted_nll, FitConfig, FitResult, MIN_VARIANCE};
pub use likelihood::{neg_log_likelihood, nll_and_gradient, nll_gradient};
