//! Stationary covariance kernels and their sums.

mod matrix;
mod spec;

pub use matrix::{cov_matrix, cov_symmetric, grad_log_params, CovMatrix};
pub(crate) use spec::ParamKind;
pub use spec::{Family, KernelSpec, KernelTerm, SPEC_SCHEMA};
