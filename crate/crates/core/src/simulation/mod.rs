//! Mean prediction, random field sampling and conditional simulation.

mod conditional;
mod gpr;
mod harmonic;
mod random;
mod reduced;
mod sampling;
mod scenario;
mod tolerance;

pub use conditional::{
    conditional_simulate, write_ensemble, Ensemble, EnsembleManifest, InstanceSummary, Method, Provenance,
    SimulationOptions,
};
pub use gpr::gpr_mean;
pub use random::RandomSource;
pub use reduced::{reduced_basis, sample_reduced, EigenBasis};
pub use sampling::{sample_cholesky, sample_eigen, DENSE_LIMIT, SAMPLING_JITTER};
pub use scenario::{form_only, scenario_bend, scenario_patch, Axis, KeyDeviation, Region, Scenario};
pub use tolerance::{inverse_normal_cdf, sigma_from_tolerance, ToleranceSpec};

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::points::Points;

/// Node coordinates as kernel inputs: the first `dim` coordinates of each
/// node (x, then y, then z).
pub fn node_points(mesh: &Mesh, dim: usize) -> Result<Points> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Shape(format!(
            "kernels over mesh nodes need 1 to 3 input dimensions, got {dim}"
        )));
    }
    let nodes = mesh.nodes();
    Ok(Points::from_fn(nodes.len(), dim, |i, d| nodes[i][d]))
}
