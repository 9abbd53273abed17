use std::path::Path;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DeviationField, DeviationRole, FieldStats, KeyPointSet, ManipulatedKeySet, Mesh, MeshId};
use crate::io::{deviation_ply, write_file};
use crate::kernels::KernelSpec;
use crate::simulation::gpr::Conditioner;
use crate::simulation::reduced::{reduced_basis, sample_reduced, EigenBasis};
use crate::simulation::sampling::{DenseFactor, DENSE_LIMIT};
use crate::simulation::{node_points, RandomSource, ToleranceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cholesky,
    Eigen,
    Reduced,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Method::Cholesky),
            "eigen" => Ok(Method::Eigen),
            "reduced" => Ok(Method::Reduced),
            _ => Err(Error::Invalid(format!("unknown sampling method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationOptions {
    pub method: Method,
    /// Retained eigenvalue fraction for the reduced method.
    pub energy: f64,
    pub dense_limit: usize,
    /// Conditioning jitter relative to `σ_T²`.
    pub jitter: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            method: Method::Cholesky,
            energy: 0.99,
            dense_limit: DENSE_LIMIT,
            jitter: 1e-8,
        }
    }
}

impl SimulationOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: KernelSpec,
    pub seed: u64,
    pub streams: Vec<u64>,
    pub method: Method,
}

/// Conditionally simulated parts sharing one mean shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub mesh_id: MeshId,
    pub instances: Vec<DeviationField>,
    pub mean_field: DeviationField,
    pub tolerance: ToleranceSpec,
    pub manipulated: ManipulatedKeySet,
    pub provenance: Provenance,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Per-node fraction of instances with `|Z| ≤ usl`.
    pub fn conformance(&self) -> Vec<f64> {
        let n = self.mean_field.len();
        let m = self.instances.len() as f64;
        (0..n)
            .map(|i| {
                self.instances
                    .iter()
                    .filter(|f| f.values[i].abs() <= self.tolerance.usl)
                    .count() as f64
                    / m
            })
            .collect()
    }

    pub fn instance_stats(&self) -> Vec<FieldStats> {
        self.instances.iter().map(DeviationField::stats).collect()
    }
}

enum Sampler {
    Dense(DenseFactor),
    Reduced(EigenBasis),
}

impl Sampler {
    fn draw(&self, rng: &RandomSource) -> Vec<f64> {
        match self {
            Sampler::Dense(f) => f.sample(rng),
            Sampler::Reduced(b) => sample_reduced(b, rng),
        }
    }
}

/// Conditional simulation of `count` parts.
///
/// The field variance is set by the tolerance (`σ_T²`, spread over the kernel
/// terms in proportion to their variances); correlation lengths come from
/// `spec`. Instance `i` uses random stream `i` of `seed`. Each instance is
/// `Z̄ + Z̄_k − ξ_u`, where `ξ_u` is an unconditional draw, `Z̄` the kriged
/// mean of the manipulated deviations and `Z̄_k` the kriged mean of `ξ_u` read
/// at the manipulated keys, so every instance passes through the manipulated
/// values. With no manipulated keys the instances are the unconditional draws.
#[allow(clippy::too_many_arguments)]
pub fn conditional_simulate(
    spec: &KernelSpec,
    mesh: &Mesh,
    keys: &KeyPointSet,
    manipulated: &ManipulatedKeySet,
    tolerance: &ToleranceSpec,
    count: usize,
    options: &SimulationOptions,
    seed: u64,
) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::Invalid("instance count must be at least 1".into()));
    }
    spec.validate()?;
    tolerance.validate()?;
    keys.validate(mesh)?;
    manipulated.validate(keys)?;
    let spec_t = spec.with_total_variance(tolerance.variance());
    let points = node_points(mesh, spec.dim)?;
    let sampler = match options.method {
        Method::Cholesky => Sampler::Dense(DenseFactor::cholesky(&spec_t, &points, options.dense_limit)?),
        Method::Eigen => Sampler::Dense(DenseFactor::eigen(&spec_t, &points, options.dense_limit)?),
        Method::Reduced => Sampler::Reduced(reduced_basis(&spec_t, mesh, keys, options.energy)?),
    };
    let base = RandomSource::new(seed, 0);
    let draws: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|i| sampler.draw(&base.stream(i)))
        .collect();

    let n = mesh.n_nodes();
    let (mean, instances) = if manipulated.is_empty() {
        (vec![0.0; n], draws)
    } else {
        let nodes = manipulated.node_indices(keys);
        let conditioner = Conditioner::new(&spec_t, points.select(&nodes), options.jitter * tolerance.variance())
            .map_err(|e| match e {
                Error::DuplicateKeys(pairs) => Error::DuplicateKeys(
                    pairs
                        .into_iter()
                        .map(|(a, b)| (manipulated.selected[a], manipulated.selected[b]))
                        .collect(),
                ),
                other => other,
            })?;
        let k = nodes.len();
        let rhs = Mat::from_fn(k, count + 1, |r, c| {
            if c == 0 {
                manipulated.deviations[r]
            } else {
                draws[c - 1][nodes[r]]
            }
        });
        let weights = conditioner.weights(rhs.as_ref());
        let pred = conditioner.predict(&points, weights.as_ref())?;
        let mean: Vec<f64> = (0..n).map(|i| pred[(i, 0)]).collect();
        let instances = draws
            .into_iter()
            .enumerate()
            .map(|(c, xi)| (0..n).map(|i| mean[i] + pred[(i, c + 1)] - xi[i]).collect())
            .collect();
        (mean, instances)
    };

    let instances = instances
        .into_iter()
        .map(|v| DeviationField::new(mesh, v, DeviationRole::Instance))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        mesh_id: mesh.id().clone(),
        instances,
        mean_field: DeviationField::new(mesh, mean, DeviationRole::Mean)?,
        tolerance: *tolerance,
        manipulated: manipulated.clone(),
        provenance: Provenance {
            spec: spec.clone(),
            seed,
            streams: (0..count as u64).collect(),
            method: options.method,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub file: String,
    pub min: f64,
    pub max: f64,
    pub rms: f64,
}

/// Written next to the instance PLY files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub mesh_checksum: MeshId,
    pub spec: KernelSpec,
    pub tolerance: ToleranceSpec,
    pub manipulated: ManipulatedKeySet,
    pub seed: u64,
    pub streams: Vec<u64>,
    pub method: Method,
    pub mean_file: String,
    pub instances: Vec<InstanceSummary>,
}

impl EnsembleManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Writes `instance_NNNN.ply` per instance, `mean.ply` and `manifest.json`
/// into `dir`.
pub fn write_ensemble(ensemble: &Ensemble, mesh: &Mesh, dir: &Path, created_at: Option<String>) -> Result<EnsembleManifest> {
    if &ensemble.mesh_id != mesh.id() {
        return Err(Error::Invalid("ensemble was simulated on a different mesh".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut instances = Vec::with_capacity(ensemble.len());
    for (k, field) in ensemble.instances.iter().enumerate() {
        let file = format!("instance_{k:04}.ply");
        write_file(&dir.join(&file), deviation_ply(mesh, &field.values))?;
        let s = field.stats();
        instances.push(InstanceSummary {
            file,
            min: s.min,
            max: s.max,
            rms: s.rms,
        });
    }
    let mean_file = "mean.ply".to_string();
    write_file(&dir.join(&mean_file), deviation_ply(mesh, &ensemble.mean_field.values))?;
    let manifest = EnsembleManifest {
        schema: 1,
        created_at,
        mesh_checksum: mesh.id().clone(),
        spec: ensemble.provenance.spec.clone(),
        tolerance: ensemble.tolerance,
        manipulated: ensemble.manipulated.clone(),
        seed: ensemble.provenance.seed,
        streams: ensemble.provenance.streams.clone(),
        method: ensemble.provenance.method,
        mean_file,
        instances,
    };
    write_file(&dir.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}
