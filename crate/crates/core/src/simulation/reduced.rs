use faer::Mat;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{KeyPointSet, Mesh};
use crate::kernels::{cov_symmetric, KernelSpec};
use crate::linalg::SymmetricEigen;
use crate::simulation::harmonic::harmonic_interpolate;
use crate::simulation::{node_points, RandomSource};

/// Truncated eigenbasis of the key-point covariance, extended to every node.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    /// `K×R` orthonormal eigenvectors at the key nodes.
    pub key_basis: Mat<f64>,
    /// Retained eigenvalues (mm²), descending.
    pub eigenvalues: Vec<f64>,
    /// `N×R` interpolated basis over all mesh nodes.
    pub full_basis: Mat<f64>,
    /// Fraction of the total eigenvalue mass retained.
    pub energy: f64,
    pub key_nodes: Vec<usize>,
}

impl EigenBasis {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.full_basis.nrows()
    }

    /// `Φ_R·Λ_R^{1/2}·u` for a given `R`-vector of standard normals.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.full_basis.nrows();
        let mut out = vec![0.0; n];
        for (r, (&lambda, &ur)) in self.eigenvalues.iter().zip(u).enumerate() {
            let s = lambda.sqrt() * ur;
            let col = self.full_basis.col(r);
            for i in 0..n {
                out[i] += col[i] * s;
            }
        }
        out
    }
}

/// Eigenvalues counted as nonzero: above `λ_max·K·ε`.
fn numerical_rank(values: &[f64]) -> usize {
    let Some(&max) = values.first() else { return 0 };
    let threshold = max * values.len() as f64 * f64::EPSILON;
    values.iter().take_while(|&&v| v > threshold && v > 0.0).count()
}

/// Keeps the fewest leading eigenpairs of `C(keys, keys)` whose eigenvalues
/// reach `energy` of the total, then interpolates them harmonically to all
/// mesh nodes.
pub fn reduced_basis(spec: &KernelSpec, mesh: &Mesh, keys: &KeyPointSet, energy: f64) -> Result<EigenBasis> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::Invalid(format!("energy must lie in (0, 1], got {energy}")));
    }
    spec.validate_for_sampling()?;
    keys.validate(mesh)?;
    let points = node_points(mesh, spec.dim)?;
    let key_points = points.select(&keys.indices);
    let c = cov_symmetric(spec, &key_points)?;
    let eig = SymmetricEigen::new(c.data.as_ref())?;
    let rank = numerical_rank(&eig.values);
    let total: f64 = eig.values[..rank].iter().sum();
    let mut r = 0;
    let mut acc = 0.0;
    while r < rank && acc < energy * total {
        acc += eig.values[r];
        r += 1;
    }
    let k = keys.len();
    let key_basis = Mat::from_fn(k, r, |i, j| eig.vectors[(i, j)]);
    let full_basis = harmonic_interpolate(mesh, &keys.indices, key_basis.as_ref())?;
    log::debug!("reduced basis keeps {r} of {k} modes");
    Ok(EigenBasis {
        key_basis,
        eigenvalues: eig.values[..r].to_vec(),
        full_basis,
        energy: if total > 0.0 { acc / total } else { 1.0 },
        key_nodes: keys.indices.clone(),
    })
}

/// Unconditional draw over all nodes from a reduced basis.
pub fn sample_reduced(basis: &EigenBasis, rng: &RandomSource) -> Vec<f64> {
    let mut g = rng.rng();
    let u: Vec<f64> = (0..basis.rank()).map(|_| StandardNormal.sample(&mut g)).collect();
    basis.apply(&u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::select_key_points;
    use crate::kernels::Family;
    use crate::simulation::sampling::tests::sample_cov;

    fn plate(nx: usize, ny: usize, h: f64) -> Mesh {
        let mut nodes = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                nodes.push([i as f64 * h, j as f64 * h, 0.0]);
            }
        }
        let mut elements = Vec::new();
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let a = j * nx + i;
                elements.push([a, a + 1, a + nx + 1]);
                elements.push([a, a + nx + 1, a + nx]);
            }
        }
        Mesh::new(nodes, elements).unwrap()
    }

    fn all_keys(mesh: &Mesh) -> KeyPointSet {
        KeyPointSet::new(mesh, 1.0, (0..mesh.n_nodes()).collect()).unwrap()
    }

    #[test]
    fn all_nodes_as_keys_needs_no_interpolation() {
        let mesh = plate(5, 4, 1.0);
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![2.0, 2.0, 2.0]).unwrap();
        let b = reduced_basis(&spec, &mesh, &all_keys(&mesh), 0.9).unwrap();
        for i in 0..mesh.n_nodes() {
            for r in 0..b.rank() {
                assert_eq!(b.full_basis[(i, r)], b.key_basis[(i, r)]);
            }
        }
    }

    #[test]
    fn full_energy_keeps_numerical_rank() {
        let mesh = plate(4, 4, 1.0);
        let spec = KernelSpec::single(Family::Matern32, 1.0, vec![1.5, 1.5, 1.5]).unwrap();
        let b = reduced_basis(&spec, &mesh, &all_keys(&mesh), 1.0).unwrap();
        assert_eq!(b.rank(), 16);
        assert!((b.energy - 1.0).abs() < 1e-15);
        // Very long lengths make the key covariance numerically low-rank.
        let pts_spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![1e3; 3]).unwrap();
        let b = reduced_basis(&pts_spec, &mesh, &all_keys(&mesh), 1.0).unwrap();
        assert!(b.rank() < 16);
    }

    #[test]
    fn truncation_error_on_a_grid() {
        let mesh = plate(30, 30, 1.0);
        let indices: Vec<usize> = (0..900).filter(|i| (i % 30) % 3 == 0 && (i / 30) % 3 == 0).collect();
        let keys = KeyPointSet::new(&mesh, 3.0, indices).unwrap();
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![6.0, 6.0, 6.0]).unwrap();
        let b = reduced_basis(&spec, &mesh, &keys, 0.99).unwrap();
        let kp = node_points(&mesh, 3).unwrap().select(&keys.indices);
        let c = cov_symmetric(&spec, &kp).unwrap().data;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..keys.len() {
            for j in 0..keys.len() {
                let rec: f64 = (0..b.rank()).map(|r| b.key_basis[(i, r)] * b.eigenvalues[r] * b.key_basis[(j, r)]).sum();
                num += (rec - c[(i, j)]).powi(2);
                den += c[(i, j)].powi(2);
            }
        }
        assert!((num / den).sqrt() <= 0.05);
        assert!(b.rank() < keys.len());
    }

    #[test]
    fn rank_one_draws_are_multiples_of_the_mode() {
        let mesh = plate(6, 6, 1.0);
        let keys = select_key_points(&mesh, 2.0).unwrap();
        let spec = KernelSpec::single(Family::SquaredExponential, 1.0, vec![50.0; 3]).unwrap();
        let b = reduced_basis(&spec, &mesh, &keys, 0.5).unwrap();
        assert_eq!(b.rank(), 1);
        let v = sample_reduced(&b, &RandomSource::new(3, 0));
        let scale = v[0] / b.full_basis[(0, 0)];
        for i in 0..mesh.n_nodes() {
            assert!((v[i] - scale * b.full_basis[(i, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn key_covariance_matches_truncated_model() {
        let mesh = plate(8, 8, 1.0);
        let keys = select_key_points(&mesh, 2.0).unwrap();
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![3.0; 3]).unwrap();
        let b = reduced_basis(&spec, &mesh, &keys, 0.95).unwrap();
        let draws: Vec<Vec<f64>> = (0..5000)
            .map(|s| {
                let v = sample_reduced(&b, &RandomSource::new(8, s));
                keys.indices.iter().map(|&i| v[i]).collect()
            })
            .collect();
        let sc = sample_cov(&draws);
        for i in 0..keys.len() {
            for j in 0..keys.len() {
                let m: f64 = (0..b.rank()).map(|r| b.key_basis[(i, r)] * b.eigenvalues[r] * b.key_basis[(j, r)]).sum();
                assert!((sc[i][j] - m).abs() < 0.15);
            }
        }
        let a = sample_reduced(&b, &RandomSource::new(1, 1));
        assert_eq!(a, sample_reduced(&b, &RandomSource::new(1, 1)));
    }

    #[test]
    fn invalid_energy() {
        let mesh = plate(3, 3, 1.0);
        let spec = KernelSpec::single(Family::Matern52, 1.0, vec![1.0; 3]).unwrap();
        assert!(reduced_basis(&spec, &mesh, &all_keys(&mesh), 0.0).is_err());
        assert!(reduced_basis(&spec, &mesh, &all_keys(&mesh), 1.5).is_err());
    }
}
