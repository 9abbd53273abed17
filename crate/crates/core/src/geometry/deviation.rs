use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::cloud::{PointCloud, SpatialGrid};
use crate::geometry::mesh::{dot, sub, Mesh, MeshId, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationRole {
    Measured,
    Mean,
    Unconditional,
    Instance,
}

/// Signed deviation (mm) of every mesh node along its surface normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationField {
    pub mesh_id: MeshId,
    pub values: Vec<f64>,
    pub role: DeviationRole,
    /// Nodes whose value was filled in rather than measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing: Option<Vec<bool>>,
}

impl DeviationField {
    pub fn new(mesh: &Mesh, values: Vec<f64>, role: DeviationRole) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::Shape(format!(
                "deviation field has {} values for a mesh of {} nodes",
                values.len(),
                mesh.n_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("deviation values must be finite".into()));
        }
        Ok(Self {
            mesh_id: mesh.id().clone(),
            values,
            role,
            missing: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.missing
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    pub fn stats(&self) -> FieldStats {
        FieldStats::of(&self.values)
    }
}

/// Min, max and root-mean-square of a set of deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub rms: f64,
}

impl FieldStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                min: 0.0,
                max: 0.0,
                rms: 0.0,
            };
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
        Self { min, max, rms }
    }
}

/// Normal deviation of each node from the nearest point of a pre-aligned cloud.
///
/// Nodes farther than `max_dist` from every cloud point are marked missing and
/// take the value of the nearest node that was measured.
pub fn deviation_from_cop(mesh: &Mesh, cop: &PointCloud, max_dist: f64) -> Result<DeviationField> {
    if !(max_dist > 0.0 && max_dist.is_finite()) {
        return Err(Error::Invalid(format!("max_dist must be positive, got {max_dist}")));
    }
    let grid = SpatialGrid::new(cop.points(), None, max_dist);
    let nodes = mesh.nodes();
    let mut values = vec![0.0; nodes.len()];
    let mut missing = vec![false; nodes.len()];
    for (i, x) in nodes.iter().enumerate() {
        match grid.nearest_within(x, max_dist) {
            Some((j, _)) => values[i] = dot(&sub(&cop.points()[j], x), &mesh.normals()[i]),
            None => missing[i] = true,
        }
    }
    let measured: Vec<usize> = (0..nodes.len()).filter(|&i| !missing[i]).collect();
    if measured.is_empty() {
        return Err(Error::EmptyOverlap { max_dist });
    }
    if measured.len() < nodes.len() {
        let node_grid = SpatialGrid::new(nodes, Some(&measured), fill_cell_size(mesh));
        for i in 0..nodes.len() {
            if missing[i] {
                let (j, _) = node_grid.nearest(&nodes[i]).expect("measured set is nonempty");
                values[i] = values[j];
            }
        }
        log::info!(
            "{} of {} nodes had no cloud point within {max_dist} mm",
            nodes.len() - measured.len(),
            nodes.len()
        );
    }
    let mut field = DeviationField::new(mesh, values, DeviationRole::Measured)?;
    field.missing = Some(missing);
    Ok(field)
}

fn fill_cell_size(mesh: &Mesh) -> f64 {
    let (lo, hi) = mesh.bounding_box();
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt();
    let per_axis = (mesh.n_nodes() as f64).cbrt().max(1.0);
    (diag / per_axis).max(1e-9)
}

/// Projection of per-node displacement vectors onto the node normals.
pub fn deviation_from_displacement(mesh: &Mesh, disp: &[Vec3]) -> Result<DeviationField> {
    if disp.len() != mesh.n_nodes() {
        return Err(Error::Shape(format!(
            "displacement has {} rows for a mesh of {} nodes",
            disp.len(),
            mesh.n_nodes()
        )));
    }
    let values = disp
        .iter()
        .zip(mesh.normals())
        .map(|(d, n)| dot(d, n))
        .collect();
    DeviationField::new(mesh, values, DeviationRole::Measured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::dist2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

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

    /// A zig-zag strip of 10 nodes: a "line mesh" with non-trivial normals.
    fn strip() -> Mesh {
        let nodes: Vec<Vec3> = (0..10)
            .map(|i| [i as f64 * 0.5, (i % 2) as f64, 0.1 * (i as f64).sin()])
            .collect();
        let elements = (0..8).map(|i| if i % 2 == 0 { [i, i + 1, i + 2] } else { [i + 1, i, i + 2] }).collect();
        Mesh::new(nodes, elements).unwrap()
    }

    #[test]
    fn cloud_equal_to_nodes_gives_zero() {
        let mesh = plate(5, 4, 2.0);
        let cop = PointCloud::new(mesh.nodes().to_vec()).unwrap();
        let field = deviation_from_cop(&mesh, &cop, 0.5).unwrap();
        assert!(field.values.iter().all(|&v| v == 0.0));
        assert_eq!(field.missing_count(), 0);
    }

    #[test]
    fn uniform_offset_along_normal() {
        let mesh = plate(6, 6, 1.0);
        let cop = PointCloud::new(mesh.nodes().iter().map(|p| [p[0], p[1], p[2] + 0.5]).collect()).unwrap();
        let field = deviation_from_cop(&mesh, &cop, 0.9).unwrap();
        assert!(field.values.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn randomized_offsets_match_exhaustive_projection() {
        let mesh = strip();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut cloud: Vec<Vec3> = mesh
            .nodes()
            .iter()
            .map(|p| [p[0] + rng.random_range(-0.1..0.1), p[1] + rng.random_range(-0.1..0.1), p[2] + rng.random_range(-0.2..0.2)])
            .collect();
        // Far-away distractors and one node left without coverage.
        cloud.push([100.0, 0.0, 0.0]);
        cloud[9] = [30.0, 30.0, 30.0];
        let cop = PointCloud::new(cloud.clone()).unwrap();
        let field = deviation_from_cop(&mesh, &cop, 0.3).unwrap();

        let mut expect = vec![f64::NAN; 10];
        let mut missing = vec![false; 10];
        for (i, x) in mesh.nodes().iter().enumerate() {
            let (j, d2) = (0..cloud.len())
                .map(|j| (j, dist2(x, &cloud[j])))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            if d2 <= 0.09 {
                expect[i] = dot(&sub(&cloud[j], x), &mesh.normals()[i]);
            } else {
                missing[i] = true;
            }
        }
        for i in 0..10 {
            if missing[i] {
                let j = (0..10)
                    .filter(|&j| !missing[j])
                    .min_by(|&a, &b| dist2(&mesh.nodes()[i], &mesh.nodes()[a]).partial_cmp(&dist2(&mesh.nodes()[i], &mesh.nodes()[b])).unwrap())
                    .unwrap();
                expect[i] = expect[j];
            }
        }
        assert_eq!(field.missing.as_ref().unwrap(), &missing);
        assert!(missing[9]);
        for i in 0..10 {
            assert!((field.values[i] - expect[i]).abs() < 1e-14, "node {i}");
        }
    }

    #[test]
    fn no_overlap_is_an_error() {
        let mesh = plate(3, 3, 1.0);
        let cop = PointCloud::new(vec![[100.0, 100.0, 100.0]]).unwrap();
        assert!(matches!(deviation_from_cop(&mesh, &cop, 1.0), Err(Error::EmptyOverlap { .. })));
        assert!(deviation_from_cop(&mesh, &cop, 0.0).is_err());
    }

    #[test]
    fn displacement_projection() {
        let mesh = strip();
        let zero = deviation_from_displacement(&mesh, &vec![[0.0; 3]; 10]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));

        let twice: Vec<Vec3> = mesh.normals().iter().map(|n| n.map(|c| 2.0 * c)).collect();
        let f = deviation_from_displacement(&mesh, &twice).unwrap();
        assert!(f.values.iter().all(|&v| (v - 2.0).abs() < 1e-12));

        let flat = plate(4, 4, 1.0);
        let tangent: Vec<Vec3> = (0..16).map(|i| [i as f64, -3.0, 0.0]).collect();
        let f = deviation_from_displacement(&flat, &tangent).unwrap();
        assert!(f.values.iter().all(|&v| v.abs() < 1e-12));

        assert!(matches!(deviation_from_displacement(&mesh, &[[0.0; 3]; 3]), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn displacement_projection_is_linear(
            a in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 10),
            b in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 10),
            s in -3.0f64..3.0,
        ) {
            let mesh = strip();
            let combo: Vec<Vec3> = a.iter().zip(&b).map(|(x, y)| [x[0] + s * y[0], x[1] + s * y[1], x[2] + s * y[2]]).collect();
            let fa = deviation_from_displacement(&mesh, &a).unwrap();
            let fb = deviation_from_displacement(&mesh, &b).unwrap();
            let fc = deviation_from_displacement(&mesh, &combo).unwrap();
            for i in 0..10 {
                prop_assert!((fc.values[i] - (fa.values[i] + s * fb.values[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn cloud_of_nodes_is_identity(jitter in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 10)) {
            let base = strip();
            let nodes: Vec<Vec3> = base.nodes().iter().zip(&jitter).map(|(p, j)| [p[0] + j[0], p[1] + j[1], p[2] + j[2]]).collect();
            if let Ok(mesh) = Mesh::new(nodes, base.elements().to_vec()) {
                let cop = PointCloud::new(mesh.nodes().to_vec()).unwrap();
                let f = deviation_from_cop(&mesh, &cop, 0.25).unwrap();
                prop_assert!(f.values.iter().all(|&v| v.abs() < 1e-12));
            }
        }
    }
}
