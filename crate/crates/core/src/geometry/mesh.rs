use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::points::Points;

pub type Vec3 = [f64; 3];

/// Minimum triangle area (mm²) accepted by [`Mesh::new`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Content hash of a mesh (hex SHA-256 of node coordinates and connectivity).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeshId(pub String);

impl fmt::Display for MeshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Non-fatal irregularities found while building a mesh.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshWarnings {
    /// Edges shared by more than two triangles.
    pub non_manifold_edges: usize,
    /// Nodes not referenced by any triangle; their normal defaults to +Z.
    pub isolated_nodes: usize,
}

impl MeshWarnings {
    pub fn is_empty(&self) -> bool {
        self.non_manifold_edges == 0 && self.isolated_nodes == 0
    }
}

/// Nominal triangulated surface with per-node unit normals.
///
/// Immutable after construction; normals are computed once by angle-weighted
/// averaging of the incident face normals.
#[derive(Debug, Clone)]
pub struct Mesh {
    nodes: Vec<Vec3>,
    elements: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    id: MeshId,
    warnings: MeshWarnings,
}

impl Mesh {
    pub fn new(nodes: Vec<Vec3>, elements: Vec<[usize; 3]>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::Invalid(format!(
                "a mesh needs at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        if elements.is_empty() {
            return Err(Error::Invalid("a mesh needs at least one triangle".into()));
        }
        if let Some(i) = nodes.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Invalid(format!("node {i} has a non-finite coordinate")));
        }
        for (e, tri) in elements.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= nodes.len()) {
                return Err(Error::Invalid(format!(
                    "triangle {e} references node {bad}, but the mesh has {} nodes",
                    nodes.len()
                )));
            }
            let area = triangle_area(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::Invalid(format!(
                    "triangle {e} is degenerate (area {area:e} mm²)"
                )));
            }
        }

        let (normals, isolated_nodes) = angle_weighted_normals(&nodes, &elements);
        let warnings = MeshWarnings {
            non_manifold_edges: count_non_manifold_edges(&elements),
            isolated_nodes,
        };
        if !warnings.is_empty() {
            log::warn!("mesh irregularities: {warnings:?}");
        }
        let id = checksum(&nodes, &elements);
        Ok(Self {
            nodes,
            elements,
            normals,
            id,
            warnings,
        })
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn id(&self) -> &MeshId {
        &self.id
    }

    pub fn warnings(&self) -> &MeshWarnings {
        &self.warnings
    }

    pub fn points(&self) -> Points {
        Points::from_rows(&self.nodes)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.nodes)
    }

    /// Connected components of the node graph induced by the triangles.
    /// Each component is returned as a sorted list of node indices; the list of
    /// components is ordered by smallest node index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for tri in &self.elements {
            for k in 1..3 {
                let a = find(&mut parent, tri[0]);
                let b = find(&mut parent, tri[k]);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut comps: Vec<Vec<usize>> = groups.into_values().collect();
        comps.sort_by_key(|c| c[0]);
        comps
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

#[inline]
pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

pub(crate) fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * norm(&cross(&sub(b, a), &sub(c, a)))
}

/// Interior angle at `a` of the triangle `(a, b, c)`.
fn corner_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let u = sub(b, a);
    let v = sub(c, a);
    norm(&cross(&u, &v)).atan2(dot(&u, &v))
}

fn angle_weighted_normals(nodes: &[Vec3], elements: &[[usize; 3]]) -> (Vec<Vec3>, usize) {
    let mut acc = vec![[0.0; 3]; nodes.len()];
    let mut area_acc = vec![[0.0; 3]; nodes.len()];
    for tri in elements {
        let [a, b, c] = tri.map(|i| nodes[i]);
        let face = cross(&sub(&b, &a), &sub(&c, &a));
        let len = norm(&face);
        let unit = face.map(|v| v / len);
        let angles = [
            corner_angle(&a, &b, &c),
            corner_angle(&b, &c, &a),
            corner_angle(&c, &a, &b),
        ];
        for (k, &v) in tri.iter().enumerate() {
            for d in 0..3 {
                acc[v][d] += angles[k] * unit[d];
                area_acc[v][d] += face[d];
            }
        }
    }
    let mut isolated = 0;
    let normals = acc
        .iter()
        .zip(&area_acc)
        .map(|(n, fallback)| {
            let len = norm(n);
            if len > 1e-300 {
                return n.map(|v| v / len);
            }
            // Opposing faces cancelled; fall back to area weighting, then +Z.
            let len = norm(fallback);
            if len > 1e-300 {
                fallback.map(|v| v / len)
            } else {
                isolated += 1;
                [0.0, 0.0, 1.0]
            }
        })
        .collect();
    (normals, isolated)
}

fn count_non_manifold_edges(elements: &[[usize; 3]]) -> usize {
    let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
    for tri in elements {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    edges.values().filter(|&&c| c > 2).count()
}

fn checksum(nodes: &[Vec3], elements: &[[usize; 3]]) -> MeshId {
    let mut hasher = Sha256::new();
    hasher.update((nodes.len() as u64).to_le_bytes());
    for p in nodes {
        for c in p {
            hasher.update(c.to_le_bytes());
        }
    }
    hasher.update((elements.len() as u64).to_le_bytes());
    for tri in elements {
        for &v in tri {
            hasher.update((v as u64).to_le_bytes());
        }
    }
    MeshId(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Mesh {
        let nodes = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        // Outward-facing quads split along their (0,2) diagonal.
        let quads = [
            [0, 3, 2, 1],
            [4, 5, 6, 7],
            [0, 1, 5, 4],
            [1, 2, 6, 5],
            [2, 3, 7, 6],
            [3, 0, 4, 7],
        ];
        let elements = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Mesh::new(nodes, elements).unwrap()
    }

    /// Independent accumulation: loop over every (node, triangle) pair.
    fn brute_force_normal(mesh: &Mesh, node: usize) -> Vec3 {
        let mut sum = [0.0; 3];
        for tri in mesh.elements() {
            let Some(k) = tri.iter().position(|&v| v == node) else {
                continue;
            };
            let p = mesh.nodes()[tri[k]];
            let q = mesh.nodes()[tri[(k + 1) % 3]];
            let r = mesh.nodes()[tri[(k + 2) % 3]];
            let u = sub(&q, &p);
            let v = sub(&r, &p);
            let angle = (dot(&u, &v) / (norm(&u) * norm(&v))).clamp(-1.0, 1.0).acos();
            let n = cross(&sub(&mesh.nodes()[tri[1]], &mesh.nodes()[tri[0]]), &sub(&mesh.nodes()[tri[2]], &mesh.nodes()[tri[0]]));
            let nl = norm(&n);
            for d in 0..3 {
                sum[d] += angle * n[d] / nl;
            }
        }
        let l = norm(&sum);
        sum.map(|v| v / l)
    }

    #[test]
    fn single_triangle_normals_point_up() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(mesh.n_nodes(), 3);
        assert_eq!(mesh.n_elements(), 1);
        for n in mesh.normals() {
            assert!((n[0]).abs() < 1e-15 && (n[1]).abs() < 1e-15);
            assert!((n[2] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cube_normals_match_brute_force_accumulation() {
        let mesh = unit_cube();
        assert_eq!((mesh.n_nodes(), mesh.n_elements()), (8, 12));
        for i in 0..8 {
            let expect = brute_force_normal(&mesh, i);
            let got = mesh.normals()[i];
            for d in 0..3 {
                assert!((expect[d] - got[d]).abs() < 1e-12, "node {i}: {got:?} vs {expect:?}");
            }
            assert!((norm(&got) - 1.0).abs() < 1e-9);
        }
        // Corner 6 = (1,1,1) points outward along the diagonal.
        let n = mesh.normals()[6];
        assert!(n.iter().all(|&c| c > 0.0));
        assert!(mesh.warnings().is_empty());
    }

    #[test]
    fn rejects_out_of_range_and_degenerate_triangles() {
        let nodes = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(Mesh::new(nodes.clone(), vec![[0, 1, 3]]).is_err());
        assert!(Mesh::new(nodes.clone(), vec![[0, 1, 1]]).is_err());
        let collinear = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(Mesh::new(collinear, vec![[0, 1, 2]]).is_err());
        assert!(Mesh::new(nodes[..2].to_vec(), vec![[0, 1, 0]]).is_err());
    }

    #[test]
    fn isolated_nodes_and_components_are_reported() {
        let nodes = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 5.0, 5.0],
            [6.0, 5.0, 5.0],
            [5.0, 6.0, 5.0],
            [9.0, 9.0, 9.0],
        ];
        let mesh = Mesh::new(nodes, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert_eq!(mesh.warnings().isolated_nodes, 1);
        assert_eq!(mesh.normals()[6], [0.0, 0.0, 1.0]);
        assert_eq!(mesh.components(), vec![vec![0, 1, 2], vec![3, 4, 5], vec![6]]);
    }

    #[test]
    fn non_manifold_edge_is_flagged() {
        let nodes = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 1.0, 0.0],
            [0.5, -1.0, 0.0],
            [0.5, 0.0, 1.0],
        ];
        let mesh = Mesh::new(nodes, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap();
        assert_eq!(mesh.warnings().non_manifold_edges, 1);
    }

    #[test]
    fn checksum_depends_on_content() {
        let a = unit_cube();
        let mut nodes = a.nodes().to_vec();
        nodes[0][0] = -0.5;
        let b = Mesh::new(nodes, a.elements().to_vec()).unwrap();
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), unit_cube().id());
        assert_eq!(a.id().0.len(), 64);
    }
}
