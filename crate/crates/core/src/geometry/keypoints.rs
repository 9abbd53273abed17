use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::mesh::{dist2, Mesh, MeshId, Vec3};

/// Mesh nodes chosen to cover the surface, one per occupied voxel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyPointSet {
    #[serde(rename = "mesh_checksum")]
    pub mesh_id: MeshId,
    pub voxel_size: f64,
    pub indices: Vec<usize>,
}

impl KeyPointSet {
    pub fn new(mesh: &Mesh, voxel_size: f64, indices: Vec<usize>) -> Result<Self> {
        let set = Self {
            mesh_id: mesh.id().clone(),
            voxel_size,
            indices,
        };
        set.validate(mesh)?;
        Ok(set)
    }

    /// Checks the set against the mesh it claims to belong to.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if &self.mesh_id != mesh.id() {
            return Err(Error::Invalid(format!(
                "key points were selected on mesh {} but the mesh is {}",
                self.mesh_id,
                mesh.id()
            )));
        }
        if self.indices.is_empty() {
            return Err(Error::Invalid("key point set is empty".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("key point indices must be strictly increasing".into()));
        }
        if let Some(&last) = self.indices.last() {
            if last >= mesh.n_nodes() {
                return Err(Error::Invalid(format!(
                    "key point index {last} out of range for {} nodes",
                    mesh.n_nodes()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn coordinates(&self, mesh: &Mesh) -> Vec<Vec3> {
        self.indices.iter().map(|&i| mesh.nodes()[i]).collect()
    }
}

/// Subset of key points pinned to designer-chosen deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatedKeySet {
    /// Positions into the owning [`KeyPointSet`].
    pub selected: Vec<usize>,
    /// Target deviation (mm) for each selected key.
    pub deviations: Vec<f64>,
}

impl ManipulatedKeySet {
    pub fn new(keys: &KeyPointSet, selected: Vec<usize>, deviations: Vec<f64>) -> Result<Self> {
        let set = Self {
            selected,
            deviations,
        };
        set.validate(keys)?;
        Ok(set)
    }

    pub fn empty() -> Self {
        Self {
            selected: Vec::new(),
            deviations: Vec::new(),
        }
    }

    pub fn validate(&self, keys: &KeyPointSet) -> Result<()> {
        if self.selected.len() != self.deviations.len() {
            return Err(Error::Shape(format!(
                "{} selected keys but {} deviations",
                self.selected.len(),
                self.deviations.len()
            )));
        }
        if self.selected.len() > keys.len() {
            return Err(Error::Invalid("more manipulated keys than key points".into()));
        }
        let mut seen = vec![false; keys.len()];
        for &s in &self.selected {
            if s >= keys.len() {
                return Err(Error::Invalid(format!(
                    "manipulated key position {s} out of range for {} key points",
                    keys.len()
                )));
            }
            if std::mem::replace(&mut seen[s], true) {
                return Err(Error::Invalid(format!("key position {s} manipulated twice")));
            }
        }
        if self.deviations.iter().any(|d| !d.is_finite()) {
            return Err(Error::Invalid("manipulated deviations must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Mesh node index of every manipulated key.
    pub fn node_indices(&self, keys: &KeyPointSet) -> Vec<usize> {
        self.selected.iter().map(|&s| keys.indices[s]).collect()
    }
}

/// Voxel index of `p` in a grid anchored at `lo`, clamped so that nodes on the
/// upper face of the bounding box fall into the last voxel.
fn voxel_of(p: &Vec3, lo: &Vec3, counts: &[i64; 3], voxel: f64) -> [i64; 3] {
    let mut v = [0; 3];
    for d in 0..3 {
        v[d] = (((p[d] - lo[d]) / voxel).floor() as i64).clamp(0, counts[d] - 1);
    }
    v
}

/// Picks the node nearest the centre of every occupied cubic voxel of edge
/// `voxel_size`, with the voxel grid anchored at the bounding-box minimum.
/// Ties go to the lowest node index; the result is sorted.
pub fn select_key_points(mesh: &Mesh, voxel_size: f64) -> Result<KeyPointSet> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::Invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let (lo, hi) = mesh.bounding_box();
    let counts = voxel_counts(&lo, &hi, voxel_size);
    let mut best: BTreeMap<[i64; 3], (usize, f64)> = BTreeMap::new();
    for (i, p) in mesh.nodes().iter().enumerate() {
        let v = voxel_of(p, &lo, &counts, voxel_size);
        let centre = [0, 1, 2].map(|d| lo[d] + (v[d] as f64 + 0.5) * voxel_size);
        let d2 = dist2(p, &centre);
        best.entry(v)
            .and_modify(|e| {
                // Nodes are visited in index order, so strict < keeps the lowest index on ties.
                if d2 < e.1 {
                    *e = (i, d2);
                }
            })
            .or_insert((i, d2));
    }
    let mut indices: Vec<usize> = best.values().map(|&(i, _)| i).collect();
    indices.sort_unstable();
    KeyPointSet::new(mesh, voxel_size, indices)
}

fn voxel_counts(lo: &Vec3, hi: &Vec3, voxel: f64) -> [i64; 3] {
    [0, 1, 2].map(|d| (((hi[d] - lo[d]) / voxel).ceil() as i64).max(1))
}

/// Voxel that a node belongs to under the selection rule of [`select_key_points`].
pub fn voxel_index(mesh: &Mesh, voxel_size: f64, node: usize) -> [i64; 3] {
    let (lo, hi) = mesh.bounding_box();
    voxel_of(&mesh.nodes()[node], &lo, &voxel_counts(&lo, &hi, voxel_size), voxel_size)
}
