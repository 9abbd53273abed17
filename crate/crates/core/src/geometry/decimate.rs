use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::geometry::mesh::{dist2, Mesh};

/// Reduced triangle mesh for display; vertices are a subset of the source nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewMesh {
    pub positions: Vec<[f32; 3]>,
    pub indices: Vec<[u32; 3]>,
    pub normals: Vec<[f32; 3]>,
    /// Source mesh node of every preview vertex.
    pub source_nodes: Vec<usize>,
}

impl PreviewMesh {
    /// Little-endian blob: `u32 n_vertices`, `u32 n_triangles`, positions
    /// (`3·n_vertices` f32), indices (`3·n_triangles` u32), normals
    /// (`3·n_vertices` f32).
    pub fn to_bytes(&self) -> Vec<u8> {
        let nv = self.positions.len();
        let nt = self.indices.len();
        let mut out = Vec::with_capacity(8 + 24 * nv + 12 * nt);
        out.extend_from_slice(&(nv as u32).to_le_bytes());
        out.extend_from_slice(&(nt as u32).to_le_bytes());
        for p in &self.positions {
            p.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
        }
        for t in &self.indices {
            t.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
        }
        for n in &self.normals {
            n.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
        }
        out
    }

    /// Samples a per-node field at the retained vertices.
    pub fn sample(&self, values: &[f64]) -> Vec<f32> {
        self.source_nodes.iter().map(|&i| values[i] as f32).collect()
    }
}

/// Collapses shortest edges (the surviving endpoint keeps its position) until
/// at most `max_triangles` remain.
pub fn decimate(mesh: &Mesh, max_triangles: usize) -> PreviewMesh {
    let nodes = mesh.nodes();
    let mut faces: Vec<[usize; 3]> = mesh.elements().to_vec();
    let mut alive = vec![true; faces.len()];
    let mut alive_count = faces.len();
    let mut vertex_faces: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (f, tri) in faces.iter().enumerate() {
        for &v in tri {
            vertex_faces[v].push(f);
        }
    }
    let mut removed = vec![false; nodes.len()];
    let mut heap = BinaryHeap::new();
    let push = |heap: &mut BinaryHeap<_>, a: usize, b: usize| {
        let (a, b) = (a.min(b), a.max(b));
        // Squared lengths are non-negative, so their bit patterns sort like the values.
        heap.push(Reverse((dist2(&nodes[a], &nodes[b]).to_bits(), a, b)));
    };
    for tri in &faces {
        for k in 0..3 {
            if tri[k] < tri[(k + 1) % 3] {
                push(&mut heap, tri[k], tri[(k + 1) % 3]);
            }
        }
    }

    while alive_count > max_triangles {
        let Some(Reverse((_, a, b))) = heap.pop() else {
            break;
        };
        if removed[a] || removed[b] {
            continue;
        }
        let shares_face = vertex_faces[b]
            .iter()
            .any(|&f| alive[f] && faces[f].contains(&a));
        if !shares_face {
            continue;
        }
        let moved = std::mem::take(&mut vertex_faces[b]);
        for f in moved {
            if !alive[f] {
                continue;
            }
            for v in faces[f].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            let t = faces[f];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                alive[f] = false;
                alive_count -= 1;
                continue;
            }
            vertex_faces[a].push(f);
            for &v in &t {
                if v != a {
                    push(&mut heap, a, v);
                }
            }
        }
        removed[b] = true;
        vertex_faces[a].retain(|&f| alive[f]);
    }

    let mut remap = vec![u32::MAX; nodes.len()];
    let mut source_nodes = Vec::new();
    let mut indices = Vec::with_capacity(alive_count);
    for (f, tri) in faces.iter().enumerate() {
        if !alive[f] {
            continue;
        }
        indices.push(tri.map(|v| {
            if remap[v] == u32::MAX {
                remap[v] = source_nodes.len() as u32;
                source_nodes.push(v);
            }
            remap[v]
        }));
    }
    let positions = source_nodes.iter().map(|&v| nodes[v].map(|c| c as f32)).collect();
    let normals = source_nodes
        .iter()
        .map(|&v| mesh.normals()[v].map(|c| c as f32))
        .collect();
    PreviewMesh {
        positions,
        indices,
        normals,
        source_nodes,
    }
}
