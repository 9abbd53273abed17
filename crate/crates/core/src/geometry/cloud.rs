use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::mesh::{bounding_box, dist2, Vec3};

/// Measured surface points, pre-aligned to the nominal mesh frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("a point cloud needs at least one point".into()));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("point cloud coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

type Cell = (i64, i64, i64);

/// Uniform hash grid over a fixed point set for nearest-neighbour queries.
pub(crate) struct SpatialGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    origin: Vec3,
    buckets: HashMap<Cell, Vec<usize>>,
    /// Largest populated cell index distance from any cell, bounds ring search.
    span: i64,
}

impl<'a> SpatialGrid<'a> {
    /// Grid over `points[i]` for every `i` in `subset` (all points when `None`).
    pub fn new(points: &'a [Vec3], subset: Option<&[usize]>, cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        let (origin, hi) = bounding_box(points);
        let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
        let mut insert = |i: usize| {
            buckets.entry(cell_of(&points[i], &origin, cell)).or_default().push(i);
        };
        match subset {
            Some(s) => s.iter().copied().for_each(&mut insert),
            None => (0..points.len()).for_each(&mut insert),
        }
        let span = (0..3)
            .map(|d| ((hi[d] - origin[d]) / cell).ceil() as i64 + 1)
            .max()
            .unwrap_or(1);
        Self {
            points,
            cell,
            origin,
            buckets,
            span,
        }
    }

    /// Nearest indexed point to `q` within `radius` (inclusive); ties broken by
    /// lowest index. Searches only the 27 neighbouring cells, so `radius` must
    /// not exceed the cell size.
    pub fn nearest_within(&self, q: &Vec3, radius: f64) -> Option<(usize, f64)> {
        debug_assert!(radius <= self.cell);
        let c = cell_of(q, &self.origin, self.cell);
        let mut best: Option<(usize, f64)> = None;
        self.scan_shell(c, 1, q, &mut best, true);
        best.filter(|&(_, d2)| d2 <= radius * radius)
    }

    /// Nearest indexed point to `q` with no distance bound.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.buckets.is_empty() {
            return None;
        }
        let c = cell_of(q, &self.origin, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.span + outside_cells(q, &self.origin, self.cell, self.span);
        for ring in 0..=max_ring {
            self.scan_shell(c, ring, q, &mut best, false);
            if let Some((_, d2)) = best {
                // Every unscanned point is at least `ring * cell` away.
                let bound = ring as f64 * self.cell;
                if d2 <= bound * bound {
                    break;
                }
            }
        }
        best
    }

    fn scan_shell(&self, c: Cell, ring: i64, q: &Vec3, best: &mut Option<(usize, f64)>, filled: bool) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if !filled && dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    let Some(bucket) = self.buckets.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                        continue;
                    };
                    for &i in bucket {
                        let d2 = dist2(q, &self.points[i]);
                        let better = match *best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            *best = Some((i, d2));
                        }
                    }
                }
            }
        }
    }
}

fn cell_of(p: &Vec3, origin: &Vec3, cell: f64) -> Cell {
    (
        ((p[0] - origin[0]) / cell).floor() as i64,
        ((p[1] - origin[1]) / cell).floor() as i64,
        ((p[2] - origin[2]) / cell).floor() as i64,
    )
}

fn outside_cells(q: &Vec3, origin: &Vec3, cell: f64, span: i64) -> i64 {
    let c = cell_of(q, origin, cell);
    [c.0, c.1, c.2]
        .iter()
        .map(|&v| if v < 0 { -v } else { (v - span).max(0) })
        .max()
        .unwrap_or(0)
}
