//! Legacy VTK POLYDATA output.

use std::fmt::Write as _;

use crate::geometry::Vec3;

/// ASCII legacy-VTK polydata with point scalars named `deviation`.
pub fn write_vtk(vertices: &[Vec3], faces: &[[usize; 3]], deviation: &[f64]) -> String {
    let mut out = String::with_capacity(48 * vertices.len() + 24 * faces.len() + 256);
    out.push_str("# vtk DataFile Version 3.0\nnormal deviation field (mm)\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {} double", vertices.len());
    for p in vertices {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    let _ = writeln!(out, "POLYGONS {} {}", faces.len(), 4 * faces.len());
    for f in faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    let _ = writeln!(out, "POINT_DATA {}", vertices.len());
    out.push_str("SCALARS deviation float 1\nLOOKUP_TABLE default\n");
    for d in deviation {
        let _ = writeln!(out, "{}", *d as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let s = write_vtk(&[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[[0, 1, 2]], &[0.0, 1.5, -2.0]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[4], "POINTS 3 double");
        assert_eq!(lines[8], "POLYGONS 1 4");
        assert_eq!(lines[9], "3 0 1 2");
        assert_eq!(lines[10], "POINT_DATA 3");
        assert_eq!(lines[11], "SCALARS deviation float 1");
        assert_eq!(&lines[13..], &["0", "1.5", "-2"]);
    }
}
