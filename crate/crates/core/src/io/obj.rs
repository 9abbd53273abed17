//! Wavefront OBJ: `v` and `f` records only.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "obj",
        line,
        message: message.into(),
    }
}

/// Parses vertices and faces. Polygons are fanned from their first corner, so
/// quads split along the (0,2) diagonal.
pub fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for (d, slot) in p.iter_mut().enumerate() {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| err(line_no, format!("vertex is missing coordinate {d}")))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| err(line_no, format!("bad coordinate {tok:?}")))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut corners = Vec::with_capacity(4);
                for tok in tokens {
                    let idx_str = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_str
                        .parse()
                        .map_err(|_| err(line_no, format!("bad face index {tok:?}")))?;
                    let resolved = match idx {
                        0 => return Err(err(line_no, "face index 0 is invalid (OBJ is 1-based)")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(err(
                            line_no,
                            format!("face index {idx} out of range ({} vertices so far)", vertices.len()),
                        ));
                    }
                    corners.push(resolved as usize);
                }
                if corners.len() < 3 {
                    return Err(err(line_no, "face needs at least 3 vertices"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_and_quad() {
        let text = "# test\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\nf 1//1 2//1 3//1 4//1\n";
        let (v, f) = parse_obj(text).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(f, vec![[0, 1, 2], [0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        let (_, f) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(f, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let e = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 7\n").unwrap_err();
        match e {
            Error::Format { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 0 1 1\n").is_err());
    }
}
