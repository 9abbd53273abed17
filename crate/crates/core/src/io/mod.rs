//! Mesh, point-cloud and deviation-field file formats.

mod obj;
mod ply;
mod vtk;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use obj::parse_obj;
pub use ply::{parse_ply, write_ply_ascii, PlyData};
pub use vtk::write_vtk;

use crate::error::{Error, Result};
use crate::geometry::{DeviationField, DeviationRole, Mesh, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(Self::Obj),
            "ply" => Some(Self::Ply),
            _ => None,
        }
    }

    /// Guesses from content: PLY files start with the `ply` magic.
    pub fn sniff(bytes: &[u8]) -> Self {
        if bytes.starts_with(b"ply") {
            Self::Ply
        } else {
            Self::Obj
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn as_text<'a>(bytes: &'a [u8], format: &'static str) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Format {
        format,
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "file is not valid UTF-8".into(),
    })
}

/// Parses raw mesh bytes in the given format.
pub fn parse_mesh(bytes: &[u8], format: MeshFormat) -> Result<Mesh> {
    let (vertices, faces) = match format {
        MeshFormat::Obj => parse_obj(as_text(bytes, "obj")?)?,
        MeshFormat::Ply => {
            let d = parse_ply(bytes)?;
            (d.vertices, d.faces)
        }
    };
    Mesh::new(vertices, faces)
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh> {
    parse_mesh(&read_file(path)?, format)
}

/// Loads a mesh, inferring the format from the extension and then the content.
pub fn load_mesh_auto(path: &Path) -> Result<Mesh> {
    let bytes = read_file(path)?;
    let format = MeshFormat::from_path(path).unwrap_or_else(|| MeshFormat::sniff(&bytes));
    parse_mesh(&bytes, format)
}

/// Loads a point cloud from PLY (vertex element), OBJ (`v` records) or plain
/// text with three coordinates per line.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    let points = if bytes.starts_with(b"ply") {
        parse_ply(&bytes)?.vertices
    } else if MeshFormat::from_path(path) == Some(MeshFormat::Obj) {
        parse_obj(as_text(&bytes, "obj")?)?.0
    } else {
        parse_rows3(as_text(&bytes, "xyz")?, "xyz")?
    };
    PointCloud::new(points)
}

/// Reads rows of three numbers separated by whitespace or commas; blank lines
/// and `#` comments are skipped.
pub fn parse_rows3(text: &str, format: &'static str) -> Result<Vec<Vec3>> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let fail = |message: String| Error::Format {
            format,
            line: i + 1,
            message,
        };
        if vals.len() != 3 {
            return Err(fail(format!("expected 3 values, found {}", vals.len())));
        }
        let mut row = [0.0; 3];
        for (slot, tok) in row.iter_mut().zip(&vals) {
            *slot = tok.parse().map_err(|_| fail(format!("bad number {tok:?}")))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-node displacement vectors, one `dx dy dz` row per mesh node.
pub fn load_displacement(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = read_file(path)?;
    parse_rows3(as_text(&bytes, "displacement")?, "displacement")
}

/// Deviation field stored as the `deviation` vertex property of a PLY file.
pub fn load_deviation_ply(path: &Path, mesh: &Mesh) -> Result<DeviationField> {
    let data = parse_ply(&read_file(path)?)?;
    let values = data.vertex_properties.get("deviation").cloned().ok_or_else(|| Error::Format {
        format: "ply",
        line: 1,
        message: "vertex element has no 'deviation' property".into(),
    })?;
    DeviationField::new(mesh, values, DeviationRole::Measured)
}

pub fn deviation_ply(mesh: &Mesh, values: &[f64]) -> String {
    write_ply_ascii(mesh.nodes(), mesh.elements(), Some(values))
}

pub fn deviation_vtk(mesh: &Mesh, values: &[f64]) -> String {
    write_vtk(mesh.nodes(), mesh.elements(), values)
}
