use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapemorph::geometry::{Mesh, MeshId};
use shapemorph::Error;

use crate::{read_text, CliResult, Failure, SCHEMA};

/// Files that together define a simulation run. Relative paths are resolved
/// against the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema: u32,
    pub mesh: PathBuf,
    pub mesh_checksum: MeshId,
    pub keypoints: PathBuf,
    pub spec: PathBuf,
    pub scenarios: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl SessionManifest {
    pub fn new(mesh_path: &Path, mesh: &Mesh, keypoints: &Path, spec: &Path, scenario: &Path) -> CliResult<Self> {
        Ok(Self {
            schema: SCHEMA,
            mesh: absolute(mesh_path)?,
            mesh_checksum: mesh.id().clone(),
            keypoints: absolute(keypoints)?,
            spec: absolute(spec)?,
            scenarios: vec![absolute(scenario)?],
            output_dir: None,
        })
    }

    /// Reads a manifest and makes every path absolute.
    pub fn load(path: &Path) -> CliResult<Self> {
        let mut m: Self = serde_json::from_str(&read_text(path)?).map_err(Error::from)?;
        if m.schema != SCHEMA {
            return Err(Failure::validation(format!("unsupported session schema {}", m.schema)));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut m.mesh);
        resolve(&mut m.keypoints);
        resolve(&mut m.spec);
        m.scenarios.iter_mut().for_each(resolve);
        if let Some(out) = m.output_dir.as_mut() {
            resolve(out);
        }
        if m.scenarios.is_empty() {
            return Err(Failure::validation("session lists no scenarios"));
        }
        for p in [&m.mesh, &m.keypoints, &m.spec].into_iter().chain(&m.scenarios) {
            if !p.is_file() {
                return Err(Error::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "file named in session manifest"),
                }
                .into());
            }
        }
        Ok(m)
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> CliResult<()> {
        if &self.mesh_checksum != mesh.id() {
            return Err(Failure::validation(format!(
                "mesh checksum mismatch: session expects {}, {} has {}",
                self.mesh_checksum,
                self.mesh.display(),
                mesh.id()
            )));
        }
        Ok(())
    }
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| {
        Failure::from(Error::Io {
            path: p.to_path_buf(),
            source: e,
        })
    })
}
