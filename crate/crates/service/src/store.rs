//! Sessions and their on-disk layout.
//!
//! Each session lives in `<data>/sessions/<id>/` holding the uploaded mesh
//! bytes, `state.json` and, once simulated, an `ensemble/` directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use shapemorph::geometry::{decimate, KeyPointSet, ManipulatedKeySet, Mesh, PreviewMesh};
use shapemorph::io::{parse_mesh, MeshFormat};
use shapemorph::kernels::KernelSpec;
use shapemorph::simulation::{Method, ToleranceSpec};
use shapemorph::{Error, Result};

/// Triangle budget of the preview mesh sent to the browser.
pub const PREVIEW_TRIANGLES: usize = 50_000;

const STATE_FILE: &str = "state.json";
pub const ENSEMBLE_DIR: &str = "ensemble";

/// Milestones of a session; a session never moves backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    MeshLoaded,
    KeysSelected,
    SpecReady,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInfo {
    pub count: usize,
    pub method: Method,
    pub seed: u64,
    pub spec: KernelSpec,
}

/// Persistent part of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema: u32,
    pub id: String,
    pub mesh_format: MeshFormat,
    pub stage: Stage,
    pub keys: Option<KeyPointSet>,
    pub spec: Option<KernelSpec>,
    pub manipulated: Option<ManipulatedKeySet>,
    pub tolerance: Option<ToleranceSpec>,
    pub ensemble: Option<EnsembleInfo>,
    pub created_at: String,
    pub updated_at: String,
}

pub struct Session {
    pub record: SessionRecord,
    pub mesh: Arc<Mesh>,
    pub preview: Arc<PreviewMesh>,
    pub dir: PathBuf,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn mesh_file(format: MeshFormat) -> &'static str {
    match format {
        MeshFormat::Obj => "mesh.obj",
        MeshFormat::Ply => "mesh.ply",
    }
}

impl Session {
    /// Writes `state.json` atomically after bumping `updated_at`.
    pub fn save(&mut self) -> Result<()> {
        self.record.updated_at = now();
        let path = self.dir.join(STATE_FILE);
        let tmp = self.dir.join("state.json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&self.record)?).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn advance(&mut self, stage: Stage) {
        self.record.stage = self.record.stage.max(stage);
    }

    pub fn ensemble_dir(&self) -> PathBuf {
        self.dir.join(ENSEMBLE_DIR)
    }

    fn load(dir: &Path) -> Result<Self> {
        let state = dir.join(STATE_FILE);
        let record: SessionRecord = serde_json::from_slice(&std::fs::read(&state).map_err(io_err(&state))?)?;
        let mesh_path = dir.join(mesh_file(record.mesh_format));
        let bytes = std::fs::read(&mesh_path).map_err(io_err(&mesh_path))?;
        let mesh = parse_mesh(&bytes, record.mesh_format)?;
        let preview = decimate(&mesh, PREVIEW_TRIANGLES);
        Ok(Self {
            record,
            mesh: Arc::new(mesh),
            preview: Arc::new(preview),
            dir: dir.to_path_buf(),
        })
    }
}

pub type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

/// In-memory index over the session directories; sessions written by an
/// earlier process are loaded on first access.
pub struct Store {
    root: PathBuf,
    open: Mutex<HashMap<String, SessionHandle>>,
}

/// Session ids are generated here, so anything else is rejected before it
/// can be used as a path component.
fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_hexdigit() || b == b'-')
}

impl Store {
    pub fn new(data_dir: &Path) -> Result<Self> {
        let root = data_dir.join("sessions");
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            open: Mutex::new(HashMap::new()),
        })
    }

    pub fn create(&self, bytes: &[u8]) -> Result<SessionHandle> {
        let format = MeshFormat::sniff(bytes);
        let mesh = parse_mesh(bytes, format)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.root.join(&id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mesh_path = dir.join(mesh_file(format));
        std::fs::write(&mesh_path, bytes).map_err(io_err(&mesh_path))?;
        let stamp = now();
        let mut session = Session {
            record: SessionRecord {
                schema: 1,
                id: id.clone(),
                mesh_format: format,
                stage: Stage::MeshLoaded,
                keys: None,
                spec: None,
                manipulated: None,
                tolerance: None,
                ensemble: None,
                created_at: stamp.clone(),
                updated_at: stamp,
            },
            preview: Arc::new(decimate(&mesh, PREVIEW_TRIANGLES)),
            mesh: Arc::new(mesh),
            dir,
        };
        session.save()?;
        let handle = Arc::new(tokio::sync::Mutex::new(session));
        self.open.lock().unwrap().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        if !valid_id(id) {
            return None;
        }
        let mut open = self.open.lock().unwrap();
        if let Some(h) = open.get(id) {
            return Some(h.clone());
        }
        let dir = self.root.join(id);
        if !dir.join(STATE_FILE).is_file() {
            return None;
        }
        match Session::load(&dir) {
            Ok(s) => {
                let handle = Arc::new(tokio::sync::Mutex::new(s));
                open.insert(id.to_string(), handle.clone());
                Some(handle)
            }
            Err(e) => {
                log::warn!("session {id} could not be restored: {e}");
                None
            }
        }
    }

    pub fn remove(&self, id: &str) -> Result<bool> {
        if !valid_id(id) {
            return Ok(false);
        }
        self.open.lock().unwrap().remove(id);
        let dir = self.root.join(id);
        if !dir.exists() {
            return Ok(false);
        }
        std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(true)
    }

    /// Deletes every session idle for longer than `ttl`; returns their ids.
    pub fn collect_garbage(&self, ttl: chrono::Duration, at: DateTime<Utc>) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(&self.root) else {
            return Vec::new();
        };
        let mut expired = Vec::new();
        for entry in entries.flatten() {
            let id = entry.file_name().to_string_lossy().into_owned();
            if !valid_id(&id) {
                continue;
            }
            let updated = std::fs::read(entry.path().join(STATE_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice::<SessionRecord>(&b).ok())
                .and_then(|r| DateTime::parse_from_rfc3339(&r.updated_at).ok());
            if let Some(t) = updated {
                if at - t.with_timezone(&Utc) > ttl {
                    // A session locked by a request is in use, whatever its timestamp says.
                    let busy = self
                        .open
                        .lock()
                        .unwrap()
                        .get(&id)
                        .is_some_and(|h| h.try_lock().is_err());
                    if !busy && self.remove(&id).is_ok() {
                        expired.push(id);
                    }
                }
            }
        }
        expired.sort();
        expired
    }
}
