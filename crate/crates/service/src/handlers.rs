use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use shapemorph::estimation::{fit_params, FitConfig};
use shapemorph::geometry::{select_key_points, ManipulatedKeySet, Mesh, PreviewMesh};
use shapemorph::kernels::{Family, KernelSpec, KernelTerm};
use shapemorph::simulation::{
    conditional_simulate, node_points, write_ensemble, KeyDeviation, Method, Scenario, SimulationOptions,
    ToleranceSpec, DENSE_LIMIT,
};
use shapemorph::{Error, ErrorKind};

use crate::jobs::Cancel;
use crate::store::{EnsembleInfo, Session, SessionHandle, Stage};
use crate::AppState;

type AppResult<T> = Result<T, ApiError>;
type St = State<Arc<AppState>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Io => StatusCode::INTERNAL_SERVER_ERROR,
            ErrorKind::Validation | ErrorKind::Numerical => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("malformed request: {e}")))
}

fn session(state: &AppState, id: &str) -> AppResult<SessionHandle> {
    state
        .store
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
}

fn mesh_summary(mesh: &Mesh) -> Value {
    let (min, max) = mesh.bounding_box();
    json!({
        "n_nodes": mesh.n_nodes(),
        "n_elems": mesh.n_elements(),
        "bbox": { "min": min, "max": max },
        "warnings": mesh.warnings(),
    })
}

fn merge(mut a: Value, b: Value) -> Value {
    if let (Some(a), Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

pub async fn create_session(State(state): St, body: Bytes) -> AppResult<Response> {
    let store_state = state.clone();
    let created = tokio::task::spawn_blocking(move || store_state.store.create(&body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let handle = created.map_err(|e| match e.kind() {
        ErrorKind::Io => ApiError::from(e),
        _ => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
    })?;
    let s = handle.lock().await;
    let body = merge(
        json!({
            "id": s.record.id,
            "preview_vertices": s.preview.positions.len(),
            "preview_triangles": s.preview.indices.len(),
        }),
        mesh_summary(&s.mesh),
    );
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn session_view(s: &Session) -> Value {
    let r = &s.record;
    merge(
        json!({
            "id": r.id,
            "stage": r.stage,
            "keys": r.keys.as_ref().map(|k| json!({ "voxel_size": k.voxel_size, "count": k.len() })),
            "spec": r.spec,
            "manipulated": r.manipulated,
            "tolerance": r.tolerance,
            "ensemble": r.ensemble,
            "created_at": r.created_at,
            "updated_at": r.updated_at,
        }),
        mesh_summary(&s.mesh),
    )
}

pub async fn get_session(State(state): St, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let handle = session(&state, &id)?;
    let s = handle.lock().await;
    Ok(Json(session_view(&s)))
}

pub async fn delete_session(State(state): St, Path(id): Path<String>) -> AppResult<StatusCode> {
    let handle = session(&state, &id)?;
    let _guard = handle.lock().await;
    state.store.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct KeypointRequest {
    voxel_size: f64,
}

pub async fn keypoints(State(state): St, Path(id): Path<String>, body: Bytes) -> AppResult<Json<Value>> {
    let handle = session(&state, &id)?;
    let req: KeypointRequest = parse(&body)?;
    let mut s = handle.lock().await;
    if s.record.stage > Stage::KeysSelected {
        return Err(ApiError::conflict(
            "key points are fixed once a kernel spec exists; start a new session to reselect them",
        ));
    }
    let keys = select_key_points(&s.mesh, req.voxel_size)?;
    let body = json!({
        "voxel_size": keys.voxel_size,
        "count": keys.len(),
        "indices": keys.indices,
        "coordinates": keys.coordinates(&s.mesh),
    });
    s.record.keys = Some(keys);
    s.advance(Stage::KeysSelected);
    s.save()?;
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Families {
    One(Family),
    Many(Vec<Family>),
}

fn default_dim() -> usize {
    3
}

#[derive(Deserialize)]
struct FitRequest {
    /// Measured deviation of every mesh node (mm).
    deviation: Vec<f64>,
    family: Option<Families>,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default)]
    config: FitConfig,
}

fn accepted(job_id: String) -> Response {
    let location = format!("/api/v1/jobs/{job_id}");
    (
        StatusCode::ACCEPTED,
        [(header::LOCATION, location)],
        Json(json!({ "job_id": job_id, "status": "queued" })),
    )
        .into_response()
}

/// Either a direct spec upload (a body with `terms`) or a fit job (a body
/// with `deviation`).
pub async fn fit(State(state): St, Path(id): Path<String>, body: Bytes) -> AppResult<Response> {
    let handle = session(&state, &id)?;
    let value: Value = parse(&body)?;
    let mut s = handle.lock().await;
    let Some(keys) = s.record.keys.clone() else {
        return Err(ApiError::conflict("select key points before fitting"));
    };

    if value.get("terms").is_some() {
        let spec: KernelSpec = serde_json::from_value(value).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        spec.validate()?;
        let text = spec.to_json();
        s.record.spec = Some(spec);
        s.advance(Stage::SpecReady);
        s.save()?;
        return Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response());
    }

    let req: FitRequest = serde_json::from_value(value).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    if req.deviation.len() != s.mesh.n_nodes() {
        return Err(ApiError::unprocessable(format!(
            "{} deviations for a mesh of {} nodes",
            req.deviation.len(),
            s.mesh.n_nodes()
        )));
    }
    if req.deviation.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::unprocessable("deviations must be finite"));
    }
    req.config.validate()?;
    let families = match req.family {
        None => vec![Family::Matern52],
        Some(Families::One(f)) => vec![f],
        Some(Families::Many(v)) => v,
    };
    let dim = req.dim;
    let terms = families
        .into_iter()
        .map(|f| match f {
            Family::Periodic => KernelTerm::periodic(1.0, vec![1.0; dim], vec![1.0; dim]),
            f => KernelTerm::new(f, 1.0, vec![1.0; dim]),
        })
        .collect();
    let template = KernelSpec::new(dim, terms)?;
    let points = node_points(&s.mesh, dim)?.select(&keys.indices);
    let z: Vec<f64> = keys.indices.iter().map(|&i| req.deviation[i]).collect();
    let config = req.config;
    drop(s);

    let job = state.jobs.spawn(
        "fit",
        id,
        handle,
        move || fit_params(&points, &z, &template, &config),
        |s, fit| {
            s.record.spec = Some(fit.spec.clone());
            s.advance(Stage::SpecReady);
            s.save()?;
            Ok(serde_json::to_value(&fit)?)
        },
        |_| {},
    );
    Ok(accepted(job))
}

#[derive(Debug, Clone, Copy, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum MethodChoice {
    #[default]
    Auto,
    Cholesky,
    Eigen,
    Reduced,
}

#[derive(Deserialize)]
struct SimulateRequest {
    #[serde(default)]
    manipulated: Vec<KeyDeviation>,
    scenario: Option<Scenario>,
    usl: f64,
    p: f64,
    count: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    method: MethodChoice,
    energy: Option<f64>,
}

fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

struct Simulated {
    staging: PathBuf,
    result: Value,
    manipulated: ManipulatedKeySet,
    tolerance: ToleranceSpec,
    info: EnsembleInfo,
}

pub async fn simulate(State(state): St, Path(id): Path<String>, body: Bytes) -> AppResult<Response> {
    let handle = session(&state, &id)?;
    let req: SimulateRequest = parse(&body)?;
    let s = handle.lock().await;
    let (Some(keys), Some(spec)) = (s.record.keys.clone(), s.record.spec.clone()) else {
        return Err(ApiError::conflict("a kernel spec must be fitted or uploaded before simulating"));
    };
    let tolerance = ToleranceSpec::new(req.usl, req.p)?;
    if req.count == 0 {
        return Err(ApiError::unprocessable("count must be at least 1"));
    }
    let scenario = match (req.scenario, req.manipulated.is_empty()) {
        (Some(_), false) => {
            return Err(ApiError::unprocessable("give either a scenario or manipulated key points, not both"))
        }
        (Some(sc), true) => sc,
        (None, _) => Scenario::Manual {
            manipulated: req.manipulated,
        },
    };
    let manipulated = scenario.build(&keys, &s.mesh)?;
    let method = match req.method {
        MethodChoice::Auto if s.mesh.n_nodes() <= DENSE_LIMIT => Method::Cholesky,
        MethodChoice::Auto | MethodChoice::Reduced => Method::Reduced,
        MethodChoice::Cholesky => Method::Cholesky,
        MethodChoice::Eigen => Method::Eigen,
    };
    let mut options = SimulationOptions::with_method(method);
    if let Some(e) = req.energy {
        options.energy = e;
    }
    let mesh = s.mesh.clone();
    let preview: Arc<PreviewMesh> = s.preview.clone();
    let staging = s.dir.join(format!("staging-{}", uuid::Uuid::new_v4().simple()));
    let (count, seed) = (req.count, req.seed);
    drop(s);

    let compute = move || -> shapemorph::Result<Simulated> {
        let ensemble = conditional_simulate(&spec, &mesh, &keys, &manipulated, &tolerance, count, &options, seed)?;
        let created_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        if let Err(e) = write_ensemble(&ensemble, &mesh, &staging, Some(created_at)) {
            let _ = std::fs::remove_dir_all(&staging);
            return Err(e);
        }
        let conformance = ensemble.conformance();
        let instances: Vec<Value> = ensemble
            .instances
            .iter()
            .map(|f| {
                let st = f.stats();
                json!({
                    "min": st.min,
                    "max": st.max,
                    "rms": st.rms,
                    "values": encode_f32(&preview.sample(&f.values)),
                })
            })
            .collect();
        let result = json!({
            "count": count,
            "method": method,
            "seed": seed,
            "tolerance": tolerance,
            "manipulated": manipulated,
            "conformance": {
                "mean": conformance.iter().sum::<f64>() / conformance.len() as f64,
                "min": conformance.iter().copied().fold(1.0, f64::min),
            },
            "preview_vertices": preview.positions.len(),
            "mean": encode_f32(&preview.sample(&ensemble.mean_field.values)),
            "instances": instances,
        });
        Ok(Simulated {
            staging,
            result,
            manipulated,
            tolerance,
            info: EnsembleInfo {
                count,
                method,
                seed,
                spec,
            },
        })
    };
    let commit = |s: &mut Session, sim: Simulated| -> shapemorph::Result<Value> {
        let target = s.ensemble_dir();
        let io = |path: &std::path::Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        if target.exists() {
            std::fs::remove_dir_all(&target).map_err(io(&target))?;
        }
        std::fs::rename(&sim.staging, &target).map_err(io(&target))?;
        s.record.manipulated = Some(sim.manipulated);
        s.record.tolerance = Some(sim.tolerance);
        s.record.ensemble = Some(sim.info);
        s.advance(Stage::Simulated);
        s.save()?;
        Ok(sim.result)
    };
    let discard = |sim: Simulated| {
        let _ = std::fs::remove_dir_all(&sim.staging);
    };
    let job = state.jobs.spawn("simulate", id, handle, compute, commit, discard);
    Ok(accepted(job))
}

pub async fn get_job(State(state): St, Path(jid): Path<String>) -> AppResult<Json<Value>> {
    let job = state
        .jobs
        .get(&jid)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no job {jid}")))?;
    Ok(Json(serde_json::to_value(job).map_err(Error::from)?))
}

pub async fn cancel_job(State(state): St, Path(jid): Path<String>) -> AppResult<Json<Value>> {
    match state.jobs.cancel(&jid) {
        Cancel::Canceled => Ok(Json(json!({ "job_id": jid, "status": "canceled" }))),
        Cancel::AlreadyFinished(status) => Err(ApiError::conflict(format!(
            "job {jid} already finished ({})",
            serde_json::to_value(status).map_err(Error::from)?.as_str().unwrap_or("")
        ))),
        Cancel::Unknown => Err(ApiError::new(StatusCode::NOT_FOUND, format!("no job {jid}"))),
    }
}

/// Binary preview mesh: see [`PreviewMesh::to_bytes`].
pub async fn preview(State(state): St, Path(id): Path<String>) -> AppResult<Response> {
    let handle = session(&state, &id)?;
    let bytes = handle.lock().await.preview.to_bytes();
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

/// `{k}.ply` for instance `k`, or `mean.ply`.
pub async fn ensemble_file(State(state): St, Path((id, file)): Path<(String, String)>) -> AppResult<Response> {
    let handle = session(&state, &id)?;
    let s = handle.lock().await;
    let not_found = |m: String| ApiError::new(StatusCode::NOT_FOUND, m);
    let Some(info) = &s.record.ensemble else {
        return Err(not_found("session has no ensemble yet".into()));
    };
    let stem = file
        .strip_suffix(".ply")
        .ok_or_else(|| not_found(format!("unknown ensemble file {file}")))?;
    let name = if stem == "mean" {
        "mean.ply".to_string()
    } else {
        match stem.parse::<usize>() {
            Ok(k) if k < info.count => format!("instance_{k:04}.ply"),
            _ => return Err(not_found(format!("no instance {stem} in an ensemble of {}", info.count))),
        }
    };
    let path = s.ensemble_dir().join(name);
    let bytes = tokio::fs::read(&path).await.map_err(|source| Error::Io { path, source })?;
    Ok(([(header::CONTENT_TYPE, "application/x-ply")], bytes).into_response())
}
