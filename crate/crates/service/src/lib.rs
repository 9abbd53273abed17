//! HTTP session API: upload a mesh, select key points, fit or upload a kernel,
//! run conditional simulations and fetch the results.

mod handlers;
pub mod jobs;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;

use crate::jobs::Jobs;
use crate::store::Store;

#[derive(Debug, Clone)]
pub struct Config {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Worker threads for numerical jobs.
    pub threads: usize,
    /// Largest accepted request body in bytes.
    pub max_body: usize,
    /// Idle time after which a session is deleted.
    pub session_ttl: Duration,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("shapemorph-data"),
            port: 8080,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_body: 256 * 1024 * 1024,
            session_ttl: Duration::from_secs(24 * 3600),
        }
    }
}

impl Config {
    /// Defaults overridden by `SHAPEMORPH_DATA_DIR`, `SHAPEMORPH_PORT` and
    /// `SHAPEMORPH_THREADS`.
    pub fn from_env() -> Result<Self, String> {
        let mut c = Self::default();
        if let Ok(dir) = std::env::var("SHAPEMORPH_DATA_DIR") {
            c.data_dir = dir.into();
        }
        if let Ok(port) = std::env::var("SHAPEMORPH_PORT") {
            c.port = port.parse().map_err(|_| format!("SHAPEMORPH_PORT is not a port number: {port:?}"))?;
        }
        if let Ok(t) = std::env::var("SHAPEMORPH_THREADS") {
            c.threads = t
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("SHAPEMORPH_THREADS must be a positive integer, got {t:?}"))?;
        }
        Ok(c)
    }
}

pub struct AppState {
    pub store: Store,
    pub jobs: Arc<Jobs>,
    pub config: Config,
}

impl AppState {
    pub fn new(config: Config) -> shapemorph::Result<Arc<Self>> {
        Ok(Arc::new(Self {
            store: Store::new(&config.data_dir)?,
            jobs: Arc::new(Jobs::new(config.threads)),
            config,
        }))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", post(handlers::create_session))
        .route("/sessions/{id}", get(handlers::get_session).delete(handlers::delete_session))
        .route("/sessions/{id}/keypoints", post(handlers::keypoints))
        .route("/sessions/{id}/fit", post(handlers::fit))
        .route("/sessions/{id}/simulate", post(handlers::simulate))
        .route("/sessions/{id}/preview", get(handlers::preview))
        .route("/sessions/{id}/ensemble/{file}", get(handlers::ensemble_file))
        .route("/jobs/{jid}", get(handlers::get_job).delete(handlers::cancel_job));
    Router::new()
        .nest("/api/v1", api)
        .layer(DefaultBodyLimit::max(state.config.max_body))
        .with_state(state)
}

/// Periodically removes expired sessions.
pub async fn garbage_collector(state: Arc<AppState>) {
    let ttl = chrono::Duration::from_std(state.config.session_ttl).unwrap_or(chrono::Duration::MAX);
    let period = (state.config.session_ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(600));
    let mut tick = tokio::time::interval(period);
    loop {
        tick.tick().await;
        let removed = state.store.collect_garbage(ttl, chrono::Utc::now());
        if !removed.is_empty() {
            log::info!("expired {} idle sessions", removed.len());
        }
    }
}
