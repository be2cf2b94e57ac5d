//! HTTP service for seat-occupancy monitoring.
//!
//! Rooms, seat observations, history and announcements live in a single
//! SQLite file. Frames are analysed with the room's backends as they arrive;
//! seats that become suspected occupancy are pushed to alert subscribers over
//! server-sent events. See [`routes`] for the endpoint list.

pub mod error;
pub mod model;
pub mod routes;
pub mod state;
pub mod store;
pub mod watch;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use seatwatch_core::imaging::io::{SCENE_KEYWORD, encode_png};
use seatwatch_core::scenegen::{ItemKind, SceneSpec, render};
use seatwatch_core::seatgrid::grid_layout;
use tokio::net::TcpListener;

pub use error::ApiError;
pub use routes::router;
pub use state::{AppState, IngestOptions, IngestOutcome, ServiceOptions, Upload};

pub const DEMO_ROOM: &str = "demo";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub db: PathBuf,
    /// Create and populate a demo room on startup if it is missing.
    pub demo: bool,
    pub watch: Option<watch::WatchConfig>,
    pub options: ServiceOptions,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The 16-seat scene used by the demo room: two seats held by objects, people
/// everywhere else.
pub fn demo_scene() -> SceneSpec {
    let layout = grid_layout(DEMO_ROOM, 4, 4).expect("4x4 grid is valid");
    let mut spec = SceneSpec::empty(layout, 20);
    for seat in 1..=16 {
        spec = if seat == 6 || seat == 12 { spec.with_item(seat, ItemKind::Book) } else { spec.with_person(seat) };
    }
    spec
}

/// Creates the demo room and feeds it one frame, unless it already exists.
pub async fn ensure_demo_room(state: &AppState) -> Result<(), ApiError> {
    if state.store().room(DEMO_ROOM)?.is_some() {
        return Ok(());
    }
    let req: model::CreateRoom = serde_json::from_value(serde_json::json!({
        "room_id": DEMO_ROOM,
        "grid": { "rows": 4, "cols": 4 }
    }))
    .map_err(|e| ApiError::internal(e.to_string()))?;
    state.create_room(req)?;
    let scene = demo_scene();
    let (img, _) = render(&scene, 256, 256).map_err(|e| ApiError::internal(e.to_string()))?;
    let scene_json = serde_json::to_string(&scene).map_err(|e| ApiError::internal(e.to_string()))?;
    let png = encode_png(&img, &[(SCENE_KEYWORD, &scene_json)]).map_err(|e| ApiError::internal(e.to_string()))?;
    state
        .ingest(DEMO_ROOM, Upload { bytes: png, scene: None }, IngestOptions { frame_id: Some("demo-1".into()), timestamp: None })
        .await?;
    Ok(())
}

/// Serves `state` on `listener` until `shutdown` resolves, then drains
/// connections and checkpoints the store.
pub async fn serve_with(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    let app = router(state.clone());
    let s = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            s.begin_shutdown();
        })
        .await?;
    state.store().checkpoint().map_err(ApiError::from)?;
    tracing::info!("store checkpointed, shutting down");
    Ok(())
}

async fn interrupted() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

/// Runs the service until SIGINT/SIGTERM.
pub async fn run(config: ServiceConfig) -> Result<(), ServeError> {
    let state = AppState::open(&config.db, config.options.clone())?;
    let listener = TcpListener::bind(config.bind).await.map_err(|source| ServeError::Bind { addr: config.bind, source })?;
    if config.demo {
        ensure_demo_room(&state).await?;
    }
    if let Some(w) = config.watch.clone() {
        tokio::spawn(watch::run(state.clone(), w));
    }
    tracing::info!(addr = %listener.local_addr()?, db = %config.db.display(), "listening");
    // Printed for scripts that start the service on port 0.
    println!("listening on {}", listener.local_addr()?);
    serve_with(listener, state, interrupted()).await
}

/// Default polling interval for the directory watcher.
pub const DEFAULT_WATCH_INTERVAL: Duration = Duration::from_millis(500);
