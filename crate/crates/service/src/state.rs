//! Shared service state and the frame ingestion path.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use seatwatch_core::detect::oracle::{OracleClassifier, OracleDetector};
use seatwatch_core::detect::{ClassifierBackend, DetectorBackend};
use seatwatch_core::imaging::RasterImage;
use seatwatch_core::imaging::io::{SCENE_KEYWORD, decode_image, png_text};
use seatwatch_core::pipeline::{DisplayLegend, FrameMeta, FrameReport, PipelineConfig, SeatState, process_frame};
use seatwatch_core::scenegen::SceneSpec;
use seatwatch_core::seatgrid::{SeatLayout, grid_layout};
use serde_json::json;
use tokio::sync::{broadcast, watch};

use crate::error::ApiError;
use crate::model::{AlertEvent, BackendSpec, CreateRoom, RoomSpec, RunState, RunStatus, SeatView};
use crate::store::{Store, StoredFrame};

const ALERT_BUFFER: usize = 256;

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Raw upload: image bytes plus an optional scene description.
#[derive(Clone, Debug, Default)]
pub struct Upload {
    pub bytes: Vec<u8>,
    pub scene: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    pub frame_id: Option<String>,
    pub timestamp: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub report: FrameReport,
    pub alerts: Vec<AlertEvent>,
}

#[derive(Clone, Debug, Default)]
pub struct ServiceOptions {
    pub legend: DisplayLegend,
    /// Artificial delay added to every ingestion, for exercising the
    /// in-progress status from a UI.
    pub ingest_delay: Duration,
}

struct ModelPair {
    detector: Arc<dyn DetectorBackend>,
    classifier: Arc<dyn ClassifierBackend>,
}

struct RoomRuntime {
    queue: tokio::sync::Mutex<()>,
    waiting: AtomicUsize,
    status: Mutex<RunStatus>,
    alerts: broadcast::Sender<AlertEvent>,
    models: Mutex<Option<Arc<ModelPair>>>,
}

impl RoomRuntime {
    fn new() -> Self {
        RoomRuntime {
            queue: tokio::sync::Mutex::new(()),
            waiting: AtomicUsize::new(0),
            status: Mutex::new(RunStatus::default()),
            alerts: broadcast::channel(ALERT_BUFFER).0,
            models: Mutex::new(None),
        }
    }

    fn set_status(&self, status: RunState, frame_id: &str, error: Option<String>) {
        let mut s = self.status.lock().unwrap_or_else(|e| e.into_inner());
        *s = RunStatus {
            status,
            frame_id: Some(frame_id.to_string()),
            updated_at: Some(now()),
            error,
            queued: self.waiting.load(Ordering::SeqCst),
        };
    }
}

struct Inner {
    store: Store,
    options: ServiceOptions,
    rooms: Mutex<HashMap<String, Arc<RoomRuntime>>>,
    shutdown: watch::Sender<bool>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn load_models(backend: &BackendSpec, cfg: &PipelineConfig) -> Result<Option<ModelPair>, String> {
    let BackendSpec::Model { detector, classifier, conf_thresh } = backend else { return Ok(None) };
    #[cfg(feature = "onnx")]
    {
        use seatwatch_core::detect::model::{ModelOptions, load_model_backend, load_model_classifier};
        let mut options = ModelOptions { nms_iou: cfg.nms_iou, ..Default::default() };
        if let Some(t) = conf_thresh {
            options.conf_thresh = *t;
        }
        let det = load_model_backend(detector, options.clone()).map_err(|e| e.to_string())?;
        let cls = load_model_classifier(classifier, options).map_err(|e| e.to_string())?;
        Ok(Some(ModelPair { detector: Arc::new(det), classifier: Arc::new(cls) }))
    }
    #[cfg(not(feature = "onnx"))]
    {
        let _ = (detector, classifier, conf_thresh, cfg);
        Err(seatwatch_core::detect::model::ModelError::InferenceUnavailable.to_string())
    }
}

fn oracle_pair(
    spec: &SceneSpec,
    img: &RasterImage,
    backend: &BackendSpec,
) -> seatwatch_core::Result<(OracleDetector, OracleClassifier)> {
    let (dn, cn) = match backend {
        BackendSpec::Oracle { detector_noise, classifier_noise } => (*detector_noise, *classifier_noise),
        BackendSpec::Model { .. } => Default::default(),
    };
    Ok((
        OracleDetector::new(spec, img.width(), img.height(), dn)?,
        OracleClassifier::new(spec, img.width(), img.height(), cn)?,
    ))
}

impl AppState {
    pub fn open(db: &Path, options: ServiceOptions) -> Result<Self, ApiError> {
        let store = Store::open(db)?;
        Ok(AppState {
            inner: Arc::new(Inner {
                store,
                options,
                rooms: Mutex::new(HashMap::new()),
                shutdown: watch::channel(false).0,
            }),
        })
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn legend(&self) -> &DisplayLegend {
        &self.inner.options.legend
    }

    /// Ends open event streams so the server can drain.
    pub fn begin_shutdown(&self) {
        let _ = self.inner.shutdown.send(true);
    }

    pub fn shutdown_signal(&self) -> watch::Receiver<bool> {
        self.inner.shutdown.subscribe()
    }

    fn runtime(&self, room_id: &str) -> Arc<RoomRuntime> {
        let mut rooms = self.inner.rooms.lock().unwrap_or_else(|e| e.into_inner());
        rooms.entry(room_id.to_string()).or_insert_with(|| Arc::new(RoomRuntime::new())).clone()
    }

    pub fn room(&self, room_id: &str) -> Result<RoomSpec, ApiError> {
        self.store()
            .room(room_id)?
            .ok_or_else(|| ApiError::not_found(format!("room '{room_id}' does not exist")).with_detail(json!({ "room_id": room_id })))
    }

    pub fn create_room(&self, req: CreateRoom) -> Result<RoomSpec, ApiError> {
        let room_id = req.room_id.trim().to_string();
        if room_id.is_empty() || room_id.contains('/') {
            return Err(ApiError::validation("room_id must be non-empty and contain no '/'"));
        }
        let layout = match (req.layout, req.grid) {
            (Some(body), None) => SeatLayout::new(room_id.clone(), body.regions),
            (None, Some(grid)) => grid_layout(room_id.clone(), grid.rows, grid.cols),
            _ => return Err(ApiError::validation("give exactly one of 'layout' and 'grid'")),
        }
        .map_err(|e| ApiError::validation(e.to_string()))?;
        let config = req.config.unwrap_or_default();
        config.validate().map_err(|e| ApiError::validation(e.to_string()))?;
        if let Some(bad) = config.out_of_service.iter().find(|s| layout.region(**s).is_none()) {
            return Err(ApiError::validation(format!("out_of_service seat_id {bad} is not in the layout")));
        }
        let backend = req.backend.unwrap_or_default();
        if let BackendSpec::Oracle { detector_noise, classifier_noise } = &backend {
            detector_noise.validate().map_err(|e| ApiError::validation(e.to_string()))?;
            classifier_noise.validate().map_err(|e| ApiError::validation(e.to_string()))?;
        }
        let models = load_models(&backend, &config).map_err(|e| ApiError::validation(format!("cannot load models: {e}")))?;
        let spec = RoomSpec { room_id: room_id.clone(), layout, config, backend };
        self.store().insert_room(&spec, now())?;
        if let Some(pair) = models {
            *self.runtime(&room_id).models.lock().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(pair));
        }
        tracing::info!(room_id, seats = spec.layout.len(), "room created");
        Ok(spec)
    }

    /// Backend descriptors for display.
    pub fn descriptors(&self, room: &RoomSpec) -> (String, String) {
        match &room.backend {
            BackendSpec::Oracle { .. } => {
                let probe = SceneSpec::empty(room.layout.clone(), 0);
                let img = RasterImage::filled(64, 64, [0, 0, 0]).expect("non-empty image");
                match oracle_pair(&probe, &img, &room.backend) {
                    Ok((d, c)) => (d.descriptor(), c.descriptor()),
                    Err(e) => (format!("unavailable: {e}"), format!("unavailable: {e}")),
                }
            }
            BackendSpec::Model { .. } => match self.models(room) {
                Ok(pair) => (pair.detector.descriptor(), pair.classifier.descriptor()),
                Err(e) => (format!("unavailable: {e}"), format!("unavailable: {e}")),
            },
        }
    }

    fn models(&self, room: &RoomSpec) -> Result<Arc<ModelPair>, String> {
        let rt = self.runtime(&room.room_id);
        let mut slot = rt.models.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(pair) = slot.as_ref() {
            return Ok(pair.clone());
        }
        let pair = Arc::new(load_models(&room.backend, &room.config)?.ok_or("room has no model backend")?);
        *slot = Some(pair.clone());
        Ok(pair)
    }

    pub fn status(&self, room_id: &str) -> Result<RunStatus, ApiError> {
        self.room(room_id)?;
        let rt = self.runtime(room_id);
        let mut s = rt.status.lock().unwrap_or_else(|e| e.into_inner()).clone();
        s.queued = rt.waiting.load(Ordering::SeqCst);
        Ok(s)
    }

    pub fn subscribe(&self, room_id: &str) -> Result<broadcast::Receiver<AlertEvent>, ApiError> {
        self.room(room_id)?;
        Ok(self.runtime(room_id).alerts.subscribe())
    }

    pub fn seats(&self, room_id: &str) -> Result<Vec<SeatView>, ApiError> {
        let room = self.room(room_id)?;
        let current: BTreeMap<u32, _> =
            self.store().current(room_id)?.into_iter().map(|c| (c.observation.seat_id, c)).collect();
        let legend = self.legend();
        Ok(room
            .layout
            .sorted_regions()
            .into_iter()
            .map(|r| {
                let (state, last_updated, frame_id, pc, oc) = match current.get(&r.seat_id) {
                    Some(c) => {
                        let o = &c.observation;
                        (o.state, Some(c.last_updated), Some(o.frame_id.clone()), o.person_confidence(), o.classification.map(|c| c.confidence))
                    }
                    None if room.config.out_of_service.contains(&r.seat_id) => (SeatState::OutOfService, None, None, None, None),
                    None => (SeatState::Free, None, None, None, None),
                };
                let d = legend.display(state);
                SeatView {
                    seat_id: r.seat_id,
                    state,
                    color: d.color,
                    glyph: d.glyph,
                    last_updated,
                    frame_id,
                    person_confidence: pc,
                    objects_confidence: oc,
                }
            })
            .collect())
    }

    fn scene_for(&self, room: &RoomSpec, upload_scene: Option<&str>, bytes: &[u8]) -> Result<Option<SceneSpec>, ApiError> {
        let text = match upload_scene {
            Some(s) => Some(s.to_string()),
            None => png_text(bytes, SCENE_KEYWORD),
        };
        let Some(text) = text else {
            return match room.backend {
                BackendSpec::Oracle { .. } => Err(ApiError::validation(
                    "oracle rooms need a scene description: send a 'scene' part or a PNG with an embedded scene",
                )),
                BackendSpec::Model { .. } => Ok(None),
            };
        };
        let scene: SceneSpec =
            serde_json::from_str(&text).map_err(|e| ApiError::validation(format!("invalid scene description: {e}")))?;
        scene.validate().map_err(|e| ApiError::validation(format!("invalid scene description: {e}")))?;
        if scene.layout.sorted_regions() != room.layout.sorted_regions() {
            return Err(ApiError::validation("scene layout does not match the room layout"));
        }
        Ok(Some(scene))
    }

    fn analyse(
        &self,
        room: &RoomSpec,
        img: &RasterImage,
        scene: Option<&SceneSpec>,
        cfg: &PipelineConfig,
        meta: &FrameMeta,
    ) -> Result<FrameReport, ApiError> {
        let result = match (&room.backend, scene) {
            (BackendSpec::Oracle { .. }, Some(scene)) => oracle_pair(scene, img, &room.backend)
                .and_then(|(d, c)| process_frame(img, &room.layout, &d, &c, cfg, meta)),
            (BackendSpec::Oracle { .. }, None) => {
                return Err(ApiError::validation("oracle rooms need a scene description"));
            }
            (BackendSpec::Model { .. }, _) => {
                let pair = self.models(room).map_err(|e| {
                    ApiError::internal(format!("models unavailable: {e}")).with_detail(json!({ "frame_id": meta.frame_id }))
                })?;
                process_frame(img, &room.layout, pair.detector.as_ref(), pair.classifier.as_ref(), cfg, meta)
            }
        };
        result.map_err(|e| ApiError::pipeline(&meta.frame_id, &e))
    }

    /// Decodes, analyses and persists one frame, then publishes alerts.
    /// Frames for the same room are handled one at a time in arrival order.
    pub async fn ingest(&self, room_id: &str, upload: Upload, opts: IngestOptions) -> Result<IngestOutcome, ApiError> {
        let room = self.room(room_id)?;
        let bytes = Arc::new(upload.bytes);
        let decoded = {
            let bytes = bytes.clone();
            tokio::task::spawn_blocking(move || decode_image(&bytes))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))?
        };
        let img = decoded.map_err(|e| ApiError::unprocessable_image(e.to_string()))?;
        let scene = self.scene_for(&room, upload.scene.as_deref(), &bytes)?;
        let frame_id = opts.frame_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().to_string());

        let rt = self.runtime(room_id);
        rt.waiting.fetch_add(1, Ordering::SeqCst);
        let _turn = rt.queue.lock().await;
        rt.waiting.fetch_sub(1, Ordering::SeqCst);

        let latest = self.store().latest_timestamp(room_id)?;
        let timestamp = match (opts.timestamp, latest) {
            (Some(t), Some(l)) if t < l => {
                return Err(ApiError::validation(format!("timestamp {t} precedes the room's latest observation at {l}")));
            }
            (Some(t), _) => t,
            (None, Some(l)) => now().max(l),
            (None, None) => now(),
        };
        rt.set_status(RunState::InProgress, &frame_id, None);
        let delay = self.inner.options.ingest_delay;
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }

        let meta = FrameMeta::new(frame_id.clone(), timestamp);
        let analysed = {
            let this = self.clone();
            let room = room.clone();
            let scene = scene.clone();
            let meta = meta.clone();
            tokio::task::spawn_blocking(move || this.analyse(&room, &img, scene.as_ref(), &room.config, &meta))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))
                .and_then(|r| r)
        };
        let report = match analysed {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(room_id, frame_id, error = %e, "frame failed");
                rt.set_status(RunState::Failed, &frame_id, Some(e.message.clone()));
                return Err(e);
            }
        };

        let previous: BTreeMap<u32, SeatState> = self
            .store()
            .current(room_id)?
            .into_iter()
            .map(|c| (c.observation.seat_id, c.observation.state))
            .collect();
        let report_json = serde_json::to_string(&report.to_document(self.legend())).map_err(|e| ApiError::internal(e.to_string()))?;
        let stored = StoredFrame {
            frame_id: frame_id.clone(),
            png: bytes.to_vec(),
            scene: scene.as_ref().map(serde_json::to_string).transpose().map_err(|e| ApiError::internal(e.to_string()))?,
        };
        if let Err(e) = self.store().commit_frame(&report, &report_json, now(), &stored) {
            let e = ApiError::from(e);
            rt.set_status(RunState::Failed, &frame_id, Some(e.message.clone()));
            return Err(e);
        }

        let alerts: Vec<AlertEvent> = report
            .observations
            .iter()
            .filter(|o| o.state == SeatState::SuspectedOccupancy)
            .filter_map(|o| {
                let from = previous.get(&o.seat_id).copied().unwrap_or(SeatState::Free);
                (from != SeatState::SuspectedOccupancy).then(|| AlertEvent {
                    room_id: room_id.to_string(),
                    seat_id: o.seat_id,
                    from,
                    to: o.state,
                    frame_id: frame_id.clone(),
                    timestamp,
                })
            })
            .collect();
        for a in &alerts {
            let _ = rt.alerts.send(a.clone());
        }
        rt.set_status(RunState::Completed, &frame_id, None);
        tracing::info!(room_id, frame_id, alerts = alerts.len(), "frame processed");
        Ok(IngestOutcome { report, alerts })
    }

    /// Re-analyses the room's last frame with threshold overrides. Nothing is
    /// stored and no alerts are sent.
    pub async fn rerun(&self, room_id: &str, tau_p: Option<f64>, tau_o: Option<f64>) -> Result<FrameReport, ApiError> {
        let room = self.room(room_id)?;
        let frame = self.last_frame(room_id)?;
        let mut cfg = room.config.clone();
        cfg.tau_p = tau_p.unwrap_or(cfg.tau_p);
        cfg.tau_o = tau_o.unwrap_or(cfg.tau_o);
        cfg.validate().map_err(|e| ApiError::validation(e.to_string()))?;
        let this = self.clone();
        tokio::task::spawn_blocking(move || {
            let img = decode_image(&frame.png).map_err(|e| ApiError::internal(e.to_string()))?;
            let scene = frame
                .scene
                .as_deref()
                .map(serde_json::from_str::<SceneSpec>)
                .transpose()
                .map_err(|e| ApiError::internal(e.to_string()))?;
            let meta = FrameMeta::new(frame.frame_id.clone(), now());
            this.analyse(&room, &img, scene.as_ref(), &cfg, &meta)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }

    pub fn last_frame(&self, room_id: &str) -> Result<StoredFrame, ApiError> {
        self.room(room_id)?;
        self.store()
            .last_frame(room_id)?
            .ok_or_else(|| ApiError::new(axum::http::StatusCode::NOT_FOUND, "no_frame", format!("room '{room_id}' has no frames yet")))
    }
}
