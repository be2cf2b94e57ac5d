//! HTTP routes.
//!
//! | method | path                                   | purpose                              |
//! |--------|----------------------------------------|--------------------------------------|
//! | GET    | `/health`                              | liveness                             |
//! | GET    | `/rooms`                               | list rooms                           |
//! | POST   | `/rooms`                               | create a room                        |
//! | GET    | `/rooms/{id}`                          | room layout, config, backends        |
//! | POST   | `/rooms/{id}/frames`                   | ingest a frame (raw body or multipart)|
//! | GET    | `/rooms/{id}/frames/last`              | last frame image (`?annotated=true`) |
//! | POST   | `/rooms/{id}/rerun?tau_p=&tau_o=`      | what-if analysis of the last frame   |
//! | GET    | `/rooms/{id}/seats`                    | current seat map                     |
//! | GET    | `/rooms/{id}/seats/{sid}/history`      | observations, `?since=` epoch secs   |
//! | GET    | `/rooms/{id}/status`                   | idle / in-progress / completed / failed |
//! | GET    | `/rooms/{id}/alerts`                   | server-sent alert stream (live only) |
//! | GET    | `/announcements`                       | newest first                         |
//! | POST   | `/announcements`                       | `{title, body}`                      |

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{StatusCode, header};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::Stream;
use seatwatch_core::imaging::io::{decode_image, encode_png};
use seatwatch_core::pipeline::{ReportDocument, annotate};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::model::{Announcement, CreateRoom, NewAnnouncement, RoomView, RunStatus, SeatView};
use crate::state::{AppState, IngestOptions, Upload, now};

/// Largest accepted upload.
pub const MAX_UPLOAD: usize = 32 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/rooms", get(list_rooms).post(create_room))
        .route("/rooms/{id}", get(get_room))
        .route("/rooms/{id}/frames", post(post_frame))
        .route("/rooms/{id}/frames/last", get(last_frame))
        .route("/rooms/{id}/rerun", post(rerun))
        .route("/rooms/{id}/seats", get(get_seats))
        .route("/rooms/{id}/seats/{sid}/history", get(get_history))
        .route("/rooms/{id}/status", get(get_status))
        .route("/rooms/{id}/alerts", get(alerts))
        .route("/announcements", get(list_announcements).post(create_announcement))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

fn json_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

fn room_view(state: &AppState, room: crate::model::RoomSpec) -> Result<RoomView, ApiError> {
    let (detector, classifier) = state.descriptors(&room);
    let frames_processed = state.store().frame_count(&room.room_id)?;
    Ok(RoomView {
        room_id: room.room_id,
        layout: room.layout,
        config: room.config,
        backend: room.backend,
        detector,
        classifier,
        frames_processed,
    })
}

async fn list_rooms(State(state): State<AppState>) -> Result<Json<Vec<RoomView>>, ApiError> {
    let rooms = state.store().rooms()?;
    Ok(Json(rooms.into_iter().map(|r| room_view(&state, r)).collect::<Result<_, _>>()?))
}

async fn create_room(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<RoomView>), ApiError> {
    let req: CreateRoom = json_body(&body)?;
    let s = state.clone();
    let room = tokio::task::spawn_blocking(move || s.create_room(req)).await.map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(room_view(&state, room)?)))
}

async fn get_room(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RoomView>, ApiError> {
    let room = state.room(&id)?;
    Ok(Json(room_view(&state, room)?))
}

#[derive(Debug, Default, Deserialize)]
struct FrameQuery {
    frame_id: Option<String>,
    timestamp: Option<f64>,
}

async fn read_upload(state: &AppState, req: Request) -> Result<Upload, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let bytes = Bytes::from_request(req, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        return Ok(Upload { bytes: bytes.to_vec(), scene: None });
    }
    let mut form = Multipart::from_request(req, state).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut upload = Upload::default();
    let mut have_image = false;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let is_file = field.file_name().is_some();
        let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        if name == "scene" {
            upload.scene = Some(String::from_utf8(data.to_vec()).map_err(|_| ApiError::validation("scene part is not UTF-8"))?);
        } else if !have_image && (is_file || matches!(name.as_str(), "frame" | "image" | "file")) {
            upload.bytes = data.to_vec();
            have_image = true;
        }
    }
    if !have_image {
        return Err(ApiError::bad_request("multipart upload has no image part"));
    }
    Ok(upload)
}

async fn post_frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FrameQuery>,
    req: Request,
) -> Result<(StatusCode, Json<ReportDocument>), ApiError> {
    state.room(&id)?;
    let upload = read_upload(&state, req).await?;
    let outcome = state.ingest(&id, upload, IngestOptions { frame_id: q.frame_id, timestamp: q.timestamp }).await?;
    Ok((StatusCode::CREATED, Json(outcome.report.to_document(state.legend()))))
}

#[derive(Debug, Default, Deserialize)]
struct LastFrameQuery {
    #[serde(default)]
    annotated: bool,
}

async fn last_frame(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LastFrameQuery>,
) -> Result<Response, ApiError> {
    let frame = state.last_frame(&id)?;
    let room = state.room(&id)?;
    let s = state.clone();
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ApiError> {
        let img = decode_image(&frame.png).map_err(|e| ApiError::internal(e.to_string()))?;
        let img = if q.annotated {
            let current = s.store().current(&id)?;
            let report = seatwatch_core::pipeline::FrameReport {
                frame_id: frame.frame_id.clone(),
                room_id: id.clone(),
                observations: current.into_iter().map(|c| c.observation).collect(),
                classifier_invocations: 0,
                detector_runtime_ms: 0.0,
                classifier_runtime_ms: 0.0,
            };
            annotate(&img, &room.layout, &report, s.legend())
        } else {
            img
        };
        encode_png(&img, &[]).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct RerunQuery {
    tau_p: Option<f64>,
    tau_o: Option<f64>,
}

async fn rerun(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RerunQuery>,
) -> Result<Json<ReportDocument>, ApiError> {
    let report = state.rerun(&id, q.tau_p, q.tau_o).await?;
    Ok(Json(report.to_document(state.legend())))
}

async fn get_seats(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<SeatView>>, ApiError> {
    Ok(Json(state.seats(&id)?))
}

#[derive(Debug, Default, Deserialize)]
struct HistoryQuery {
    since: Option<f64>,
}

async fn get_history(
    State(state): State<AppState>,
    Path((id, sid)): Path<(String, u32)>,
    Query(q): Query<HistoryQuery>,
) -> Result<Response, ApiError> {
    let room = state.room(&id)?;
    if room.layout.region(sid).is_none() {
        return Err(ApiError::not_found(format!("room '{id}' has no seat {sid}")).with_detail(json!({ "seat_id": sid })));
    }
    let history = state.store().history(&id, sid, q.since.unwrap_or(f64::NEG_INFINITY))?;
    Ok(Json(history).into_response())
}

async fn get_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RunStatus>, ApiError> {
    Ok(Json(state.status(&id)?))
}

async fn alerts(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = state.subscribe(&id)?;
    let stop = state.shutdown_signal();
    let stream = futures::stream::unfold((rx, stop), |(mut rx, mut stop)| async move {
        loop {
            if *stop.borrow() {
                return None;
            }
            tokio::select! {
                msg = rx.recv() => match msg {
                    Ok(ev) => {
                        let data = serde_json::to_string(&ev).unwrap_or_default();
                        return Some((Ok(Event::default().event("alert").data(data)), (rx, stop)));
                    }
                    Err(RecvError::Lagged(n)) => tracing::warn!(skipped = n, "alert subscriber lagged"),
                    Err(RecvError::Closed) => return None,
                },
                _ = stop.changed() => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn list_announcements(State(state): State<AppState>) -> Result<Json<Vec<Announcement>>, ApiError> {
    Ok(Json(state.store().announcements()?))
}

async fn create_announcement(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<Announcement>), ApiError> {
    let req: NewAnnouncement = json_body(&body)?;
    let title = req.title.map(|t| t.trim().to_string()).unwrap_or_default();
    if title.is_empty() {
        return Err(ApiError::validation("announcement title is required").with_detail(json!({ "field": "title" })));
    }
    Ok((StatusCode::CREATED, Json(state.store().insert_announcement(&title, &req.body, now())?)))
}
