//! JSON service for the capture front end.
//!
//! | Method | Path                  | Body                | Response                    |
//! |--------|-----------------------|---------------------|-----------------------------|
//! | POST   | `/api/v1/submissions` | [`CaptureSubmission`] | [`VerifyResponse`] or [`UserStatus`] |
//! | GET    | `/api/v1/users/{id}`  |                     | [`UserStatus`]              |
//! | GET    | `/healthz`            |                     | `{"status":"ok"}`           |
//!
//! Errors carry `{"error": message}` with status 400 for malformed
//! submissions, 404 for verifying an unknown user and 409 for enrolling an
//! already-trained user or verifying one that has not finished enrollment.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use keyface::face::{load_pgm, FaceImage};
use keyface::keystroke::{KeystrokeSample, KeystrokeTimings, RawKeyEvent};
use keyface::store::StoreError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{Decision, EnrollOptions, Engine, UserStatus, VerifyOptions};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptKind {
    Enroll,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub key_label: String,
    pub press_ms: u64,
    pub release_ms: u64,
}

/// One capture from the client. Timestamps are integer milliseconds on the
/// client's monotonic clock; only differences within the submission are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSubmission {
    pub user_id: String,
    pub attempt_kind: AttemptKind,
    #[serde(default)]
    pub key_events: Vec<KeyEvent>,
    /// Base64-encoded binary PGM images, 64x64.
    #[serde(default)]
    pub face_frames: Vec<String>,
    /// Measured client timer resolution, logged only.
    #[serde(default)]
    pub timer_granularity_ms: Option<f64>,
    /// Set by the client when the camera is unavailable, logged only.
    #[serde(default)]
    pub face_unavailable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub decision: Decision,
    pub s_true: f64,
    pub s_false: f64,
    pub keystroke_score: f64,
    pub face_distance: Option<f64>,
}

/// Keystroke timings and face images decoded from a submission.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSubmission {
    pub keystrokes: Option<KeystrokeTimings>,
    pub faces: Vec<FaceImage>,
}

impl CaptureSubmission {
    /// Checks the submission invariants and decodes its payloads.
    pub fn decode(&self, max_span_ms: u64) -> Result<DecodedSubmission, CliError> {
        let keystrokes = if self.key_events.is_empty() && self.attempt_kind == AttemptKind::Enroll {
            None
        } else {
            for (i, e) in self.key_events.iter().enumerate() {
                if e.release_ms <= e.press_ms {
                    return Err(CliError::Invalid(format!(
                        "key event {i} is released at {} ms, not after its press at {} ms",
                        e.release_ms, e.press_ms
                    )));
                }
            }
            let events = self
                .key_events
                .iter()
                .map(|e| RawKeyEvent::new(e.key_label.clone(), e.press_ms, e.release_ms))
                .collect();
            let sample = KeystrokeSample::from_events(events).map_err(|e| CliError::Invalid(e.to_string()))?;
            let span = sample.total_time_ms();
            if span as u64 > max_span_ms {
                return Err(CliError::Invalid(format!("submission spans {span} ms, more than {max_span_ms} ms")));
            }
            Some(sample.timings())
        };
        let faces = self
            .face_frames
            .iter()
            .enumerate()
            .map(|(i, frame)| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(frame.trim())
                    .map_err(|e| CliError::Invalid(format!("face frame {i}: {e}")))?;
                load_pgm(&bytes).map_err(|e| CliError::Invalid(format!("face frame {i}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(DecodedSubmission { keystrokes, faces })
    }
}

/// Base64 PGM payload for a face image, as the client sends it.
pub fn encode_frame(image: &FaceImage) -> String {
    base64::engine::general_purpose::STANDARD.encode(image.to_pgm())
}

/// Maps an error to its HTTP status.
pub fn status_code(err: &CliError) -> StatusCode {
    match err {
        CliError::Invalid(_)
        | CliError::Keystroke(_)
        | CliError::TooFewSamples { .. }
        | CliError::Store(StoreError::InvalidUserId(_)) => StatusCode::BAD_REQUEST,
        CliError::UnknownUser(_) => StatusCode::NOT_FOUND,
        CliError::AlreadyTrained(_) | CliError::NotTrained(_) => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

struct ApiError(CliError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_code(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError(e)
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/api/v1/submissions", post(submit))
        .route("/api/v1/users/{id}", get(user_status))
        .with_state(AppState { engine })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, CliError> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError),
        Err(e) => Err(ApiError(CliError::Config(format!("worker failed: {e}")))),
    }
}

async fn submit(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let submission: CaptureSubmission =
        serde_json::from_slice(&body).map_err(|e| CliError::Invalid(e.to_string()))?;
    let engine = state.engine;
    let decoded = submission.decode(engine.config().server.max_span_ms)?;
    log::debug!(
        "{:?} submission for {:?}: {} key events, {} frames, timer {:?} ms, face unavailable {}",
        submission.attempt_kind,
        submission.user_id,
        submission.key_events.len(),
        decoded.faces.len(),
        submission.timer_granularity_ms,
        submission.face_unavailable
    );
    let user = submission.user_id;
    match submission.attempt_kind {
        AttemptKind::Enroll => {
            let options = EnrollOptions {
                allow_append: engine.config().server.allow_append,
                require_complete: false,
            };
            let status = blocking(move || {
                let keys: Vec<_> = decoded.keystrokes.into_iter().collect();
                engine.enroll(&user, &keys, &decoded.faces, options).map(|o| o.status)
            })
            .await?;
            Ok(Json(status).into_response())
        }
        AttemptKind::Verify => {
            let keys = decoded.keystrokes.expect("verify submissions always carry key events");
            let outcome = blocking(move || engine.verify(&user, &keys, &decoded.faces, VerifyOptions::default())).await?;
            Ok(Json(VerifyResponse {
                decision: outcome.decision,
                s_true: outcome.s_true,
                s_false: outcome.s_false,
                keystroke_score: outcome.keystroke_score,
                face_distance: outcome.face_distance,
            })
            .into_response())
        }
    }
}

async fn user_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<UserStatus>, ApiError> {
    let engine = state.engine;
    Ok(Json(blocking(move || engine.status(&id)).await?))
}

/// Serves until the process receives ctrl-c.
pub async fn serve(engine: Arc<Engine>) -> Result<(), CliError> {
    let server = &engine.config().server;
    let addr = format!("{}:{}", server.host, server.port);
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(CliError::io(&addr))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(CliError::io(addr))
}
