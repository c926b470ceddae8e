use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use keyface::evaluation::{generate_population, PopulationConfig, UserDataset};
use keyface::face::FaceImage;
use keyface::keystroke::KeystrokeTimings;
use keyface_cli::config::Config;
use keyface_cli::engine::Engine;
use keyface_cli::http::{encode_frame, router, AttemptKind, CaptureSubmission, KeyEvent};
use serde_json::Value;
use tower::ServiceExt;

const PASSWORD: &str = "GOOSEBERRY";

fn population(n_users: usize) -> Vec<UserDataset> {
    let config = PopulationConfig {
        n_users,
        samples_per_user: 10,
        probes_per_user: 3,
        ..Default::default()
    };
    generate_population(&config).unwrap().1
}

fn app(dir: &std::path::Path, config: Config) -> Router {
    router(Arc::new(Engine::open(dir, "service pw", config).unwrap()))
}

fn submission(user: &str, kind: AttemptKind, keys: Option<&KeystrokeTimings>, faces: &[FaceImage], clock: u64) -> CaptureSubmission {
    let key_events = keys
        .map(|k| {
            k.to_sample(clock)
                .unwrap()
                .events()
                .iter()
                .zip(PASSWORD.chars())
                .map(|(e, c)| KeyEvent {
                    key_label: c.to_string(),
                    press_ms: e.press_time,
                    release_ms: e.release_time,
                })
                .collect()
        })
        .unwrap_or_default();
    CaptureSubmission {
        user_id: user.to_string(),
        attempt_kind: kind,
        key_events,
        face_frames: faces.iter().map(encode_frame).collect(),
        timer_granularity_ms: Some(1.0),
        face_unavailable: false,
    }
}

async fn send(app: &Router, request: Request<Body>) -> (StatusCode, Value, Vec<u8>) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value, bytes)
}

async fn post_raw(app: &Router, body: impl Into<Body>) -> (StatusCode, Value, Vec<u8>) {
    let request = Request::post("/api/v1/submissions")
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    send(app, request).await
}

async fn post(app: &Router, s: &CaptureSubmission) -> (StatusCode, Value, Vec<u8>) {
    post_raw(app, serde_json::to_vec(s).unwrap()).await
}

async fn status(app: &Router, user: &str) -> Value {
    let (code, body, _) = send(app, Request::get(format!("/api/v1/users/{user}")).body(Body::empty()).unwrap()).await;
    assert_eq!(code, StatusCode::OK);
    body
}

/// Ten keystroke submissions, the face captures spread two per submission.
async fn enroll_over_http(app: &Router, d: &UserDataset) -> Vec<Value> {
    let mut statuses = Vec::new();
    for (i, keys) in d.enroll_keystrokes.iter().enumerate() {
        let frames = &d.enroll_faces[2 * i..2 * i + 2];
        let s = submission(&d.user_id, AttemptKind::Enroll, Some(keys), frames, 7_000_000 + 9_000 * i as u64);
        let (code, body, _) = post(app, &s).await;
        assert_eq!(code, StatusCode::OK, "{body}");
        statuses.push(status(app, &d.user_id).await);
    }
    statuses
}

#[tokio::test]
async fn health_and_unknown_status() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Config::default());
    let (code, body, _) = send(&app, Request::get("/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(body["status"], "ok");

    let s = status(&app, "nobody").await;
    assert_eq!(s["keystroke_samples"], 0);
    assert_eq!(s["face_images"], 0);
    assert_eq!(s["trained"], false);
    assert_eq!(s["required_keystroke_samples"], 10);
    assert_eq!(s["required_face_images"], 20);
}

#[tokio::test]
async fn enrollment_progress_is_monotone_and_ends_trained() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Config::default());
    let data = population(2);
    let statuses = enroll_over_http(&app, &data[0]).await;
    for w in statuses.windows(2) {
        assert!(w[1]["keystroke_samples"].as_u64() > w[0]["keystroke_samples"].as_u64());
        assert!(w[1]["face_images"].as_u64() > w[0]["face_images"].as_u64());
    }
    assert!(statuses[..9].iter().all(|s| s["trained"] == false));
    let last = statuses.last().unwrap();
    assert_eq!((last["keystroke_samples"].as_u64(), last["face_images"].as_u64()), (Some(10), Some(20)));
    assert_eq!(last["trained"], true);

    // No biometric data in the status document.
    let keys: Vec<&str> = last.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["face_images", "failed_verifications", "keystroke_samples", "required_face_images", "required_keystroke_samples", "trained", "user_id"]
    );

    // Trained users refuse more data unless appending is enabled.
    let more = submission(&data[0].user_id, AttemptKind::Enroll, Some(&data[0].enroll_keystrokes[0]), &[], 1);
    assert_eq!(post(&app, &more).await.0, StatusCode::CONFLICT);
    let mut config = Config::default();
    config.server.allow_append = true;
    let appending = self::app(dir.path(), config);
    assert_eq!(post(&appending, &more).await.0, StatusCode::OK);
    assert_eq!(status(&appending, &data[0].user_id).await["keystroke_samples"], 11);
}

#[tokio::test]
async fn verification_decides_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Config::default());
    let data = population(3);
    for d in &data {
        enroll_over_http(&app, d).await;
    }
    let user = &data[0];
    let genuine = submission(&user.user_id, AttemptKind::Verify, Some(&user.enroll_keystrokes[0]), &user.enroll_faces[..1], 123);
    let (code, body, bytes) = post(&app, &genuine).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(body["decision"], "accept");
    let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["decision", "face_distance", "keystroke_score", "s_false", "s_true"]);

    // Replays and a shifted client clock give the same bytes.
    assert_eq!(post(&app, &genuine).await.2, bytes);
    let shifted = submission(&user.user_id, AttemptKind::Verify, Some(&user.enroll_keystrokes[0]), &user.enroll_faces[..1], 987_654);
    assert_eq!(post(&app, &shifted).await.2, bytes);

    let probe = submission(&user.user_id, AttemptKind::Verify, Some(&user.probe_keystrokes[0]), &user.probe_faces[..1], 5);
    let (code, body, _) = post(&app, &probe).await;
    assert_eq!(code, StatusCode::OK);
    assert!(body["s_true"].as_f64().unwrap() >= 0.0);
}

#[tokio::test]
async fn malformed_submissions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Config::default());
    let data = population(2);
    enroll_over_http(&app, &data[0]).await;
    let user = &data[0];
    let good = submission(&user.user_id, AttemptKind::Verify, Some(&user.probe_keystrokes[0]), &user.probe_faces[..1], 1000);
    assert_eq!(post(&app, &good).await.0, StatusCode::OK);

    let mut released_early = good.clone();
    released_early.key_events[3].release_ms = released_early.key_events[3].press_ms;
    let (code, body, _) = post(&app, &released_early).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("released"));

    let mut unordered = good.clone();
    unordered.key_events.swap(2, 5);
    assert_eq!(post(&app, &unordered).await.0, StatusCode::BAD_REQUEST);

    let mut stale = good.clone();
    stale.key_events.last_mut().unwrap().release_ms += 61_000;
    assert_eq!(post(&app, &stale).await.0, StatusCode::BAD_REQUEST);

    let mut short = good.clone();
    short.key_events.pop();
    assert_eq!(post(&app, &short).await.0, StatusCode::BAD_REQUEST);

    let mut no_face = good.clone();
    no_face.face_frames.clear();
    assert_eq!(post(&app, &no_face).await.0, StatusCode::BAD_REQUEST);

    let mut bad_frame = good.clone();
    bad_frame.face_frames[0] = "not base64!".into();
    assert_eq!(post(&app, &bad_frame).await.0, StatusCode::BAD_REQUEST);

    let mut tiny_frame = good.clone();
    tiny_frame.face_frames[0] = encode_frame(&FaceImage::new(8, 8, vec![9; 64]).unwrap());
    assert_eq!(post(&app, &tiny_frame).await.0, StatusCode::BAD_REQUEST);

    assert_eq!(post_raw(&app, "{not json").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_raw(&app, r#"{"user_id":"x","attempt_kind":"login"}"#).await.0, StatusCode::BAD_REQUEST);
    let mut empty_id = good.clone();
    empty_id.user_id.clear();
    assert_eq!(post(&app, &empty_id).await.0, StatusCode::BAD_REQUEST);

    let mut unknown = good.clone();
    unknown.user_id = "ghost".into();
    assert_eq!(post(&app, &unknown).await.0, StatusCode::NOT_FOUND);

    let partial = submission("halfway", AttemptKind::Enroll, Some(&data[1].enroll_keystrokes[0]), &[], 0);
    assert_eq!(post(&app, &partial).await.0, StatusCode::OK);
    let mut untrained = good.clone();
    untrained.user_id = "halfway".into();
    assert_eq!(post(&app, &untrained).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_enrollments_lose_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Config::default());
    let data = population(2);
    let tasks: Vec<_> = data[0]
        .enroll_keystrokes
        .iter()
        .take(8)
        .enumerate()
        .map(|(i, keys)| {
            let app = app.clone();
            let s = submission("busy", AttemptKind::Enroll, Some(keys), &data[0].enroll_faces[i..i + 1], 0);
            tokio::spawn(async move { post(&app, &s).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let s = status(&app, "busy").await;
    assert_eq!((s["keystroke_samples"].as_u64(), s["face_images"].as_u64()), (Some(8), Some(8)));
}

#[test]
fn client_frames_keep_their_pixels() {
    let face = &population(2)[1].probe_faces[0];
    let s = submission("u", AttemptKind::Enroll, None, std::slice::from_ref(face), 0);
    let decoded = s.decode(60_000).unwrap();
    assert_eq!(decoded.faces, vec![face.clone()]);
    assert!(decoded.keystrokes.is_none());
}
