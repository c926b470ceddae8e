//! Acceptance suite: one PASS/FAIL line per criterion, with timing.
//!
//! Run with `cargo test -p keyface-cli --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use keyface::evaluation::{far, frr, generate_population, run_experiment, AttemptLog, PopulationConfig, SweepModality};
use keyface::face::{train_pca, FaceConfig, FaceImage};
use keyface::fusion::{integrate, Integrator, Modality, ModalityScore};
use keyface::hmm::{baum_welch_trace, baum_welch_train, forward_backward, viterbi, GaussianParams, HmmModel, TrainingConfig};
use keyface::keystroke::{compute_durations, compute_latencies, normalize, KeystrokeSample, Observation, RawKeyEvent};
use keyface::nalgebra::DMatrix;
use keyface::store::{DerivedKey, SALT_LEN};
use keyface_cli::config::Config;
use keyface_cli::engine::{EnrollOptions, Engine};
use keyface_cli::http::{encode_frame, router, AttemptKind, CaptureSubmission, KeyEvent};
use keyface_oracles::hmm::{brute_force_log_likelihood, brute_force_viterbi, Hmm2};
use keyface_oracles::keystroke::recompute;
use keyface_oracles::linalg::{jacobi_eigen, max_principal_angle, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "keystroke features match scalar recomputation", budget: Some(Duration::from_secs(5)), run: keystroke_features },
        Criterion { name: "HMM forward/Viterbi match path enumeration", budget: Some(Duration::from_secs(30)), run: hmm_oracle },
        Criterion { name: "Baum-Welch log-likelihood is monotone", budget: None, run: baum_welch_monotone },
        Criterion { name: "Baum-Welch recovers emission means", budget: None, run: parameter_recovery },
        Criterion { name: "eigenfaces orthonormal, reconstructive, snapshot = direct", budget: None, run: eigenfaces },
        Criterion { name: "FAR/FRR arithmetic on reported counts", budget: None, run: rate_arithmetic },
        Criterion { name: "ROC monotone and fusion beats each modality", budget: Some(Duration::from_secs(120)), run: roc_sweep },
        Criterion { name: "integrators commutative, monotone, dominant", budget: Some(Duration::from_secs(5)), run: fusion_properties },
        Criterion { name: "profile store round trip and tamper detection", budget: None, run: profile_store },
        Criterion { name: "CLI and HTTP contract", budget: None, run: cli_service },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let result = match (result, c.budget) {
            (Ok(_), Some(b)) if elapsed > b => Err(format!("took {elapsed:.2?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {:<58} {:>9.2?}  {detail}", c.name, elapsed),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:<58} {:>9.2?}  {detail}", c.name, elapsed);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn keystroke_features() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..16);
        let mut press = rng.random_range(0..10_000_000u64);
        let events: Vec<(u64, u64)> = (0..n)
            .map(|_| {
                press += rng.random_range(0..400);
                (press, press + rng.random_range(1..400))
            })
            .collect();
        let raw = events.iter().map(|&(p, r)| RawKeyEvent::new("k", p, r)).collect();
        let sample = KeystrokeSample::from_events(raw).map_err(|e| e.to_string())?;
        let oracle = recompute(&events);
        let durations: Vec<i128> = compute_durations(&sample).into_iter().map(i128::from).collect();
        let latencies: Vec<i128> = compute_latencies(&sample).into_iter().map(i128::from).collect();
        ensure!(durations == oracle.durations, "durations differ for {events:?}");
        ensure!(latencies == oracle.latencies, "latencies differ for {events:?}");
        let f = normalize(&sample).map_err(|e| e.to_string())?;
        for (t, o) in f.observations.iter().enumerate() {
            worst = worst
                .max((o.duration - oracle.norm_durations[t]).abs())
                .max((o.latency - oracle.norm_latencies[t]).abs());
        }
        let telescoped = (f.normalized_total() - 1.0).abs();
        ensure!(telescoped <= 1e-9, "telescoping sum off by {telescoped}");
    }
    ensure!(worst <= 1e-12, "normalized feature error {worst:e}");
    Ok(format!("1000 samples, max normalized error {worst:.1e}"))
}

fn random_covariance(rng: &mut impl Rng) -> [[f64; 2]; 2] {
    let (a, b, c) = (rng.random_range(0.1..0.6), rng.random_range(-0.5..0.5), rng.random_range(0.1..0.6));
    [[a * a + 0.02, a * b], [a * b, b * b + c * c + 0.02]]
}

fn random_model(rng: &mut impl Rng) -> HmmModel {
    let mut row = || {
        let x: f64 = rng.random_range(0.05..0.95);
        [x, 1.0 - x]
    };
    let (initial, transition) = (row(), [row(), row()]);
    let mut emission = || GaussianParams::new([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], random_covariance(rng));
    let emissions = [emission(), emission()];
    HmmModel::new(initial, transition, emissions).expect("valid random model")
}

fn hmm_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut worst_fb, mut worst_vit): (f64, f64) = (0.0, 0.0);
    for m in 0..100 {
        let model = random_model(&mut rng);
        let reference = Hmm2 {
            initial: model.initial_probs,
            transition: model.transition,
            means: [model.emissions[0].mean, model.emissions[1].mean],
            covariances: [model.emissions[0].covariance, model.emissions[1].covariance],
        };
        for len in 1..=6 {
            let obs: Vec<Observation> = (0..len)
                .map(|_| Observation::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
                .collect();
            let x: Vec<[f64; 2]> = obs.iter().map(|o| o.to_array()).collect();
            let ll = forward_backward(&model, &obs).map_err(|e| e.to_string())?.log_likelihood;
            let brute = brute_force_log_likelihood(&reference, &x);
            worst_fb = worst_fb.max((ll - brute).abs() / brute.abs().max(1.0));
            let (path, lp) = viterbi(&model, &obs).map_err(|e| e.to_string())?;
            let (best, best_lp) = brute_force_viterbi(&reference, &x);
            ensure!(path == best, "model {m}, length {len}: path {path:?} vs {best:?}");
            worst_vit = worst_vit.max((lp - best_lp).abs() / best_lp.abs().max(1.0));
        }
    }
    ensure!(worst_fb < 1e-8, "forward relative error {worst_fb:e}");
    ensure!(worst_vit < 1e-8, "Viterbi relative error {worst_vit:e}");
    Ok(format!("100 models x lengths 1..=6, forward {worst_fb:.1e}, Viterbi {worst_vit:.1e}, paths exact"))
}

fn baum_welch_monotone() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst_drop: f64 = 0.0;
    for run in 0..50u64 {
        let truth = random_model(&mut rng);
        let data: Vec<Vec<Observation>> = (0..20).map(|_| truth.sample(9, &mut rng).1).collect();
        let views: Vec<&[Observation]> = data.iter().map(Vec::as_slice).collect();
        let config = TrainingConfig { seed: run, ..Default::default() };
        let (_, trace) = baum_welch_trace(&views, &config).map_err(|e| e.to_string())?;
        ensure!(trace.log_likelihoods.len() == 21, "run {run}: {} iterations recorded", trace.log_likelihoods.len() - 1);
        for w in trace.log_likelihoods.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        for m in &trace.models {
            let rows = std::iter::once(&m.initial_probs).chain(&m.transition);
            for row in rows {
                ensure!(row.iter().all(|&p| p >= 0.0), "run {run}: negative probability");
                ensure!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "run {run}: row sums to {}", row.iter().sum::<f64>());
            }
            m.validate().map_err(|e| format!("run {run}: {e}"))?;
        }
    }
    ensure!(worst_drop <= 1e-9, "log-likelihood dropped by {worst_drop:e}");
    Ok(format!("50 runs x 20 iterations, largest decrease {:.1e}", worst_drop.max(0.0)))
}

fn parameter_recovery() -> Check {
    let truth = HmmModel::new(
        [0.6, 0.4],
        [[0.8, 0.2], [0.3, 0.7]],
        [
            GaussianParams::new([0.2, 0.1], [[0.010, 0.002], [0.002, 0.008]]),
            GaussianParams::new([0.6, 0.7], [[0.012, -0.003], [-0.003, 0.010]]),
        ],
    )
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let data: Vec<Vec<Observation>> = (0..200).map(|_| truth.sample(9, &mut rng).1).collect();
    let views: Vec<&[Observation]> = data.iter().map(Vec::as_slice).collect();
    let fitted = baum_welch_train(&views, &TrainingConfig::default()).map_err(|e| e.to_string())?;
    let err = |m: &HmmModel| {
        (0..4)
            .map(|i| (m.emissions[i / 2].mean[i % 2] - truth.emissions[i / 2].mean[i % 2]).abs())
            .fold(0.0, f64::max)
    };
    let best = err(&fitted).min(err(&fitted.swapped_states()));
    ensure!(best < 0.05, "mean error {best}");
    Ok(format!("200 sequences of length 9, max mean error {best:.4}"))
}

fn random_image(rng: &mut impl Rng, size: usize) -> FaceImage {
    FaceImage::new(size, size, (0..size * size).map(|_| rng.random()).collect()).expect("sized image")
}

fn eigenfaces() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let images: Vec<FaceImage> = (0..12).map(|_| random_image(&mut rng, 64)).collect();
    let pca = train_pca(&images, 11).map_err(|e| e.to_string())?;
    let ortho = (pca.components.tr_mul(&pca.components) - DMatrix::identity(11, 11)).abs().max();
    ensure!(ortho < 1e-8, "orthonormality error {ortho:e}");
    let mut recon: f64 = 0.0;
    for im in &images {
        let x = im.to_vector();
        recon = recon.max((pca.reconstruct(&pca.project(&x)) - &x).norm() / x.norm());
    }
    ensure!(recon < 1e-6, "reconstruction error {recon:e}");

    let mut angle: f64 = 0.0;
    for _ in 0..5 {
        let small: Vec<FaceImage> = (0..5).map(|_| random_image(&mut rng, 8)).collect();
        let pca = train_pca(&small, 4).map_err(|e| e.to_string())?;
        let data: Vec<Vec<f64>> = small.iter().map(|im| im.pixels().iter().map(|&p| p as f64).collect()).collect();
        let mean: Vec<f64> = (0..64).map(|j| data.iter().map(|x| x[j]).sum::<f64>() / 5.0).collect();
        let cov: Matrix = (0..64)
            .map(|i| (0..64).map(|j| data.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / 5.0).collect())
            .collect();
        let (_, vectors) = jacobi_eigen(&cov);
        let snapshot: Vec<Vec<f64>> = pca.components.column_iter().map(|c| c.iter().copied().collect()).collect();
        angle = angle.max(max_principal_angle(&vectors[..4], &snapshot));
    }
    ensure!(angle < 1e-6, "principal angle {angle:e}");
    Ok(format!("orthonormality {ortho:.1e}, reconstruction {recon:.1e}, principal angle {angle:.1e}"))
}

fn log_with(genuine: (usize, usize), imposter: (usize, usize)) -> AttemptLog {
    let mut log = AttemptLog::default();
    for i in 0..genuine.1 {
        log.push("alice", "alice", i >= genuine.0);
    }
    for i in 0..imposter.1 {
        log.push("alice", format!("imposter{i}"), i < imposter.0);
    }
    log
}

fn rate_arithmetic() -> Check {
    let log = log_with((46, 500), (27, 500));
    let (fa, fr) = (far(&log).map_err(|e| e.to_string())?, frr(&log).map_err(|e| e.to_string())?);
    let c = log.counts();
    ensure!((c.false_accepts, c.imposter_attempts) == (27, 500), "counted {c:?}");
    ensure!((c.false_rejects, c.genuine_attempts) == (46, 500), "counted {c:?}");
    ensure!(fa == 0.054, "FAR {fa}");
    ensure!(fr == 0.092, "FRR {fr}");
    ensure!(far(&log_with((0, 5), (0, 0))).is_err(), "FAR without imposters must be undefined");
    Ok(format!("FAR 27/500 = {:.1}%, FRR 46/500 = {:.1}%", fa * 100.0, fr * 100.0))
}

fn roc_sweep() -> Check {
    let (_, datasets) = generate_population(&PopulationConfig::default()).map_err(|e| e.to_string())?;
    let (_, table) = run_experiment(&datasets, &TrainingConfig::default(), &FaceConfig::default()).map_err(|e| e.to_string())?;
    let ks = [0.5, 1.0, 1.5, 2.0, 3.0];
    let points = table.sweep_roc(&ks, Integrator::Product).map_err(|e| e.to_string())?;
    for modality in [SweepModality::Keystroke, SweepModality::Face, SweepModality::Fused] {
        let curve: Vec<_> = points.iter().filter(|p| p.modality == modality).collect();
        for w in curve.windows(2) {
            ensure!(w[1].frr <= w[0].frr, "{modality:?} FRR rises from k={} to k={}", w[0].k, w[1].k);
            ensure!(w[1].far >= w[0].far, "{modality:?} FAR falls from k={} to k={}", w[0].k, w[1].k);
        }
    }
    let eer = table.equal_error_rates(1.0, Integrator::Product).map_err(|e| e.to_string())?;
    ensure!(
        eer.fused <= eer.keystroke && eer.fused <= eer.face,
        "fused EER {} vs keystroke {} and face {}",
        eer.fused,
        eer.keystroke,
        eer.face
    );
    Ok(format!(
        "20 users, {} attempts; EER keystroke {:.3}, face {:.3}, fused {:.3}",
        table.attempts.len(),
        eer.keystroke,
        eer.face,
        eer.fused
    ))
}

fn fusion_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut draw = move || {
        let mut p = || match rng.random_range(0..20) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        };
        (p(), p(), rng.random::<f64>())
    };
    for integrator in Integrator::ALL {
        for _ in 0..10_000 {
            let (kt, kf, bump_k) = draw();
            let (ft, ff, bump_f) = draw();
            let key = ModalityScore::new(kt, kf, Modality::Keystroke).map_err(|e| e.to_string())?;
            let face = ModalityScore::new(ft, ff, Modality::Face).map_err(|e| e.to_string())?;
            let d = integrate(&key, &face, integrator);
            let swapped = integrate(
                &ModalityScore { modality: Modality::Keystroke, ..face },
                &ModalityScore { modality: Modality::Face, ..key },
                integrator,
            );
            ensure!((swapped.s_true, swapped.s_false) == (d.s_true, d.s_false), "{integrator} not commutative");
            let stronger_key = ModalityScore { p_true: kt + bump_k * (1.0 - kt), ..key };
            let stronger_face = ModalityScore { p_true: ft + bump_f * (1.0 - ft), ..face };
            if d.accepted {
                ensure!(integrate(&stronger_key, &face, integrator).accepted, "{integrator} not monotone in keystroke");
                ensure!(integrate(&key, &stronger_face, integrator).accepted, "{integrator} not monotone in face");
            }
            if kt > kf && ft > ff {
                ensure!(d.accepted, "{integrator} rejected agreeing accepts {key:?} {face:?}");
            }
            if kt < kf && ft < ff {
                ensure!(!d.accepted, "{integrator} accepted agreeing rejects {key:?} {face:?}");
            }
        }
    }
    Ok("10000 pairs for each of product, sum, min, max".into())
}

fn profile_store() -> Check {
    let key = DerivedKey::derive("acceptance passphrase", [9; SALT_LEN]).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for i in 0..100 {
        let payload: Vec<u8> = (0..rng.random_range(0..4096)).map(|_| rng.random()).collect();
        let sealed = key.seal(&payload).map_err(|e| e.to_string())?;
        ensure!(key.open(&sealed).map_err(|e| e.to_string())? == payload, "payload {i} changed");
    }
    let sealed = key.seal(b"50,30;60,-10;70\n").map_err(|e| e.to_string())?;
    let mut flips = 0;
    for byte in 0..sealed.len() {
        for bit in 0..8 {
            let mut tampered = sealed.clone();
            tampered[byte] ^= 1 << bit;
            ensure!(key.open(&tampered).is_err(), "flip of byte {byte} bit {bit} went unnoticed");
            flips += 1;
        }
    }
    let (a, b) = (key.seal(b"same").map_err(|e| e.to_string())?, key.seal(b"same").map_err(|e| e.to_string())?);
    ensure!(a != b, "identical payloads sealed identically");
    Ok(format!("100 payloads, {flips}/{flips} bit flips detected, repeated saves differ"))
}

fn cli_service() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let profiles = tmp.path().join("profiles");
    let keyface = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_keyface"))
            .args(["--profiles-dir", profiles.to_str().unwrap(), "--passphrase-env", "KEYFACE_ACCEPTANCE_PW"])
            .args(args)
            .env("KEYFACE_ACCEPTANCE_PW", "acceptance")
            .output()
            .map_err(|e| e.to_string())
    };
    let path = |p: &str| data.join(p).to_str().unwrap().to_string();
    let gen = keyface(&["generate", "--out", data.to_str().unwrap(), "--users", "3", "--probes-per-user", "2"])?;
    ensure!(gen.status.success(), "generate failed");
    for user in ["user00", "user01", "user02"] {
        let out = keyface(&[
            "enroll", "--user", user,
            "--samples", &path(&format!("{user}/enroll.txt")),
            "--faces", &path(&format!("{user}/enroll-faces")),
        ])?;
        ensure!(out.status.success(), "enroll {user}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let verify = |user: &str| {
        keyface(&[
            "verify", "--user", user,
            "--sample", &path("user00/enroll.txt"),
            "--face", &path("user00/enroll-faces/000.pgm"),
        ])
    };
    let own = verify("user00")?;
    ensure!(own.status.code() == Some(0), "self-verification exited {:?}", own.status.code());
    let ghost = verify("ghost")?;
    ensure!(ghost.status.code() == Some(2), "unknown user exited {:?}", ghost.status.code());

    // HTTP against the same profile directory.
    let engine = Engine::open(&profiles, "acceptance", Config::default()).map_err(|e| e.to_string())?;
    let (_, users) = generate_population(&PopulationConfig { n_users: 4, samples_per_user: 10, probes_per_user: 2, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let newcomer = &users[3];
    engine
        .enroll("user03", &newcomer.enroll_keystrokes, &newcomer.enroll_faces, EnrollOptions::default())
        .map_err(|e| e.to_string())?;
    let app = router(Arc::new(engine));
    let events: Vec<KeyEvent> = newcomer.probe_keystrokes[0]
        .to_sample(40_000)
        .map_err(|e| e.to_string())?
        .events()
        .iter()
        .map(|e| KeyEvent { key_label: "k".into(), press_ms: e.press_time, release_ms: e.release_time })
        .collect();
    let good = CaptureSubmission {
        user_id: "user03".into(),
        attempt_kind: AttemptKind::Verify,
        key_events: events,
        face_frames: vec![encode_frame(&newcomer.probe_faces[0])],
        timer_granularity_ms: None,
        face_unavailable: false,
    };
    let mut malformed = good.clone();
    malformed.key_events[2].release_ms = malformed.key_events[2].press_ms;
    let mut unknown = good.clone();
    unknown.user_id = "nobody".into();

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let post = |s: &CaptureSubmission| {
        let request = Request::post("/api/v1/submissions")
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(s).unwrap()))
            .unwrap();
        runtime.block_on(async {
            let response = app.clone().oneshot(request).await.unwrap();
            let status = response.status();
            (status, response.into_body().collect().await.unwrap().to_bytes())
        })
    };
    let (status, first) = post(&good);
    ensure!(status == StatusCode::OK, "well-formed verify returned {status}");
    let (_, replay) = post(&good);
    ensure!(first == replay, "replayed submission changed the response");
    let (status, _) = post(&malformed);
    ensure!(status == StatusCode::BAD_REQUEST, "release <= press returned {status}");
    let (status, _) = post(&unknown);
    ensure!(status == StatusCode::NOT_FOUND, "unknown user returned {status}");
    let decision: serde_json::Value = serde_json::from_slice(&first).map_err(|e| e.to_string())?;
    Ok(format!(
        "CLI exits 0/2, HTTP 200 ({}) / 400 / 404, replay byte-identical",
        decision["decision"].as_str().unwrap_or("?")
    ))
}
