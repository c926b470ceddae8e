//! Error rates, threshold sweeps and synthetic populations.
//!
//! `FAR = accepted imposter attempts / imposter attempts` and
//! `FRR = rejected genuine attempts / genuine attempts`. The harness reports
//! both denominators with every rate.
//!
//! Real keystroke and face data are private by nature, so
//! [`generate_population`] creates users with their own generative
//! parameters: a two-state keystroke HMM in normalized feature space, and a
//! face prototype in image space with a within-user spread. Imposters are
//! zero-effort: another user's natural behaviour presented under the claimed
//! identity.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face::{FaceConfig, FaceError, FaceImage, FaceModel};
use crate::fusion::{integrate, keystroke_score, Integrator, ModalityScore};
use crate::hmm::{GaussianParams, HmmError, HmmModel, TrainedProfile, TrainingConfig};
use crate::keystroke::{KeystrokeError, KeystrokeTimings, Observation};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("FAR is undefined without imposter attempts")]
    NoImposterAttempts,
    #[error("FRR is undefined without genuine attempts")]
    NoGenuineAttempts,
    #[error("a population needs at least 2 users, got {0}")]
    TooFewUsers(usize),
    #[error("invalid population config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Keystroke(#[from] KeystrokeError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Face(#[from] FaceError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub claimed_user: String,
    pub true_user: String,
    pub accepted: bool,
}

impl AttemptRecord {
    pub fn is_genuine(&self) -> bool {
        self.claimed_user == self.true_user
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptLog {
    pub records: Vec<AttemptRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub false_accepts: usize,
    pub imposter_attempts: usize,
    pub false_rejects: usize,
    pub genuine_attempts: usize,
}

impl ErrorCounts {
    pub fn far(&self) -> Result<f64, EvaluationError> {
        if self.imposter_attempts == 0 {
            return Err(EvaluationError::NoImposterAttempts);
        }
        Ok(self.false_accepts as f64 / self.imposter_attempts as f64)
    }

    pub fn frr(&self) -> Result<f64, EvaluationError> {
        if self.genuine_attempts == 0 {
            return Err(EvaluationError::NoGenuineAttempts);
        }
        Ok(self.false_rejects as f64 / self.genuine_attempts as f64)
    }

    /// Counts one attempt.
    pub fn record(&mut self, genuine: bool, accepted: bool) {
        if genuine {
            self.genuine_attempts += 1;
            self.false_rejects += usize::from(!accepted);
        } else {
            self.imposter_attempts += 1;
            self.false_accepts += usize::from(accepted);
        }
    }
}

impl AttemptLog {
    pub fn push(&mut self, claimed_user: impl Into<String>, true_user: impl Into<String>, accepted: bool) {
        self.records.push(AttemptRecord {
            claimed_user: claimed_user.into(),
            true_user: true_user.into(),
            accepted,
        });
    }

    pub fn counts(&self) -> ErrorCounts {
        let mut counts = ErrorCounts::default();
        for r in &self.records {
            counts.record(r.is_genuine(), r.accepted);
        }
        counts
    }
}

pub fn far(log: &AttemptLog) -> Result<f64, EvaluationError> {
    log.counts().far()
}

pub fn frr(log: &AttemptLog) -> Result<f64, EvaluationError> {
    log.counts().frr()
}

/// Equal error rate of two score sets where a higher score means "more genuine".
///
/// Every observed score is tried as an acceptance threshold (`score >= t`,
/// plus "accept nothing"); the threshold where FAR and FRR are closest is
/// taken and their mean returned.
pub fn equal_error_rate(genuine: &[f64], imposter: &[f64]) -> Result<f64, EvaluationError> {
    if genuine.is_empty() {
        return Err(EvaluationError::NoGenuineAttempts);
    }
    if imposter.is_empty() {
        return Err(EvaluationError::NoImposterAttempts);
    }
    let mut g = genuine.to_vec();
    let mut i = imposter.to_vec();
    g.sort_by(f64::total_cmp);
    i.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&i).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let count_below = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s < t);
    let mut best = (f64::INFINITY, 1.0);
    for t in thresholds {
        let frr = count_below(&g, t) as f64 / g.len() as f64;
        let far = (i.len() - count_below(&i, t)) as f64 / i.len() as f64;
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, 0.5 * (far + frr));
        }
    }
    Ok(best.1)
}

/// Which decision a sweep point describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepModality {
    Keystroke,
    Face,
    Fused,
}

/// One operating point; serialized as one JSON line by [`RocPoint::to_json_line`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub k: f64,
    pub modality: SweepModality,
    pub far: f64,
    pub frr: f64,
    pub false_accepts: usize,
    pub imposter_attempts: usize,
    pub false_rejects: usize,
    pub genuine_attempts: usize,
}

impl RocPoint {
    fn new(k: f64, modality: SweepModality, counts: ErrorCounts) -> Result<Self, EvaluationError> {
        Ok(Self {
            k,
            modality,
            far: counts.far()?,
            frr: counts.frr()?,
            false_accepts: counts.false_accepts,
            imposter_attempts: counts.imposter_attempts,
            false_rejects: counts.false_rejects,
            genuine_attempts: counts.genuine_attempts,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

/// Raw per-attempt outputs of both matchers, independent of any threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAttempt {
    pub claimed_user: String,
    pub true_user: String,
    pub keystroke_score: f64,
    /// Distance from the claimed profile's mean score, in standard deviations.
    pub band_distance: f64,
    pub face_distance: f64,
    pub face: ModalityScore,
}

impl ScoredAttempt {
    pub fn is_genuine(&self) -> bool {
        self.claimed_user == self.true_user
    }

    pub fn keystroke_accepted(&self, k: f64) -> bool {
        self.band_distance <= k
    }

    pub fn fused(&self, k: f64, integrator: Integrator) -> crate::fusion::FusedDecision {
        integrate(&keystroke_score(self.band_distance, k), &self.face, integrator)
    }
}

/// Scored attempts of a whole experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub attempts: Vec<ScoredAttempt>,
}

/// Equal error rates of each modality and of the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualErrorRates {
    pub keystroke: f64,
    pub face: f64,
    pub fused: f64,
}

impl ScoreTable {
    pub fn log(&self, decide: impl Fn(&ScoredAttempt) -> bool) -> AttemptLog {
        AttemptLog {
            records: self
                .attempts
                .iter()
                .map(|a| AttemptRecord {
                    claimed_user: a.claimed_user.clone(),
                    true_user: a.true_user.clone(),
                    accepted: decide(a),
                })
                .collect(),
        }
    }

    fn counts(&self, decide: impl Fn(&ScoredAttempt) -> bool) -> ErrorCounts {
        let mut counts = ErrorCounts::default();
        for a in &self.attempts {
            counts.record(a.is_genuine(), decide(a));
        }
        counts
    }

    /// FAR/FRR per band width `k` for the keystroke band test, the face
    /// decision and the fused decision.
    ///
    /// `k` widens the keystroke acceptance band and moves the keystroke
    /// calibration edge with it; the face decision does not depend on `k`.
    pub fn sweep_roc(&self, k_values: &[f64], integrator: Integrator) -> Result<Vec<RocPoint>, EvaluationError> {
        let mut out = Vec::with_capacity(k_values.len() * 3);
        for &k in k_values {
            out.push(RocPoint::new(
                k,
                SweepModality::Keystroke,
                self.counts(|a| a.keystroke_accepted(k)),
            )?);
            out.push(RocPoint::new(k, SweepModality::Face, self.counts(|a| a.face.accepts()))?);
            out.push(RocPoint::new(
                k,
                SweepModality::Fused,
                self.counts(|a| a.fused(k, integrator).accepted),
            )?);
        }
        Ok(out)
    }

    /// Threshold-free comparison of the modalities.
    ///
    /// Keystroke attempts are ranked by `-band_distance`, face attempts by
    /// `-distance`, and fused attempts by `s_true - s_false` at band width `k`
    /// (whose zero crossing is the fused accept rule).
    pub fn equal_error_rates(&self, k: f64, integrator: Integrator) -> Result<EqualErrorRates, EvaluationError> {
        let split = |f: &dyn Fn(&ScoredAttempt) -> f64| {
            let mut genuine = Vec::new();
            let mut imposter = Vec::new();
            for a in &self.attempts {
                if a.is_genuine() {
                    genuine.push(f(a));
                } else {
                    imposter.push(f(a));
                }
            }
            equal_error_rate(&genuine, &imposter)
        };
        Ok(EqualErrorRates {
            keystroke: split(&|a| -a.band_distance)?,
            face: split(&|a| -a.face_distance)?,
            fused: split(&|a| a.fused(k, integrator).margin())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_users: usize,
    /// Keystroke samples per user used for enrollment.
    pub samples_per_user: usize,
    /// Genuine verification attempts generated per user.
    pub probes_per_user: usize,
    pub face_images_per_user: usize,
    pub password: String,
    /// Scales every between-user difference; smaller values make users overlap.
    pub separation: f64,
    /// Per-pixel noise standard deviation in gray levels.
    pub pixel_noise: f64,
    /// Log-scale spread of user keystroke state means, before `separation`.
    pub keystroke_between_sd: f64,
    /// Spread of user face coefficients around the base face, before `separation`.
    pub face_between_sd: f64,
    /// Spread of one user's captures around their own face.
    pub face_within_sd: f64,
    pub face_size: usize,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_users: 20,
            samples_per_user: 20,
            probes_per_user: 10,
            face_images_per_user: 20,
            password: "GOOSEBERRY".to_string(),
            separation: 1.0,
            pixel_noise: 12.0,
            keystroke_between_sd: 0.5,
            face_between_sd: 10.0,
            face_within_sd: 15.0,
            face_size: crate::face::FACE_WIDTH,
            seed: 2024,
        }
    }
}

const FACE_PATTERNS: usize = 24;

/// Generative parameters of one synthetic user.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUser {
    pub user_id: String,
    pub keystroke: HmmModel,
    /// Mean typing time for the whole password, before normalization.
    pub typing_ms: f64,
    /// Coefficients of the user's face in the shared pattern basis.
    pub face_coefficients: Vec<f64>,
    /// Standard deviation of per-capture variation along each pattern.
    pub face_spread: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub config: PopulationConfig,
    pub users: Vec<SyntheticUser>,
    /// Smooth unit-RMS image patterns shared by every face; row-major.
    pub face_patterns: Vec<Vec<f64>>,
    pub base_face: Vec<f64>,
}

/// Enrollment and probe data of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    pub user_id: String,
    pub enroll_keystrokes: Vec<KeystrokeTimings>,
    pub enroll_faces: Vec<FaceImage>,
    pub probe_keystrokes: Vec<KeystrokeTimings>,
    pub probe_faces: Vec<FaceImage>,
}

impl SyntheticPopulation {
    /// One keystroke entry of `user`, rendered to integer milliseconds.
    pub fn sample_keystrokes<R: Rng + ?Sized>(&self, user: &SyntheticUser, rng: &mut R) -> KeystrokeTimings {
        let keys = self.config.password.chars().count();
        let (_, obs) = user.keystroke.sample(keys - 1, rng);
        let final_duration = obs.iter().map(|o| o.duration).sum::<f64>() / obs.len() as f64;
        render_timings(&obs, final_duration, user.typing_ms * rng.random_range(0.8..1.25))
    }

    pub fn sample_face<R: Rng + ?Sized>(&self, user: &SyntheticUser, rng: &mut R) -> FaceImage {
        let size = self.config.face_size;
        let within = Normal::new(0.0, user.face_spread).expect("finite spread");
        let noise = Normal::new(0.0, self.config.pixel_noise.max(1e-12)).expect("finite noise");
        let coeffs: Vec<f64> = user
            .face_coefficients
            .iter()
            .map(|c| c + within.sample(rng))
            .collect();
        let pixels = (0..size * size)
            .map(|p| {
                let v = self.base_face[p]
                    + coeffs
                        .iter()
                        .zip(&self.face_patterns)
                        .map(|(c, pat)| c * pat[p])
                        .sum::<f64>()
                    + noise.sample(rng);
                v.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        FaceImage::new(size, size, pixels).expect("square image")
    }
}

/// Turns normalized observations into millisecond timings of roughly `total_ms`.
fn render_timings(obs: &[Observation], final_duration: f64, total_ms: f64) -> KeystrokeTimings {
    let raw_total: f64 = obs.iter().map(|o| o.duration + o.latency).sum::<f64>() + final_duration;
    let scale = total_ms / raw_total.max(1e-6);
    let mut durations = Vec::with_capacity(obs.len() + 1);
    let mut latencies = Vec::with_capacity(obs.len());
    for o in obs {
        let d = ((o.duration * scale).round() as i64).max(1);
        // An overlapping key may not be pressed before the previous key.
        let l = ((o.latency * scale).round() as i64).max(-d);
        durations.push(d as u64);
        latencies.push(l);
    }
    durations.push(((final_duration * scale).round() as i64).max(1) as u64);
    KeystrokeTimings::new(durations, latencies).expect("rendered timings are well formed")
}

fn smooth_pattern<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..4.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let mut pattern: Vec<f64> = (0..size * size)
        .map(|p| {
            let (x, y) = ((p % size) as f64 / size as f64, (p / size) as f64 / size as f64);
            waves
                .iter()
                .map(|&(fx, fy, phase, amp)| amp * (std::f64::consts::TAU * (fx * x + fy * y) + phase).cos())
                .sum()
        })
        .collect();
    let rms = (pattern.iter().map(|v| v * v).sum::<f64>() / pattern.len() as f64).sqrt();
    for v in &mut pattern {
        *v /= rms;
    }
    pattern
}

fn base_face(size: usize) -> Vec<f64> {
    (0..size * size)
        .map(|p| {
            let x = (p % size) as f64 / size as f64 - 0.5;
            let y = (p / size) as f64 / size as f64 - 0.5;
            let r2 = x * x / 0.09 + y * y / 0.16;
            if r2 < 1.0 {
                150.0 - 30.0 * r2
            } else {
                70.0
            }
        })
        .collect()
}

fn synthetic_keystroke_model<R: Rng + ?Sized>(between_sd: f64, rng: &mut R) -> HmmModel {
    let offset = Normal::new(0.0, between_sd).expect("finite sd");
    let mut mean = |d: f64, l: f64| [d * offset.sample(rng).exp(), l * offset.sample(rng).exp()];
    let fluent = mean(0.055, 0.035);
    let hesitant = mean(0.065, 0.090);
    let cov = |rng: &mut R| {
        let sd_d: f64 = rng.random_range(0.006..0.011);
        let sd_l: f64 = rng.random_range(0.008..0.016);
        let rho: f64 = rng.random_range(-0.5..0.5);
        [[sd_d * sd_d, rho * sd_d * sd_l], [rho * sd_d * sd_l, sd_l * sd_l]]
    };
    let emissions = [
        GaussianParams::new(fluent, cov(rng)),
        GaussianParams::new(hesitant, cov(rng)),
    ];
    let stay_fluent: f64 = rng.random_range(0.65..0.9);
    let stay_hesitant: f64 = rng.random_range(0.3..0.6);
    HmmModel::new(
        [0.7, 0.3],
        [[stay_fluent, 1.0 - stay_fluent], [1.0 - stay_hesitant, stay_hesitant]],
        emissions,
    )
    .expect("valid generated model")
}

/// Users and their datasets; deterministic in `config.seed`.
pub fn generate_population(
    config: &PopulationConfig,
) -> Result<(SyntheticPopulation, Vec<UserDataset>), EvaluationError> {
    if config.n_users < 2 {
        return Err(EvaluationError::TooFewUsers(config.n_users));
    }
    if config.password.chars().count() < 3 {
        return Err(EvaluationError::InvalidConfig("password needs at least 3 characters".into()));
    }
    if !(config.separation > 0.0) {
        return Err(EvaluationError::InvalidConfig("separation must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.face_size;
    let face_patterns: Vec<Vec<f64>> = (0..FACE_PATTERNS).map(|_| smooth_pattern(size, &mut rng)).collect();
    let between = Normal::new(0.0, config.face_between_sd * config.separation).expect("finite sd");
    let users: Vec<SyntheticUser> = (0..config.n_users)
        .map(|i| SyntheticUser {
            user_id: format!("user{i:02}"),
            keystroke: synthetic_keystroke_model(config.keystroke_between_sd * config.separation, &mut rng),
            typing_ms: rng.random_range(1500.0..3500.0),
            face_coefficients: (0..FACE_PATTERNS).map(|_| between.sample(&mut rng)).collect(),
            face_spread: config.face_within_sd * rng.random_range(0.8..1.2),
        })
        .collect();
    let population = SyntheticPopulation {
        config: config.clone(),
        users,
        face_patterns,
        base_face: base_face(size),
    };

    let datasets = population
        .users
        .iter()
        .enumerate()
        .map(|(i, user)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1)));
            UserDataset {
                user_id: user.user_id.clone(),
                enroll_keystrokes: (0..config.samples_per_user)
                    .map(|_| population.sample_keystrokes(user, &mut rng))
                    .collect(),
                enroll_faces: (0..config.face_images_per_user)
                    .map(|_| population.sample_face(user, &mut rng))
                    .collect(),
                probe_keystrokes: (0..config.probes_per_user)
                    .map(|_| population.sample_keystrokes(user, &mut rng))
                    .collect(),
                probe_faces: (0..config.probes_per_user)
                    .map(|_| population.sample_face(user, &mut rng))
                    .collect(),
            }
        })
        .collect();
    Ok((population, datasets))
}

/// Models trained on the enrollment half of a population.
#[derive(Debug, Clone)]
pub struct EnrolledSystem {
    pub profiles: HashMap<String, TrainedProfile>,
    pub face_model: FaceModel,
}

impl EnrolledSystem {
    pub fn enroll(
        datasets: &[UserDataset],
        training: &TrainingConfig,
        face: &FaceConfig,
    ) -> Result<Self, EvaluationError> {
        let mut profiles = HashMap::new();
        for ds in datasets {
            let features = ds
                .enroll_keystrokes
                .iter()
                .map(KeystrokeTimings::normalize)
                .collect::<Result<Vec<_>, _>>()?;
            profiles.insert(ds.user_id.clone(), crate::hmm::fit_profile_from_features(&features, training)?);
        }
        let labeled: Vec<(String, FaceImage)> = datasets
            .iter()
            .flat_map(|ds| ds.enroll_faces.iter().map(|im| (ds.user_id.clone(), im.clone())))
            .collect();
        let face_model = FaceModel::fit(&labeled, face)?;
        Ok(Self { profiles, face_model })
    }

    pub fn score(
        &self,
        claimed: &str,
        true_user: &str,
        keystrokes: &KeystrokeTimings,
        face: &FaceImage,
    ) -> Result<ScoredAttempt, EvaluationError> {
        let profile = self
            .profiles
            .get(claimed)
            .ok_or_else(|| EvaluationError::InvalidConfig(format!("unknown user {claimed}")))?;
        let features = keystrokes.normalize()?;
        let keystroke_score = crate::hmm::score_sequence(&profile.model, &features.observations)?;
        let face_distance = self.face_model.distance_to(face, claimed)?;
        Ok(ScoredAttempt {
            claimed_user: claimed.to_string(),
            true_user: true_user.to_string(),
            keystroke_score,
            band_distance: profile.band_distance(keystroke_score),
            face_distance,
            face: self.face_model.calibrate_distance(face_distance),
        })
    }
}

/// Enrolls every user, then scores each user's genuine probes and an equal
/// number of zero-effort imposter probes taken round-robin from the others.
pub fn run_experiment(
    datasets: &[UserDataset],
    training: &TrainingConfig,
    face: &FaceConfig,
) -> Result<(EnrolledSystem, ScoreTable), EvaluationError> {
    if datasets.len() < 2 {
        return Err(EvaluationError::TooFewUsers(datasets.len()));
    }
    let system = EnrolledSystem::enroll(datasets, training, face)?;
    let mut table = ScoreTable::default();
    let n = datasets.len();
    for (u, claimed) in datasets.iter().enumerate() {
        for (j, (keys, image)) in claimed.probe_keystrokes.iter().zip(&claimed.probe_faces).enumerate() {
            table
                .attempts
                .push(system.score(&claimed.user_id, &claimed.user_id, keys, image)?);
            let other = &datasets[(u + 1 + j % (n - 1)) % n];
            let k = (j + u) % other.probe_keystrokes.len();
            table.attempts.push(system.score(
                &claimed.user_id,
                &other.user_id,
                &other.probe_keystrokes[k],
                &other.probe_faces[k],
            )?);
        }
    }
    Ok((system, table))
}

/// Generates a population, runs the experiment and sweeps `k_values`.
pub fn sweep_roc(
    config: &PopulationConfig,
    training: &TrainingConfig,
    k_values: &[f64],
    integrator: Integrator,
) -> Result<Vec<RocPoint>, EvaluationError> {
    let (_, datasets) = generate_population(config)?;
    let (_, table) = run_experiment(&datasets, training, &FaceConfig::default())?;
    table.sweep_roc(k_values, integrator)
}
