//! Two-state hidden Markov model with bivariate Gaussian emissions.
//!
//! Each keystroke observation is a (normalized duration, normalized latency)
//! pair. The model is trained per user with Baum-Welch, a sample is scored by
//! its Viterbi log-joint probability per observation, and a sample is accepted
//! when its score lies within `k` standard deviations of the mean score of the
//! user's own training samples.
//!
//! All probabilities are carried in log space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keystroke::{FeatureSequence, Observation};

pub const N_STATES: usize = 2;

/// `ln(2π)`.
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("need at least {required} training samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },
    #[error("training sample {index} has {length} observations, need at least 2")]
    SequenceTooShort { index: usize, length: usize },
    #[error("covariance is not positive definite (determinant {determinant:e})")]
    NotPositiveDefinite { determinant: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("band width must be positive, got {0}")]
    InvalidBandWidth(f64),
}

/// Mean and full covariance of one state's emission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
}

impl GaussianParams {
    pub fn new(mean: [f64; 2], covariance: [[f64; 2]; 2]) -> Self {
        Self { mean, covariance }
    }

    pub fn determinant(&self) -> f64 {
        let c = &self.covariance;
        c[0][0] * c[1][1] - c[0][1] * c[1][0]
    }

    fn is_positive_definite(&self) -> bool {
        self.covariance[0][0] > 0.0 && self.determinant() > 0.0
    }

    /// Lower Cholesky factor `[l00, l10, l11]`.
    fn cholesky(&self) -> [f64; 3] {
        let c = &self.covariance;
        let l00 = c[0][0].sqrt();
        let l10 = c[1][0] / l00;
        let l11 = (c[1][1] - l10 * l10).sqrt();
        [l00, l10, l11]
    }

    /// Draws one point from the distribution.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let [l00, l10, l11] = self.cholesky();
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        [self.mean[0] + l00 * z0, self.mean[1] + l10 * z0 + l11 * z1]
    }
}

/// `log N(x; mean, covariance)` for the bivariate case.
pub fn log_gaussian_density(x: [f64; 2], params: &GaussianParams) -> Result<f64, HmmError> {
    if !params.is_positive_definite() {
        return Err(HmmError::NotPositiveDefinite {
            determinant: params.determinant(),
        });
    }
    Ok(log_density_unchecked(x, params))
}

fn log_density_unchecked(x: [f64; 2], params: &GaussianParams) -> f64 {
    // Solve via the Cholesky factor: (x-m)^T S^-1 (x-m) = |L^-1 (x-m)|^2.
    let [l00, l10, l11] = params.cholesky();
    let d0 = x[0] - params.mean[0];
    let d1 = x[1] - params.mean[1];
    let y0 = d0 / l00;
    let y1 = (d1 - l10 * y0) / l11;
    let log_det = 2.0 * (l00.ln() + l11.ln());
    -LN_2PI - 0.5 * log_det - 0.5 * (y0 * y0 + y1 * y1)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub initial_probs: [f64; N_STATES],
    pub transition: [[f64; N_STATES]; N_STATES],
    pub emissions: [GaussianParams; N_STATES],
}

impl HmmModel {
    pub fn new(
        initial_probs: [f64; N_STATES],
        transition: [[f64; N_STATES]; N_STATES],
        emissions: [GaussianParams; N_STATES],
    ) -> Result<Self, HmmError> {
        let model = Self {
            initial_probs,
            transition,
            emissions,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_states(&self) -> usize {
        N_STATES
    }

    /// Checks stochasticity (within 1e-12) and positive-definite emissions.
    pub fn validate(&self) -> Result<(), HmmError> {
        let check_row = |row: &[f64; N_STATES], what: &str| {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(HmmError::InvalidModel(format!("{what} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(HmmError::InvalidModel(format!("{what} sums to {sum}")));
            }
            Ok(())
        };
        check_row(&self.initial_probs, "initial distribution")?;
        for (i, row) in self.transition.iter().enumerate() {
            check_row(row, &format!("transition row {i}"))?;
        }
        for e in &self.emissions {
            if !e.is_positive_definite() {
                return Err(HmmError::NotPositiveDefinite {
                    determinant: e.determinant(),
                });
            }
        }
        Ok(())
    }

    /// The same model with the two states relabeled.
    pub fn swapped_states(&self) -> Self {
        let t = &self.transition;
        Self {
            initial_probs: [self.initial_probs[1], self.initial_probs[0]],
            transition: [[t[1][1], t[1][0]], [t[0][1], t[0][0]]],
            emissions: [self.emissions[1], self.emissions[0]],
        }
    }

    fn log_initial(&self) -> [f64; N_STATES] {
        self.initial_probs.map(f64::ln)
    }

    fn log_transition(&self) -> [[f64; N_STATES]; N_STATES] {
        self.transition.map(|row| row.map(f64::ln))
    }

    fn log_emissions(&self, obs: &[Observation]) -> Vec<[f64; N_STATES]> {
        obs.iter()
            .map(|o| {
                let x = o.to_array();
                [
                    log_density_unchecked(x, &self.emissions[0]),
                    log_density_unchecked(x, &self.emissions[1]),
                ]
            })
            .collect()
    }

    /// Samples a hidden path and its observations.
    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> (Vec<usize>, Vec<Observation>) {
        let mut states = Vec::with_capacity(len);
        let mut obs = Vec::with_capacity(len);
        let mut state = pick(&self.initial_probs, rng);
        for t in 0..len {
            if t > 0 {
                state = pick(&self.transition[state], rng);
            }
            states.push(state);
            obs.push(Observation::from(self.emissions[state].sample(rng)));
        }
        (states, obs)
    }
}

fn pick<R: Rng + ?Sized>(probs: &[f64; N_STATES], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < probs[0] {
        0
    } else {
        1
    }
}

/// Result of the forward-backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub log_likelihood: f64,
    /// `gamma[t][i]`: probability of being in state `i` at time `t`.
    pub gamma: Vec<[f64; N_STATES]>,
}

struct Lattice {
    log_alpha: Vec<[f64; N_STATES]>,
    log_beta: Vec<[f64; N_STATES]>,
    log_emit: Vec<[f64; N_STATES]>,
    log_likelihood: f64,
}

fn lattice(model: &HmmModel, obs: &[Observation]) -> Result<Lattice, HmmError> {
    if obs.is_empty() {
        return Err(HmmError::EmptySequence);
    }
    let len = obs.len();
    let log_pi = model.log_initial();
    let log_a = model.log_transition();
    let log_emit = model.log_emissions(obs);

    let mut log_alpha = vec![[f64::NEG_INFINITY; N_STATES]; len];
    for j in 0..N_STATES {
        log_alpha[0][j] = log_pi[j] + log_emit[0][j];
    }
    for t in 1..len {
        for j in 0..N_STATES {
            let terms: [f64; N_STATES] = std::array::from_fn(|i| log_alpha[t - 1][i] + log_a[i][j]);
            log_alpha[t][j] = log_sum_exp(&terms) + log_emit[t][j];
        }
    }

    let mut log_beta = vec![[0.0; N_STATES]; len];
    for t in (0..len - 1).rev() {
        for i in 0..N_STATES {
            let terms: [f64; N_STATES] =
                std::array::from_fn(|j| log_a[i][j] + log_emit[t + 1][j] + log_beta[t + 1][j]);
            log_beta[t][i] = log_sum_exp(&terms);
        }
    }

    let log_likelihood = log_sum_exp(&log_alpha[len - 1]);
    Ok(Lattice {
        log_alpha,
        log_beta,
        log_emit,
        log_likelihood,
    })
}

/// Log-likelihood of `obs` summed over all state paths, plus per-time state posteriors.
pub fn forward_backward(model: &HmmModel, obs: &[Observation]) -> Result<Posteriors, HmmError> {
    let lat = lattice(model, obs)?;
    let gamma = lat
        .log_alpha
        .iter()
        .zip(&lat.log_beta)
        .map(|(a, b)| {
            let joint: [f64; N_STATES] = std::array::from_fn(|i| a[i] + b[i]);
            let norm = log_sum_exp(&joint);
            joint.map(|v| (v - norm).exp())
        })
        .collect();
    Ok(Posteriors {
        log_likelihood: lat.log_likelihood,
        gamma,
    })
}

/// Most likely hidden path and its log joint probability.
pub fn viterbi(model: &HmmModel, obs: &[Observation]) -> Result<(Vec<usize>, f64), HmmError> {
    if obs.is_empty() {
        return Err(HmmError::EmptySequence);
    }
    let len = obs.len();
    let log_pi = model.log_initial();
    let log_a = model.log_transition();
    let log_emit = model.log_emissions(obs);

    let mut delta = vec![[f64::NEG_INFINITY; N_STATES]; len];
    let mut back = vec![[0usize; N_STATES]; len];
    for j in 0..N_STATES {
        delta[0][j] = log_pi[j] + log_emit[0][j];
    }
    for t in 1..len {
        for j in 0..N_STATES {
            // Ties go to the lower state index.
            let (best_i, best) = (0..N_STATES)
                .map(|i| (i, delta[t - 1][i] + log_a[i][j]))
                .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            delta[t][j] = best + log_emit[t][j];
            back[t][j] = best_i;
        }
    }
    let (mut state, log_joint) = (0..N_STATES)
        .map(|j| (j, delta[len - 1][j]))
        .fold((0, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    let mut path = vec![0; len];
    for t in (0..len).rev() {
        path[t] = state;
        state = back[t][state];
    }
    Ok((path, log_joint))
}

/// Viterbi log-joint divided by the number of observations.
pub fn score_sequence(model: &HmmModel, obs: &[Observation]) -> Result<f64, HmmError> {
    let (_, log_joint) = viterbi(model, obs)?;
    Ok(log_joint / obs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub iterations: usize,
    /// Lower bound on each covariance eigenvalue, enforced after every M-step.
    pub covariance_floor: f64,
    pub seed: u64,
    /// Stop early once the log-likelihood gain drops below this.
    pub tolerance: Option<f64>,
    /// Acceptance band multiplier stored in the fitted profile.
    pub band_width_k: f64,
    pub band_mode: BandMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            covariance_floor: 1e-6,
            seed: 0,
            tolerance: None,
            band_width_k: 1.0,
            band_mode: BandMode::TwoSided,
        }
    }
}

/// Per-iteration record produced while training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// Total log-likelihood of the training set under the initial model and after each iteration.
    pub log_likelihoods: Vec<f64>,
    /// The model after each iteration (the initialization first).
    pub models: Vec<HmmModel>,
}

fn check_training_set(samples: &[&[Observation]]) -> Result<(), HmmError> {
    if samples.len() < 2 {
        return Err(HmmError::TooFewSamples {
            required: 2,
            actual: samples.len(),
        });
    }
    if let Some((index, s)) = samples.iter().enumerate().find(|(_, s)| s.len() < 2) {
        return Err(HmmError::SequenceTooShort {
            index,
            length: s.len(),
        });
    }
    Ok(())
}

fn weighted_gaussian(points: &[([f64; 2], f64)], floor: f64) -> Option<GaussianParams> {
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut mean = [0.0; 2];
    for (x, w) in points {
        mean[0] += w * x[0];
        mean[1] += w * x[1];
    }
    mean = mean.map(|m| m / total);
    let mut cov = [[0.0; 2]; 2];
    for (x, w) in points {
        let d = [x[0] - mean[0], x[1] - mean[1]];
        cov[0][0] += w * d[0] * d[0];
        cov[0][1] += w * d[0] * d[1];
        cov[1][1] += w * d[1] * d[1];
    }
    cov[0][0] /= total;
    cov[0][1] /= total;
    cov[1][1] /= total;
    cov[1][0] = cov[0][1];
    Some(GaussianParams::new(mean, clip_eigenvalues(cov, floor)))
}

/// Raises every eigenvalue of a symmetric 2x2 matrix to at least `floor`.
///
/// This is the maximum-likelihood covariance under the constraint
/// `λ_min ≥ floor`, so the M-step stays an exact maximizer and EM keeps its
/// monotonicity.
fn clip_eigenvalues(cov: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let (a, b, d) = (cov[0][0], cov[0][1], cov[1][1]);
    let half_trace = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (hi, lo) = (half_trace + radius, half_trace - radius);
    if lo >= floor {
        return cov;
    }
    let (hi_c, lo_c) = (hi.max(floor), floor);
    if radius == 0.0 {
        return [[hi_c, 0.0], [0.0, hi_c]];
    }
    // Unit eigenvector of the larger eigenvalue.
    let (vx, vy) = if a >= d {
        (hi - d, b)
    } else {
        (b, hi - a)
    };
    let norm = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / norm, vy / norm);
    let off = (hi_c - lo_c) * ux * uy;
    [
        [lo_c + (hi_c - lo_c) * ux * ux, off],
        [off, lo_c + (hi_c - lo_c) * uy * uy],
    ]
}

/// Deterministic starting point for Baum-Welch.
///
/// The pooled observations are split at the median normalized duration, one
/// half per state; the transition matrix is uniform with seeded jitter.
pub fn initial_model(samples: &[&[Observation]], config: &TrainingConfig) -> Result<HmmModel, HmmError> {
    check_training_set(samples)?;
    let mut pooled: Vec<[f64; 2]> = samples.iter().flat_map(|s| s.iter().map(|o| o.to_array())).collect();
    pooled.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let half = pooled.len() / 2;
    let weighted = |xs: &[[f64; 2]]| xs.iter().map(|&x| (x, 1.0)).collect::<Vec<_>>();
    let low = weighted_gaussian(&weighted(&pooled[..half]), config.covariance_floor);
    let high = weighted_gaussian(&weighted(&pooled[half..]), config.covariance_floor);
    let (low, high) = match (low, high) {
        (Some(l), Some(h)) => (l, h),
        _ => unreachable!("training set has at least four observations"),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut transition = [[0.5; N_STATES]; N_STATES];
    for row in &mut transition {
        for p in row.iter_mut() {
            *p += rng.random_range(-0.05..=0.05);
        }
        let sum: f64 = row.iter().sum();
        for p in row.iter_mut() {
            *p /= sum;
        }
    }
    Ok(HmmModel {
        initial_probs: [0.5; N_STATES],
        transition,
        emissions: [low, high],
    })
}

struct Accumulators {
    initial: [f64; N_STATES],
    transition: [[f64; N_STATES]; N_STATES],
    points: [Vec<([f64; 2], f64)>; N_STATES],
    log_likelihood: f64,
}

#[allow(clippy::needless_range_loop)]
fn e_step(model: &HmmModel, samples: &[&[Observation]]) -> Result<Accumulators, HmmError> {
    let mut acc = Accumulators {
        initial: [0.0; N_STATES],
        transition: [[0.0; N_STATES]; N_STATES],
        points: [Vec::new(), Vec::new()],
        log_likelihood: 0.0,
    };
    let log_a = model.log_transition();
    for obs in samples {
        let lat = lattice(model, obs)?;
        let ll = lat.log_likelihood;
        acc.log_likelihood += ll;
        for t in 0..obs.len() {
            for i in 0..N_STATES {
                let g = (lat.log_alpha[t][i] + lat.log_beta[t][i] - ll).exp();
                if t == 0 {
                    acc.initial[i] += g;
                }
                acc.points[i].push((obs[t].to_array(), g));
                if t + 1 < obs.len() {
                    for j in 0..N_STATES {
                        let xi = lat.log_alpha[t][i]
                            + log_a[i][j]
                            + lat.log_emit[t + 1][j]
                            + lat.log_beta[t + 1][j]
                            - ll;
                        acc.transition[i][j] += xi.exp();
                    }
                }
            }
        }
    }
    Ok(acc)
}

fn m_step(prev: &HmmModel, acc: &Accumulators, floor: f64) -> HmmModel {
    let initial_total: f64 = acc.initial.iter().sum();
    let initial_probs = acc.initial.map(|v| v / initial_total);
    let mut transition = prev.transition;
    for (i, row) in acc.transition.iter().enumerate() {
        let total: f64 = row.iter().sum();
        // A state that is never left keeps its previous row.
        if total > 0.0 {
            transition[i] = row.map(|v| v / total);
        }
    }
    let emissions: [GaussianParams; N_STATES] = std::array::from_fn(|i| {
        weighted_gaussian(&acc.points[i], floor).unwrap_or(prev.emissions[i])
    });
    HmmModel {
        initial_probs,
        transition,
        emissions,
    }
}

/// Baum-Welch training that also records the model and log-likelihood per iteration.
pub fn baum_welch_trace(
    samples: &[&[Observation]],
    config: &TrainingConfig,
) -> Result<(HmmModel, TrainingTrace), HmmError> {
    let mut model = initial_model(samples, config)?;
    let mut trace = TrainingTrace {
        log_likelihoods: Vec::with_capacity(config.iterations + 1),
        models: vec![model.clone()],
    };
    let mut acc = e_step(&model, samples)?;
    trace.log_likelihoods.push(acc.log_likelihood);
    for _ in 0..config.iterations {
        let next = m_step(&model, &acc, config.covariance_floor);
        let next_acc = e_step(&next, samples)?;
        let gain = next_acc.log_likelihood - acc.log_likelihood;
        model = next;
        acc = next_acc;
        trace.log_likelihoods.push(acc.log_likelihood);
        trace.models.push(model.clone());
        if matches!(config.tolerance, Some(tol) if gain.abs() < tol) {
            break;
        }
    }
    Ok((model, trace))
}

pub fn baum_welch_train(samples: &[&[Observation]], config: &TrainingConfig) -> Result<HmmModel, HmmError> {
    baum_welch_trace(samples, config).map(|(model, _)| model)
}

/// Whether a score must lie within the band on both sides of the mean, or only above its lower edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    #[default]
    TwoSided,
    LowerBound,
}

/// A user's trained model together with the statistics of its training scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedProfile {
    pub model: HmmModel,
    pub score_mean: f64,
    pub score_std: f64,
    pub band_width_k: f64,
    #[serde(default)]
    pub band_mode: BandMode,
    /// Training log-likelihood after each iteration.
    #[serde(default)]
    pub training_log_likelihoods: Vec<f64>,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn fit_profile(samples: &[&[Observation]], config: &TrainingConfig) -> Result<TrainedProfile, HmmError> {
    if !(config.band_width_k > 0.0) {
        return Err(HmmError::InvalidBandWidth(config.band_width_k));
    }
    let (model, trace) = baum_welch_trace(samples, config)?;
    let scores = samples
        .iter()
        .map(|s| score_sequence(&model, s))
        .collect::<Result<Vec<_>, _>>()?;
    let (score_mean, score_std) = mean_std(&scores);
    Ok(TrainedProfile {
        model,
        score_mean,
        score_std,
        band_width_k: config.band_width_k,
        band_mode: config.band_mode,
        training_log_likelihoods: trace.log_likelihoods,
    })
}

/// Convenience wrapper over [`fit_profile`] for feature sequences.
pub fn fit_profile_from_features(
    samples: &[FeatureSequence],
    config: &TrainingConfig,
) -> Result<TrainedProfile, HmmError> {
    let views: Vec<&[Observation]> = samples.iter().map(|s| s.observations.as_slice()).collect();
    fit_profile(&views, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeVerdict {
    pub accepted: bool,
    pub score: f64,
    /// Distance from the mean score in standard deviations; infinite off-mean when the deviation is zero.
    pub band_distance: f64,
    /// Set when the profile's training scores have zero spread.
    pub under_trained: bool,
}

const EXACT_SCORE_TOLERANCE: f64 = 1e-9;

impl TrainedProfile {
    /// Signed offset from the mean in standard deviations, folded per the band mode.
    pub fn band_distance(&self, score: f64) -> f64 {
        let offset = match self.band_mode {
            BandMode::TwoSided => (score - self.score_mean).abs(),
            BandMode::LowerBound => (self.score_mean - score).max(0.0),
        };
        if self.score_std > 0.0 {
            offset / self.score_std
        } else if offset <= EXACT_SCORE_TOLERANCE {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn verify_with_k(&self, obs: &[Observation], k: f64) -> Result<KeystrokeVerdict, HmmError> {
        if !(k > 0.0) {
            return Err(HmmError::InvalidBandWidth(k));
        }
        let score = score_sequence(&self.model, obs)?;
        let band_distance = self.band_distance(score);
        let under_trained = self.score_std == 0.0;
        Ok(KeystrokeVerdict {
            accepted: band_distance <= k,
            score,
            band_distance,
            under_trained,
        })
    }
}

/// Band test with the profile's own `k`.
pub fn verify_keystroke(profile: &TrainedProfile, obs: &[Observation]) -> Result<KeystrokeVerdict, HmmError> {
    profile.verify_with_k(obs, profile.band_width_k)
}
