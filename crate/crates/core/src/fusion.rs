//! Score-level fusion of the keystroke and face modalities.
//!
//! Each modality reports a pair of calibrated scores: how strongly it
//! supports the claimed identity (`p_true`) and how strongly it supports an
//! imposter (`p_false`). An [`Integrator`] combines the two `p_true` values
//! into `s_true` and the two `p_false` values into `s_false`, and the claim
//! is accepted iff `s_true > s_false`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("unknown integrator {0:?}; expected product, sum, min or max")]
    UnknownIntegrator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Keystroke,
    Face,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityScore {
    pub p_true: f64,
    pub p_false: f64,
    pub modality: Modality,
}

impl ModalityScore {
    pub fn new(p_true: f64, p_false: f64, modality: Modality) -> Result<Self, FusionError> {
        for (name, value) in [("p_true", p_true), ("p_false", p_false)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(FusionError::OutOfRange { name, value });
            }
        }
        Ok(Self {
            p_true,
            p_false,
            modality,
        })
    }

    /// `p_true = exp(-max(0, excess))`, `p_false = 1 - p_true`.
    ///
    /// `excess` is how far the raw score lies beyond the modality's
    /// acceptance edge, in units of its spread.
    pub fn from_excess(excess: f64, modality: Modality) -> Self {
        let p_true = if excess.is_nan() {
            0.0
        } else {
            (-excess.max(0.0)).exp()
        };
        Self {
            p_true,
            p_false: 1.0 - p_true,
            modality,
        }
    }

    /// The modality's decision on its own.
    pub fn accepts(&self) -> bool {
        self.p_true > self.p_false
    }
}

/// Keystroke calibration: a band distance `z` (in standard deviations) against a band of half-width `k`.
pub fn keystroke_score(band_distance: f64, k: f64) -> ModalityScore {
    ModalityScore::from_excess(band_distance - k, Modality::Keystroke)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Product,
    Sum,
    Min,
    Max,
}

impl Integrator {
    pub const ALL: [Integrator; 4] = [
        Integrator::Product,
        Integrator::Sum,
        Integrator::Min,
        Integrator::Max,
    ];

    pub fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            Integrator::Product => a * b,
            Integrator::Sum => a + b,
            Integrator::Min => a.min(b),
            Integrator::Max => a.max(b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Integrator::Product => "product",
            Integrator::Sum => "sum",
            Integrator::Min => "min",
            Integrator::Max => "max",
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Integrator {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Integrator::ALL
            .into_iter()
            .find(|i| i.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FusionError::UnknownIntegrator(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedDecision {
    pub s_true: f64,
    pub s_false: f64,
    pub integrator: Integrator,
    pub accepted: bool,
}

impl FusedDecision {
    /// `s_true - s_false`; positive exactly when accepted.
    pub fn margin(&self) -> f64 {
        self.s_true - self.s_false
    }
}

/// Ties reject.
pub fn integrate(key: &ModalityScore, face: &ModalityScore, integrator: Integrator) -> FusedDecision {
    let s_true = integrator.combine(key.p_true, face.p_true);
    let s_false = integrator.combine(key.p_false, face.p_false);
    FusedDecision {
        s_true,
        s_false,
        integrator,
        accepted: s_true > s_false,
    }
}
