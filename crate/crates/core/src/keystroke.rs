//! Keystroke timing features.
//!
//! A [`KeystrokeSample`] is one typed entry of a fixed password: a press and a
//! release timestamp (integer milliseconds) per key. From it we derive
//!
//! * durations: `release[t] - press[t]`, always positive;
//! * latencies: `press[t] - release[t - 1]`, negative when keys overlap;
//! * a [`FeatureSequence`]: both divided by the total entry time
//!   `release[last] - press[first]`, which removes overall typing speed.
//!
//! The raw timings are also persisted in a line-oriented text format, one
//! sample per line, `duration,latency` pairs separated by `;` and the final
//! key carrying its duration only:
//!
//! ```text
//! 50,30;60,-10;70
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeystrokeError {
    #[error("a sample needs at least 2 key events, got {0}")]
    TooFewEvents(usize),
    #[error("expected {expected} key events for the password, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("key event {index} is released at {release} ms, not after its press at {press} ms")]
    NonPositiveDuration { index: usize, press: u64, release: u64 },
    #[error("key event {index} is pressed before the previous key")]
    Unsorted { index: usize },
    #[error("total entry time must be positive, got {0} ms")]
    NonPositiveTotal(i64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A single key press/release pair in milliseconds on a monotonic clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawKeyEvent {
    pub key_label: String,
    pub press_time: u64,
    pub release_time: u64,
}

impl RawKeyEvent {
    pub fn new(key_label: impl Into<String>, press_time: u64, release_time: u64) -> Self {
        Self {
            key_label: key_label.into(),
            press_time,
            release_time,
        }
    }
}

/// One entry of the fixed password.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeystrokeSample {
    events: Vec<RawKeyEvent>,
    expected_text: String,
}

impl KeystrokeSample {
    /// Validates the events against the password they transcribe.
    pub fn new(events: Vec<RawKeyEvent>, expected_text: impl Into<String>) -> Result<Self, KeystrokeError> {
        let expected_text = expected_text.into();
        let expected = expected_text.chars().count();
        if events.len() != expected {
            return Err(KeystrokeError::LengthMismatch {
                expected,
                actual: events.len(),
            });
        }
        validate_events(&events)?;
        Ok(Self {
            events,
            expected_text,
        })
    }

    /// Builds a sample whose transcription is the concatenation of the key labels.
    pub fn from_events(events: Vec<RawKeyEvent>) -> Result<Self, KeystrokeError> {
        let text: String = events.iter().map(|e| e.key_label.as_str()).collect();
        validate_events(&events)?;
        Ok(Self {
            events,
            expected_text: text,
        })
    }

    pub fn events(&self) -> &[RawKeyEvent] {
        &self.events
    }

    pub fn expected_text(&self) -> &str {
        &self.expected_text
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Elapsed time from the first press to the last release.
    pub fn total_time_ms(&self) -> i64 {
        let first = self.events[0].press_time as i64;
        let last = self.events[self.events.len() - 1].release_time as i64;
        last - first
    }

    pub fn timings(&self) -> KeystrokeTimings {
        KeystrokeTimings {
            durations: compute_durations(self),
            latencies: compute_latencies(self),
        }
    }
}

fn validate_events(events: &[RawKeyEvent]) -> Result<(), KeystrokeError> {
    if events.len() < 2 {
        return Err(KeystrokeError::TooFewEvents(events.len()));
    }
    for (index, event) in events.iter().enumerate() {
        if event.release_time <= event.press_time {
            return Err(KeystrokeError::NonPositiveDuration {
                index,
                press: event.press_time,
                release: event.release_time,
            });
        }
        if index > 0 && event.press_time < events[index - 1].press_time {
            return Err(KeystrokeError::Unsorted { index });
        }
    }
    Ok(())
}

/// Per-key duration in milliseconds.
pub fn compute_durations(sample: &KeystrokeSample) -> Vec<u64> {
    sample
        .events
        .iter()
        .map(|e| e.release_time - e.press_time)
        .collect()
}

/// Gap between each release and the next press; one fewer than the number of keys.
pub fn compute_latencies(sample: &KeystrokeSample) -> Vec<i64> {
    sample
        .events
        .windows(2)
        .map(|pair| pair[1].press_time as i64 - pair[0].release_time as i64)
        .collect()
}

/// Raw durations and latencies of one sample, the unit of the text format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeystrokeTimings {
    pub durations: Vec<u64>,
    pub latencies: Vec<i64>,
}

impl KeystrokeTimings {
    /// Checks the shape invariants shared with [`KeystrokeSample`].
    pub fn new(durations: Vec<u64>, latencies: Vec<i64>) -> Result<Self, KeystrokeError> {
        if durations.len() < 2 {
            return Err(KeystrokeError::TooFewEvents(durations.len()));
        }
        if latencies.len() + 1 != durations.len() {
            return Err(KeystrokeError::LengthMismatch {
                expected: durations.len() - 1,
                actual: latencies.len(),
            });
        }
        if let Some(index) = durations.iter().position(|&d| d == 0) {
            return Err(KeystrokeError::NonPositiveDuration {
                index,
                press: 0,
                release: 0,
            });
        }
        Ok(Self {
            durations,
            latencies,
        })
    }

    /// Sum of all durations and latencies, equal to the sample's total entry time.
    pub fn total_time_ms(&self) -> i64 {
        self.durations.iter().map(|&d| d as i64).sum::<i64>() + self.latencies.iter().sum::<i64>()
    }

    /// Rebuilds key events starting at `start_ms`. Labels are set to `?`.
    ///
    /// Fails when an overlapping key would be pressed before its predecessor
    /// or before `start_ms`.
    pub fn to_sample(&self, start_ms: u64) -> Result<KeystrokeSample, KeystrokeError> {
        let mut events = Vec::with_capacity(self.durations.len());
        let mut press = start_ms as i64;
        for (index, &duration) in self.durations.iter().enumerate() {
            if index > 0 {
                press = events_last_release(&events) + self.latencies[index - 1];
            }
            if press < 0 {
                return Err(KeystrokeError::Unsorted { index });
            }
            let press_u = press as u64;
            events.push(RawKeyEvent::new("?", press_u, press_u + duration));
        }
        KeystrokeSample::from_events(events)
    }

    pub fn normalize(&self) -> Result<FeatureSequence, KeystrokeError> {
        let total = self.total_time_ms();
        if total <= 0 {
            return Err(KeystrokeError::NonPositiveTotal(total));
        }
        let scale = total as f64;
        let observations = self
            .durations
            .iter()
            .zip(&self.latencies)
            .map(|(&d, &l)| Observation::new(d as f64 / scale, l as f64 / scale))
            .collect();
        let last = *self.durations.last().expect("at least two durations");
        Ok(FeatureSequence {
            observations,
            final_duration: last as f64 / scale,
            total_time_ms: total,
        })
    }
}

fn events_last_release(events: &[RawKeyEvent]) -> i64 {
    events.last().map(|e| e.release_time as i64).unwrap_or(0)
}

/// A (normalized duration, normalized latency) pair emitted to the HMM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub duration: f64,
    pub latency: f64,
}

impl Observation {
    pub const fn new(duration: f64, latency: f64) -> Self {
        Self { duration, latency }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.duration, self.latency]
    }
}

impl From<[f64; 2]> for Observation {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Speed-normalized features of one sample.
///
/// Each observation pairs the duration of key `t` with the latency that
/// follows it, so an `n`-key sample yields `n - 1` observations. The final
/// key's normalized duration is kept separately and is not emitted to the
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub observations: Vec<Observation>,
    pub final_duration: f64,
    pub total_time_ms: i64,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Sum of every normalized duration (including the final one) and latency; 1 up to rounding.
    pub fn normalized_total(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| o.duration + o.latency)
            .sum::<f64>()
            + self.final_duration
    }
}

/// Normalizes a sample by its total entry time.
pub fn normalize(sample: &KeystrokeSample) -> Result<FeatureSequence, KeystrokeError> {
    let total = sample.total_time_ms();
    if total <= 0 {
        return Err(KeystrokeError::NonPositiveTotal(total));
    }
    sample.timings().normalize()
}

impl fmt::Display for KeystrokeTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, duration) in self.durations.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{duration}")?;
            if let Some(latency) = self.latencies.get(i) {
                write!(f, ",{latency}")?;
            }
        }
        Ok(())
    }
}

/// Renders samples in the semicolon-delimited text format, one line each.
pub fn serialize_samples(samples: &[KeystrokeSample]) -> String {
    serialize_timings(samples.iter().map(KeystrokeSample::timings))
}

pub fn serialize_timings<I>(timings: I) -> String
where
    I: IntoIterator<Item = KeystrokeTimings>,
{
    let mut out = String::new();
    for t in timings {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

/// Parses the text format. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_samples(text: &str) -> Result<Vec<KeystrokeTimings>, KeystrokeError> {
    let mut out = Vec::new();
    for (index, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(line, index + 1)?);
    }
    Ok(out)
}

fn parse_line(line: &str, line_no: usize) -> Result<KeystrokeTimings, KeystrokeError> {
    let err = |message: String| KeystrokeError::Parse {
        line: line_no,
        message,
    };
    let vectors: Vec<&str> = line.split(';').collect();
    let mut durations = Vec::with_capacity(vectors.len());
    let mut latencies = Vec::with_capacity(vectors.len().saturating_sub(1));
    for (i, vector) in vectors.iter().enumerate() {
        let fields: Vec<&str> = vector.split(',').map(str::trim).collect();
        let is_last = i + 1 == vectors.len();
        let want = if is_last { 1 } else { 2 };
        if fields.len() != want {
            return Err(err(format!(
                "key {} has {} fields, expected {}",
                i + 1,
                fields.len(),
                want
            )));
        }
        let duration: u64 = fields[0]
            .parse()
            .map_err(|_| err(format!("invalid duration {:?}", fields[0])))?;
        durations.push(duration);
        if !is_last {
            let latency: i64 = fields[1]
                .parse()
                .map_err(|_| err(format!("invalid latency {:?}", fields[1])))?;
            latencies.push(latency);
        }
    }
    KeystrokeTimings::new(durations, latencies).map_err(|e| err(e.to_string()))
}
