//! TOML configuration.
//!
//! Every key is optional; a missing file section falls back to the defaults
//! shown below.
//!
//! ```toml
//! [server]
//! host = "127.0.0.1"
//! port = 8080
//! max_span_ms = 60000     # submissions spanning longer than this are stale
//! allow_append = false    # accept enrollment data for already-trained users
//!
//! [enrollment]
//! min_keystroke_samples = 10
//! min_face_images = 20
//! require_face = true     # verification needs at least one face frame
//!
//! [training]
//! iterations = 20
//! covariance_floor = 1e-6
//! seed = 0
//! band_width_k = 1.0
//!
//! [face]
//! variance_retained = 0.95
//! min_images_per_class = 4
//! # pca_components = 40
//!
//! [fusion]
//! integrator = "product"
//! ```

use std::path::Path;

use keyface::face::FaceConfig;
use keyface::fusion::Integrator;
use keyface::hmm::TrainingConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub enrollment: EnrollmentConfig,
    pub training: TrainingSection,
    pub face: FaceSection,
    pub fusion: FusionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub max_span_ms: u64,
    pub allow_append: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            max_span_ms: 60_000,
            allow_append: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollmentConfig {
    pub min_keystroke_samples: usize,
    pub min_face_images: usize,
    pub require_face: bool,
}

impl Default for EnrollmentConfig {
    fn default() -> Self {
        Self {
            min_keystroke_samples: 10,
            min_face_images: 20,
            require_face: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub iterations: usize,
    pub covariance_floor: f64,
    pub seed: u64,
    pub band_width_k: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            iterations: t.iterations,
            covariance_floor: t.covariance_floor,
            seed: t.seed,
            band_width_k: t.band_width_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceSection {
    pub pca_components: Option<usize>,
    pub variance_retained: f64,
    pub min_images_per_class: usize,
}

impl Default for FaceSection {
    fn default() -> Self {
        let f = FaceConfig::default();
        Self {
            pca_components: f.pca_components,
            variance_retained: f.variance_retained,
            min_images_per_class: f.min_images_per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub integrator: Integrator,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            integrator: Integrator::Product,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.enrollment.min_keystroke_samples < 2 {
            return bad("enrollment.min_keystroke_samples must be at least 2");
        }
        if self.enrollment.min_face_images < self.face.min_images_per_class.max(2) {
            return bad("enrollment.min_face_images must be at least face.min_images_per_class");
        }
        if !(self.training.band_width_k > 0.0) {
            return bad("training.band_width_k must be positive");
        }
        if !(self.training.covariance_floor > 0.0) {
            return bad("training.covariance_floor must be positive");
        }
        if !(self.face.variance_retained > 0.0 && self.face.variance_retained <= 1.0) {
            return bad("face.variance_retained must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            iterations: self.training.iterations,
            covariance_floor: self.training.covariance_floor,
            seed: self.training.seed,
            band_width_k: self.training.band_width_k,
            ..TrainingConfig::default()
        }
    }

    pub fn face_config(&self) -> FaceConfig {
        FaceConfig {
            pca_components: self.face.pca_components,
            variance_retained: self.face.variance_retained,
            min_images_per_class: self.face.min_images_per_class,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses_to_defaults() {
        let doc = include_str!("config.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(Config::from_toml(&example).unwrap(), Config::default());
    }

    #[test]
    fn guide_example_parses_to_defaults() {
        let guide = include_str!("../../../book/src/service.md");
        let example: String = guide
            .split("```toml\n")
            .nth(1)
            .and_then(|rest| rest.split("```").next())
            .unwrap()
            .to_string();
        assert_eq!(Config::from_toml(&example).unwrap(), Config::default());
    }

    #[test]
    fn partial_files_and_errors() {
        let c = Config::from_toml("[server]\nport = 9000\n[fusion]\nintegrator = \"min\"\n").unwrap();
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.fusion.integrator, Integrator::Min);
        assert_eq!(c.enrollment.min_keystroke_samples, 10);
        assert!(Config::from_toml("[server]\nprot = 1\n").is_err());
        assert!(Config::from_toml("[enrollment]\nmin_face_images = 2\n").is_err());
        assert!(Config::from_toml("[fusion]\nintegrator = \"mean\"\n").is_err());
    }
}
