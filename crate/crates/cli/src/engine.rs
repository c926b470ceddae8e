//! Enrollment and verification over an encrypted profile directory.
//!
//! Both the command line and the HTTP service go through [`Engine`]. Each
//! user owns three files (keystroke samples, face images, trained HMM
//! profile) and all trained users share one face model, which is refit
//! whenever a user finishes or extends enrollment.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use keyface::face::{FaceImage, FaceModel, FACE_HEIGHT, FACE_WIDTH};
use keyface::fusion::{integrate, keystroke_score, Integrator, Modality, ModalityScore};
use keyface::hmm::{fit_profile_from_features, score_sequence, TrainedProfile};
use keyface::keystroke::KeystrokeTimings;
use keyface::store::{ArtifactKind, ProfileStore, UserProfileFile};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Enrollment progress; carries counts only, never biometric data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStatus {
    pub user_id: String,
    pub keystroke_samples: usize,
    pub face_images: usize,
    pub required_keystroke_samples: usize,
    pub required_face_images: usize,
    pub trained: bool,
    pub failed_verifications: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSummary {
    pub profile: TrainedProfile,
    /// Users in the refit shared face model.
    pub face_classes: usize,
    pub face_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrollOutcome {
    pub status: UserStatus,
    /// Set when this enrollment triggered training.
    pub training: Option<TrainingSummary>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnrollOptions {
    /// Accept data for a user who is already trained, and retrain.
    pub allow_append: bool,
    /// Fail unless the stored plus new data reach the minimum counts.
    pub require_complete: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Falls back to the configured integrator.
    pub integrator: Option<Integrator>,
    /// Falls back to the band width stored in the profile.
    pub band_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub decision: Decision,
    pub s_true: f64,
    pub s_false: f64,
    pub keystroke_score: f64,
    pub band_distance: f64,
    /// Mean distance of the frames to the claimed class; absent when no frame was given.
    pub face_distance: Option<f64>,
    pub keystroke: ModalityScore,
    pub face: ModalityScore,
    pub integrator: Integrator,
    pub band_width_k: f64,
}

impl VerifyOutcome {
    pub fn accepted(&self) -> bool {
        self.decision == Decision::Accept
    }
}

pub struct Engine {
    store: ProfileStore,
    config: Config,
    training_lock: Mutex<()>,
    failures: Mutex<HashMap<String, u64>>,
}

impl Engine {
    pub fn open(dir: impl Into<PathBuf>, passphrase: impl Into<String>, config: Config) -> Result<Self, CliError> {
        config.validate()?;
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        Ok(Self {
            store: ProfileStore::open(dir, passphrase)?,
            config,
            training_lock: Mutex::new(()),
            failures: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn store(&self) -> &ProfileStore {
        &self.store
    }

    fn stored_keystrokes(&self, user_id: &str) -> Result<Vec<KeystrokeTimings>, CliError> {
        Ok(match self.store.load(user_id, ArtifactKind::KeystrokeSamples)? {
            Some(f) => f.keystroke_samples()?,
            None => Vec::new(),
        })
    }

    fn stored_faces(&self, user_id: &str) -> Result<Vec<FaceImage>, CliError> {
        Ok(match self.store.load(user_id, ArtifactKind::FaceImages)? {
            Some(f) => f.face_images()?,
            None => Vec::new(),
        })
    }

    fn is_trained(&self, user_id: &str) -> Result<bool, CliError> {
        Ok(self.store.exists(user_id, ArtifactKind::HmmProfile)?)
    }

    /// Counts for any user id; unknown users report zeros.
    pub fn status(&self, user_id: &str) -> Result<UserStatus, CliError> {
        Ok(UserStatus {
            user_id: user_id.to_string(),
            keystroke_samples: self.stored_keystrokes(user_id)?.len(),
            face_images: self.stored_faces(user_id)?.len(),
            required_keystroke_samples: self.config.enrollment.min_keystroke_samples,
            required_face_images: self.config.enrollment.min_face_images,
            trained: self.is_trained(user_id)?,
            failed_verifications: self.failed_verifications(user_id),
        })
    }

    pub fn failed_verifications(&self, user_id: &str) -> u64 {
        let failures = self.failures.lock().unwrap_or_else(|e| e.into_inner());
        failures.get(user_id).copied().unwrap_or(0)
    }

    /// Appends samples to the user's store and trains once both minimum
    /// counts are reached.
    pub fn enroll(
        &self,
        user_id: &str,
        keystrokes: &[KeystrokeTimings],
        faces: &[FaceImage],
        options: EnrollOptions,
    ) -> Result<EnrollOutcome, CliError> {
        keyface::store::sanitize_user_id(user_id)?;
        check_faces(faces)?;
        for k in keystrokes {
            k.normalize()?;
        }

        let lock = self.store.user_lock(user_id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());

        let trained = self.is_trained(user_id)?;
        if trained && !options.allow_append {
            return Err(CliError::AlreadyTrained(user_id.to_string()));
        }
        let mut all_keys = self.stored_keystrokes(user_id)?;
        all_keys.extend_from_slice(keystrokes);
        check_key_counts(&all_keys)?;
        let mut all_faces = self.stored_faces(user_id)?;
        all_faces.extend_from_slice(faces);

        let min = &self.config.enrollment;
        let ready = all_keys.len() >= min.min_keystroke_samples && all_faces.len() >= min.min_face_images;
        if options.require_complete && !ready {
            if all_keys.len() < min.min_keystroke_samples {
                return Err(CliError::TooFewSamples {
                    what: "samples",
                    required: min.min_keystroke_samples,
                    actual: all_keys.len(),
                });
            }
            return Err(CliError::TooFewSamples {
                what: "face images",
                required: min.min_face_images,
                actual: all_faces.len(),
            });
        }

        let training = if ready {
            // Training is serialized so every refit sees every finished user.
            let _training = self.training_lock.lock().unwrap_or_else(|e| e.into_inner());
            let features = all_keys.iter().map(KeystrokeTimings::normalize).collect::<Result<Vec<_>, _>>()?;
            let profile = fit_profile_from_features(&features, &self.config.training_config())?;
            let model = self.refit_face_model(user_id, &all_faces)?;
            self.write_samples(user_id, &all_keys, &all_faces)?;
            self.store.save_face_model(&model)?;
            self.store.save(ArtifactKind::HmmProfile, &UserProfileFile::hmm_profile(user_id, &profile))?;
            Some(TrainingSummary {
                profile,
                face_classes: model.class_labels.len(),
                face_dim: model.fisher_dim(),
            })
        } else {
            self.write_samples(user_id, &all_keys, &all_faces)?;
            None
        };
        log::info!(
            "enrolled {user_id:?}: {} keystroke samples, {} face images, trained {}",
            all_keys.len(),
            all_faces.len(),
            training.is_some() || trained
        );
        Ok(EnrollOutcome {
            status: self.status(user_id)?,
            training,
        })
    }

    fn write_samples(&self, user_id: &str, keys: &[KeystrokeTimings], faces: &[FaceImage]) -> Result<(), CliError> {
        self.store.save(ArtifactKind::KeystrokeSamples, &UserProfileFile::keystrokes(user_id, keys))?;
        self.store.save(ArtifactKind::FaceImages, &UserProfileFile::faces(user_id, faces))?;
        Ok(())
    }

    fn refit_face_model(&self, user_id: &str, faces: &[FaceImage]) -> Result<FaceModel, CliError> {
        let mut labeled = Vec::new();
        for other in self.store.list_users()? {
            if other != user_id && self.is_trained(&other)? {
                labeled.extend(self.stored_faces(&other)?.into_iter().map(|im| (other.clone(), im)));
            }
        }
        labeled.extend(faces.iter().map(|im| (user_id.to_string(), im.clone())));
        Ok(FaceModel::fit(&labeled, &self.config.face_config())?)
    }

    /// Scores one attempt against a trained user. Nothing is written.
    pub fn verify(
        &self,
        user_id: &str,
        keystrokes: &KeystrokeTimings,
        faces: &[FaceImage],
        options: VerifyOptions,
    ) -> Result<VerifyOutcome, CliError> {
        keyface::store::sanitize_user_id(user_id)?;
        let Some(file) = self.store.load(user_id, ArtifactKind::HmmProfile)? else {
            return Err(if self.store.exists(user_id, ArtifactKind::KeystrokeSamples)? {
                CliError::NotTrained(user_id.to_string())
            } else {
                CliError::UnknownUser(user_id.to_string())
            });
        };
        let profile = file.trained_profile()?;
        if let Some(first) = self.stored_keystrokes(user_id)?.first() {
            if first.durations.len() != keystrokes.durations.len() {
                return Err(CliError::Invalid(format!(
                    "expected {} key events, got {}",
                    first.durations.len(),
                    keystrokes.durations.len()
                )));
            }
        }
        check_faces(faces)?;
        if faces.is_empty() && self.config.enrollment.require_face {
            return Err(CliError::Invalid("at least one face frame is required".into()));
        }

        let k = options.band_k.unwrap_or(profile.band_width_k);
        if !(k > 0.0) {
            return Err(CliError::Invalid(format!("band width must be positive, got {k}")));
        }
        let integrator = options.integrator.unwrap_or(self.config.fusion.integrator);
        let features = keystrokes.normalize()?;
        let score = score_sequence(&profile.model, &features.observations)?;
        let band_distance = profile.band_distance(score);
        let key = keystroke_score(band_distance, k);

        let (face, face_distance) = if faces.is_empty() {
            (ModalityScore::new(0.5, 0.5, Modality::Face)?, None)
        } else {
            let model = self.store.load_face_model()?.ok_or_else(|| CliError::NotTrained(user_id.to_string()))?;
            let mut total = 0.0;
            for image in faces {
                total += model.distance_to(image, user_id)?;
            }
            let d = total / faces.len() as f64;
            (model.calibrate_distance(d), Some(d))
        };

        let fused = integrate(&key, &face, integrator);
        let decision = if fused.accepted {
            Decision::Accept
        } else {
            let mut failures = self.failures.lock().unwrap_or_else(|e| e.into_inner());
            *failures.entry(user_id.to_string()).or_default() += 1;
            Decision::Reject
        };
        Ok(VerifyOutcome {
            decision,
            s_true: fused.s_true,
            s_false: fused.s_false,
            keystroke_score: score,
            band_distance,
            face_distance,
            keystroke: key,
            face,
            integrator,
            band_width_k: k,
        })
    }
}

fn check_faces(faces: &[FaceImage]) -> Result<(), CliError> {
    for (i, im) in faces.iter().enumerate() {
        if im.width() != FACE_WIDTH || im.height() != FACE_HEIGHT {
            return Err(CliError::Invalid(format!(
                "face frame {i} is {}x{}, expected {FACE_WIDTH}x{FACE_HEIGHT}",
                im.width(),
                im.height()
            )));
        }
    }
    Ok(())
}

fn check_key_counts(samples: &[KeystrokeTimings]) -> Result<(), CliError> {
    if let Some(first) = samples.first() {
        let expected = first.durations.len();
        if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.durations.len() != expected) {
            return Err(CliError::Invalid(format!(
                "sample {} has {} key events, earlier samples have {expected}",
                i + 1,
                s.durations.len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use keyface::evaluation::{generate_population, PopulationConfig};

    fn engine(dir: &std::path::Path) -> Engine {
        Engine::open(dir, "pw", Config::default()).unwrap()
    }

    fn population(n_users: usize) -> Vec<keyface::evaluation::UserDataset> {
        let config = PopulationConfig {
            n_users,
            samples_per_user: 10,
            probes_per_user: 2,
            ..Default::default()
        };
        generate_population(&config).unwrap().1
    }

    #[test]
    fn unknown_user_has_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        let s = engine(dir.path()).status("nobody").unwrap();
        assert_eq!((s.keystroke_samples, s.face_images, s.trained), (0, 0, false));
    }

    #[test]
    fn enrollment_trains_at_the_minimums() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path());
        let data = &population(2)[0];
        let first = e.enroll("u", &data.enroll_keystrokes[..9], &data.enroll_faces, EnrollOptions::default()).unwrap();
        assert!(first.training.is_none());
        assert_eq!((first.status.keystroke_samples, first.status.face_images), (9, 20));
        let second = e.enroll("u", &data.enroll_keystrokes[9..], &[], EnrollOptions::default()).unwrap();
        assert!(second.status.trained);
        assert_eq!(second.training.unwrap().face_classes, 1);
        assert!(matches!(
            e.enroll("u", &data.enroll_keystrokes[..1], &[], EnrollOptions::default()),
            Err(CliError::AlreadyTrained(_))
        ));
        let appended = EnrollOptions { allow_append: true, ..Default::default() };
        assert_eq!(e.enroll("u", &data.enroll_keystrokes[..1], &[], appended).unwrap().status.keystroke_samples, 11);
    }

    #[test]
    fn required_counts_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path());
        let data = &population(2)[0];
        let strict = EnrollOptions { require_complete: true, ..Default::default() };
        let err = e.enroll("u", &data.enroll_keystrokes[..1], &data.enroll_faces, strict).unwrap_err();
        assert!(err.to_string().contains("minimum 10 samples"), "{err}");
        let err = e.enroll("u", &data.enroll_keystrokes, &data.enroll_faces[..3], strict).unwrap_err();
        assert!(err.to_string().contains("minimum 20 face images"), "{err}");
        assert_eq!(e.status("u").unwrap().keystroke_samples, 0);
    }

    #[test]
    fn verification_is_deterministic_and_counts_failures() {
        let dir = tempfile::tempdir().unwrap();
        let e = engine(dir.path());
        let data = population(3);
        for d in &data {
            e.enroll(&d.user_id, &d.enroll_keystrokes, &d.enroll_faces, EnrollOptions::default()).unwrap();
        }
        let own = &data[0];
        let a = e.verify(&own.user_id, &own.enroll_keystrokes[0], &own.enroll_faces[..1], VerifyOptions::default()).unwrap();
        let b = e.verify(&own.user_id, &own.enroll_keystrokes[0], &own.enroll_faces[..1], VerifyOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.accepted());

        let imposter = &data[1];
        let r = e
            .verify(&own.user_id, &imposter.probe_keystrokes[0], &imposter.probe_faces[..1], VerifyOptions::default())
            .unwrap();
        assert_eq!(r.decision, Decision::Reject);
        assert_eq!(e.status(&own.user_id).unwrap().failed_verifications, 1);

        assert!(matches!(
            e.verify("ghost", &own.enroll_keystrokes[0], &own.enroll_faces[..1], VerifyOptions::default()),
            Err(CliError::UnknownUser(_))
        ));
        assert!(matches!(
            e.verify(&own.user_id, &own.enroll_keystrokes[0], &[], VerifyOptions::default()),
            Err(CliError::Invalid(_))
        ));
    }
}
