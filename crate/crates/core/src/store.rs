//! Encrypted per-user profile files.
//!
//! Every file has the same bit-exact layout:
//!
//! ```text
//! "KBFP" | version (0x01) | salt (16 bytes) | nonce (12 bytes) | AES-256-GCM ciphertext || tag
//! ```
//!
//! The key is `scrypt(passphrase, salt, N = 2^15, r = 8, p = 1)` stretched to
//! 32 bytes. No associated data is authenticated beyond the ciphertext itself.
//! The plaintext is a list of sections, each written as a 4-byte big-endian
//! length, a tag byte and the section bytes.
//!
//! A wrong passphrase and a tampered file both surface as
//! [`StoreError::Authentication`]; the two cases are indistinguishable.
//!
//! ```
//! use keyface::store::{open_file, seal_file, Section, SectionTag, UserProfileFile};
//!
//! let file = UserProfileFile::new("alice", vec![Section::new(SectionTag::KEYSTROKE_SAMPLES, b"50,30;70".to_vec())]);
//! let sealed = seal_file(&file, "correct horse").unwrap();
//! assert_eq!(&sealed[..4], b"KBFP");
//! assert_eq!(open_file(&sealed, "correct horse").unwrap(), file);
//! assert!(open_file(&sealed, "wrong").is_err());
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use rand::rngs::OsRng;
use rand::TryRngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::face::{parse_pgm, FaceError, FaceImage, FaceModel};
use crate::hmm::{BandMode, HmmModel, TrainedProfile};
use crate::keystroke::{parse_samples, serialize_timings, KeystrokeError, KeystrokeTimings};

pub const MAGIC: [u8; 4] = *b"KBFP";
pub const FORMAT_VERSION: u8 = 0x01;
pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const KEY_LEN: usize = 32;
pub const HEADER_LEN: usize = MAGIC.len() + 1 + SALT_LEN + NONCE_LEN;

const SCRYPT_LOG_N: u8 = 15;
const SCRYPT_R: u32 = 8;
const SCRYPT_P: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error("not a profile file: {0}")]
    Format(&'static str),
    #[error("unsupported profile format version {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("authentication failed: wrong passphrase or corrupted file")]
    Authentication,
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("invalid user id {0:?}")]
    InvalidUserId(String),
    #[error("operating system random source failed: {0}")]
    Random(String),
    #[error("key derivation failed: {0}")]
    KeyDerivation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Keystroke(#[from] KeystrokeError),
    #[error(transparent)]
    Face(#[from] FaceError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identifies what a payload section holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SectionTag(pub u8);

impl SectionTag {
    pub const USER_ID: SectionTag = SectionTag(0x00);
    /// Keystroke samples in the semicolon text format.
    pub const KEYSTROKE_SAMPLES: SectionTag = SectionTag(0x01);
    /// HMM parameters as JSON.
    pub const HMM_MODEL: SectionTag = SectionTag(0x02);
    /// Binary face model.
    pub const FACE_MODEL: SectionTag = SectionTag(0x03);
    /// Score statistics of a trained keystroke profile, as JSON.
    pub const CALIBRATION: SectionTag = SectionTag(0x04);
    /// One binary PGM enrollment image.
    pub const FACE_IMAGE: SectionTag = SectionTag(0x05);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub tag: SectionTag,
    pub data: Vec<u8>,
}

impl Section {
    pub fn new(tag: SectionTag, data: Vec<u8>) -> Self {
        Self { tag, data }
    }
}

/// Serializes sections as `len (u32 BE) | tag | bytes`, in order.
pub fn encode_sections(sections: &[Section]) -> Vec<u8> {
    let mut out = Vec::with_capacity(sections.iter().map(|s| s.data.len() + 5).sum());
    for s in sections {
        out.extend_from_slice(&(s.data.len() as u32).to_be_bytes());
        out.push(s.tag.0);
        out.extend_from_slice(&s.data);
    }
    out
}

pub fn decode_sections(mut bytes: &[u8]) -> Result<Vec<Section>, StoreError> {
    let mut sections = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 5 {
            return Err(StoreError::Payload("truncated section header".into()));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        let tag = SectionTag(bytes[4]);
        let rest = &bytes[5..];
        if rest.len() < len {
            return Err(StoreError::Payload(format!(
                "section {:#04x} declares {len} bytes, {} remain",
                tag.0,
                rest.len()
            )));
        }
        sections.push(Section::new(tag, rest[..len].to_vec()));
        bytes = &rest[len..];
    }
    Ok(sections)
}

/// The decrypted content of one profile file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserProfileFile {
    pub user_id: String,
    /// Everything except the user id section, in file order.
    pub sections: Vec<Section>,
}

impl UserProfileFile {
    pub fn new(user_id: impl Into<String>, sections: Vec<Section>) -> Self {
        Self {
            user_id: user_id.into(),
            sections,
        }
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut all = Vec::with_capacity(self.sections.len() + 1);
        all.push(Section::new(SectionTag::USER_ID, self.user_id.as_bytes().to_vec()));
        all.extend(self.sections.iter().cloned());
        encode_sections(&all)
    }

    /// The first section must carry the user id.
    pub fn from_payload(payload: &[u8]) -> Result<Self, StoreError> {
        let mut sections = decode_sections(payload)?;
        if sections.first().map(|s| s.tag) != Some(SectionTag::USER_ID) {
            return Err(StoreError::Payload("missing user id section".into()));
        }
        let id = sections.remove(0);
        let user_id =
            String::from_utf8(id.data).map_err(|_| StoreError::Payload("user id is not UTF-8".into()))?;
        Ok(Self { user_id, sections })
    }

    pub fn section(&self, tag: SectionTag) -> Option<&[u8]> {
        self.sections.iter().find(|s| s.tag == tag).map(|s| s.data.as_slice())
    }

    fn required(&self, tag: SectionTag) -> Result<&[u8], StoreError> {
        self.section(tag)
            .ok_or_else(|| StoreError::Payload(format!("missing section {:#04x}", tag.0)))
    }

    pub fn keystrokes(user_id: impl Into<String>, samples: &[KeystrokeTimings]) -> Self {
        let text = serialize_timings(samples.iter().cloned());
        Self::new(user_id, vec![Section::new(SectionTag::KEYSTROKE_SAMPLES, text.into_bytes())])
    }

    pub fn keystroke_samples(&self) -> Result<Vec<KeystrokeTimings>, StoreError> {
        let text = std::str::from_utf8(self.required(SectionTag::KEYSTROKE_SAMPLES)?)
            .map_err(|_| StoreError::Payload("keystroke samples are not UTF-8".into()))?;
        Ok(parse_samples(text)?)
    }

    /// Splits a trained profile into its model and calibration sections.
    pub fn hmm_profile(user_id: impl Into<String>, profile: &TrainedProfile) -> Self {
        let calibration = Calibration {
            score_mean: profile.score_mean,
            score_std: profile.score_std,
            band_width_k: profile.band_width_k,
            band_mode: profile.band_mode,
            training_log_likelihoods: profile.training_log_likelihoods.clone(),
        };
        Self::new(
            user_id,
            vec![
                Section::new(
                    SectionTag::HMM_MODEL,
                    serde_json::to_vec(&profile.model).expect("model serializes"),
                ),
                Section::new(
                    SectionTag::CALIBRATION,
                    serde_json::to_vec(&calibration).expect("calibration serializes"),
                ),
            ],
        )
    }

    pub fn trained_profile(&self) -> Result<TrainedProfile, StoreError> {
        let model: HmmModel = serde_json::from_slice(self.required(SectionTag::HMM_MODEL)?)?;
        model
            .validate()
            .map_err(|e| StoreError::Payload(format!("stored model is invalid: {e}")))?;
        let c: Calibration = serde_json::from_slice(self.required(SectionTag::CALIBRATION)?)?;
        Ok(TrainedProfile {
            model,
            score_mean: c.score_mean,
            score_std: c.score_std,
            band_width_k: c.band_width_k,
            band_mode: c.band_mode,
            training_log_likelihoods: c.training_log_likelihoods,
        })
    }

    pub fn faces(user_id: impl Into<String>, images: &[FaceImage]) -> Self {
        let sections = images
            .iter()
            .map(|img| Section::new(SectionTag::FACE_IMAGE, img.to_pgm()))
            .collect();
        Self::new(user_id, sections)
    }

    pub fn face_images(&self) -> Result<Vec<FaceImage>, StoreError> {
        self.sections
            .iter()
            .filter(|s| s.tag == SectionTag::FACE_IMAGE)
            .map(|s| Ok(parse_pgm(&s.data)?))
            .collect()
    }

    pub fn face_model_file(owner: impl Into<String>, model: &FaceModel) -> Self {
        Self::new(owner, vec![Section::new(SectionTag::FACE_MODEL, model.to_bytes())])
    }

    pub fn face_model(&self) -> Result<FaceModel, StoreError> {
        Ok(FaceModel::from_bytes(self.required(SectionTag::FACE_MODEL)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Calibration {
    score_mean: f64,
    score_std: f64,
    band_width_k: f64,
    band_mode: BandMode,
    training_log_likelihoods: Vec<f64>,
}

/// A 256-bit key bound to the salt it was derived with.
#[derive(Clone)]
pub struct DerivedKey {
    salt: [u8; SALT_LEN],
    key: [u8; KEY_LEN],
}

impl std::fmt::Debug for DerivedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DerivedKey").field("salt", &self.salt).finish_non_exhaustive()
    }
}

impl DerivedKey {
    pub fn derive(passphrase: &str, salt: [u8; SALT_LEN]) -> Result<Self, StoreError> {
        if passphrase.is_empty() {
            return Err(StoreError::EmptyPassphrase);
        }
        let params = scrypt::Params::new(SCRYPT_LOG_N, SCRYPT_R, SCRYPT_P, KEY_LEN)
            .map_err(|e| StoreError::KeyDerivation(e.to_string()))?;
        let mut key = [0u8; KEY_LEN];
        scrypt::scrypt(passphrase.as_bytes(), &salt, &params, &mut key)
            .map_err(|e| StoreError::KeyDerivation(e.to_string()))?;
        Ok(Self { salt, key })
    }

    /// Derives a key under a fresh random salt.
    pub fn generate(passphrase: &str) -> Result<Self, StoreError> {
        if passphrase.is_empty() {
            return Err(StoreError::EmptyPassphrase);
        }
        let mut salt = [0u8; SALT_LEN];
        fill_random(&mut salt)?;
        Self::derive(passphrase, salt)
    }

    pub fn salt(&self) -> [u8; SALT_LEN] {
        self.salt
    }

    /// Encrypts under a fresh random nonce.
    pub fn seal(&self, payload: &[u8]) -> Result<Vec<u8>, StoreError> {
        let mut nonce = [0u8; NONCE_LEN];
        fill_random(&mut nonce)?;
        self.seal_with_nonce(payload, nonce)
    }

    /// Deterministic encryption; a nonce must never be reused with the same key.
    pub fn seal_with_nonce(&self, payload: &[u8], nonce: [u8; NONCE_LEN]) -> Result<Vec<u8>, StoreError> {
        let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.key));
        let ciphertext = cipher
            .encrypt(Nonce::from_slice(&nonce), payload)
            .map_err(|_| StoreError::Format("payload too large"))?;
        let mut out = Vec::with_capacity(HEADER_LEN + ciphertext.len());
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&self.salt);
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ciphertext);
        Ok(out)
    }

    /// Decrypts a file that was sealed under this key's salt.
    pub fn open(&self, bytes: &[u8]) -> Result<Vec<u8>, StoreError> {
        let header = parse_header(bytes)?;
        if header.salt != self.salt {
            return Err(StoreError::Authentication);
        }
        let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&self.key));
        cipher
            .decrypt(Nonce::from_slice(&header.nonce), header.ciphertext)
            .map_err(|_| StoreError::Authentication)
    }
}

fn fill_random(buf: &mut [u8]) -> Result<(), StoreError> {
    OsRng.try_fill_bytes(buf).map_err(|e| StoreError::Random(e.to_string()))
}

/// The cleartext header fields of a sealed file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileHeader<'a> {
    pub version: u8,
    pub salt: [u8; SALT_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: &'a [u8],
}

pub fn parse_header(bytes: &[u8]) -> Result<FileHeader<'_>, StoreError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(StoreError::Format("bad magic"));
    }
    let version = *bytes.get(MAGIC.len()).ok_or(StoreError::Format("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN + TAG_LEN {
        return Err(StoreError::Format("truncated file"));
    }
    let salt_start = MAGIC.len() + 1;
    let nonce_start = salt_start + SALT_LEN;
    Ok(FileHeader {
        version,
        salt: bytes[salt_start..nonce_start].try_into().expect("salt length"),
        nonce: bytes[nonce_start..HEADER_LEN].try_into().expect("nonce length"),
        ciphertext: &bytes[HEADER_LEN..],
    })
}

/// Encrypts `payload` under a fresh salt and nonce.
pub fn save_profile(payload: &[u8], passphrase: &str) -> Result<Vec<u8>, StoreError> {
    DerivedKey::generate(passphrase)?.seal(payload)
}

pub fn load_profile(bytes: &[u8], passphrase: &str) -> Result<Vec<u8>, StoreError> {
    if passphrase.is_empty() {
        return Err(StoreError::EmptyPassphrase);
    }
    let header = parse_header(bytes)?;
    DerivedKey::derive(passphrase, header.salt)?.open(bytes)
}

pub fn seal_file(file: &UserProfileFile, passphrase: &str) -> Result<Vec<u8>, StoreError> {
    save_profile(&file.to_payload(), passphrase)
}

pub fn open_file(bytes: &[u8], passphrase: &str) -> Result<UserProfileFile, StoreError> {
    UserProfileFile::from_payload(&load_profile(bytes, passphrase)?)
}

/// The artifacts kept for each user, one file apiece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArtifactKind {
    KeystrokeSamples,
    HmmProfile,
    FaceImages,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 3] = [
        ArtifactKind::KeystrokeSamples,
        ArtifactKind::HmmProfile,
        ArtifactKind::FaceImages,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            ArtifactKind::KeystrokeSamples => "keystrokes.kbfp",
            ArtifactKind::HmmProfile => "hmm.kbfp",
            ArtifactKind::FaceImages => "faces.kbfp",
        }
    }
}

/// File name of the face model shared by every enrolled user.
pub const FACE_MODEL_FILE: &str = "shared.face-model.kbfp";

/// Maps a user id onto a file name stem.
///
/// ASCII letters, digits, `-` and `_` are kept; every other byte becomes
/// `%XX`. The mapping is injective and never yields a `.`, so stems cannot
/// collide with each other or with [`FACE_MODEL_FILE`].
pub fn sanitize_user_id(user_id: &str) -> Result<String, StoreError> {
    if user_id.is_empty() || user_id.len() > 128 {
        return Err(StoreError::InvalidUserId(user_id.to_string()));
    }
    let mut out = String::with_capacity(user_id.len());
    for b in user_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    Ok(out)
}

/// A directory of encrypted profile files sharing one passphrase.
///
/// Writes go to a temporary file that is renamed into place. Callers that
/// read, modify and write back a user's files should hold
/// [`ProfileStore::user_lock`] for the duration.
#[derive(Debug)]
pub struct ProfileStore {
    dir: PathBuf,
    passphrase: String,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    keys: Mutex<HashMap<[u8; SALT_LEN], DerivedKey>>,
    write_key: Mutex<Option<DerivedKey>>,
}

impl ProfileStore {
    pub fn open(dir: impl Into<PathBuf>, passphrase: impl Into<String>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let passphrase = passphrase.into();
        if passphrase.is_empty() {
            return Err(StoreError::EmptyPassphrase);
        }
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            passphrase,
            locks: Mutex::new(HashMap::new()),
            keys: Mutex::new(HashMap::new()),
            write_key: Mutex::new(None),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, user_id: &str, kind: ArtifactKind) -> Result<PathBuf, StoreError> {
        Ok(self.dir.join(format!("{}.{}", sanitize_user_id(user_id)?, kind.suffix())))
    }

    /// Lock serializing writers of one user's files.
    pub fn user_lock(&self, user_id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(user_id.to_string()).or_default().clone()
    }

    pub fn save(&self, kind: ArtifactKind, file: &UserProfileFile) -> Result<(), StoreError> {
        let path = self.path_for(&file.user_id, kind)?;
        self.write_sealed(&path, file)
    }

    /// `Ok(None)` when the user has no file of this kind.
    pub fn load(&self, user_id: &str, kind: ArtifactKind) -> Result<Option<UserProfileFile>, StoreError> {
        let path = self.path_for(user_id, kind)?;
        let file = self.read_sealed(&path)?;
        if let Some(f) = &file {
            if f.user_id != user_id {
                return Err(StoreError::Payload(format!(
                    "{} belongs to {:?}",
                    path.display(),
                    f.user_id
                )));
            }
        }
        Ok(file)
    }

    pub fn exists(&self, user_id: &str, kind: ArtifactKind) -> Result<bool, StoreError> {
        Ok(self.path_for(user_id, kind)?.exists())
    }

    pub fn save_face_model(&self, model: &FaceModel) -> Result<(), StoreError> {
        let file = UserProfileFile::face_model_file("", model);
        self.write_sealed(&self.dir.join(FACE_MODEL_FILE), &file)
    }

    pub fn load_face_model(&self) -> Result<Option<FaceModel>, StoreError> {
        self.read_sealed(&self.dir.join(FACE_MODEL_FILE))?
            .map(|f| f.face_model())
            .transpose()
    }

    pub fn remove_face_model(&self) -> Result<(), StoreError> {
        let path = self.dir.join(FACE_MODEL_FILE);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(StoreError::Io { path, source: e }),
            _ => Ok(()),
        }
    }

    /// Decrypts every keystroke-sample file in the directory.
    pub fn list_users(&self) -> Result<Vec<String>, StoreError> {
        let suffix = format!(".{}", ArtifactKind::KeystrokeSamples.suffix());
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io {
            path: self.dir.clone(),
            source,
        })?;
        let mut users = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|source| StoreError::Io {
                path: self.dir.clone(),
                source,
            })?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.ends_with(&suffix) && !name.starts_with('.') {
                if let Some(f) = self.read_sealed(&entry.path())? {
                    users.push(f.user_id);
                }
            }
        }
        users.sort();
        Ok(users)
    }

    fn key_for_writing(&self) -> Result<DerivedKey, StoreError> {
        let mut slot = self.write_key.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(k) = slot.as_ref() {
            return Ok(k.clone());
        }
        let key = DerivedKey::generate(&self.passphrase)?;
        self.keys
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key.salt(), key.clone());
        *slot = Some(key.clone());
        Ok(key)
    }

    fn key_for_salt(&self, salt: [u8; SALT_LEN]) -> Result<DerivedKey, StoreError> {
        if let Some(k) = self.keys.lock().unwrap_or_else(|e| e.into_inner()).get(&salt) {
            return Ok(k.clone());
        }
        let key = DerivedKey::derive(&self.passphrase, salt)?;
        self.keys
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(salt, key.clone());
        Ok(key)
    }

    fn write_sealed(&self, path: &Path, file: &UserProfileFile) -> Result<(), StoreError> {
        let sealed = self.key_for_writing()?.seal(&file.to_payload())?;
        write_atomic(path, &sealed)
    }

    fn read_sealed(&self, path: &Path) -> Result<Option<UserProfileFile>, StoreError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(StoreError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let header = parse_header(&bytes)?;
        let payload = self.key_for_salt(header.salt)?.open(&bytes)?;
        UserProfileFile::from_payload(&payload).map(Some)
    }
}

/// Writes `bytes` to a sibling temporary file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("profile");
    let mut suffix = [0u8; 8];
    fill_random(&mut suffix)?;
    let tmp = dir.join(format!(".{name}.{:016x}.tmp", u64::from_be_bytes(suffix)));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err)
}
