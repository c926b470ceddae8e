//! Command line definition and subcommand handlers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use keyface::evaluation::{generate_population, run_experiment, PopulationConfig, UserDataset};
use keyface::face::{load_pgm, FaceImage};
use keyface::fusion::Integrator;
use keyface::hmm::BandMode;
use keyface::keystroke::{parse_samples, serialize_timings, KeystrokeTimings};
use serde_json::json;

use crate::config::Config;
use crate::engine::{EnrollOptions, Engine, VerifyOptions};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "keyface", version, about = "Keystroke dynamics and face verification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Directory holding the encrypted profile files.
    #[arg(long, global = true, default_value = "profiles")]
    pub profiles_dir: PathBuf,
    /// Name of the environment variable holding the store passphrase.
    #[arg(long, global = true, default_value = "KEYFACE_PASSPHRASE")]
    pub passphrase_env: String,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Score fusion rule: product, sum, min or max.
    #[arg(long, global = true)]
    pub integrator: Option<Integrator>,
    /// Keystroke acceptance band half-width in standard deviations.
    #[arg(long, global = true)]
    pub band_k: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store enrollment data for a user and train their profile.
    Enroll {
        #[arg(long)]
        user: String,
        /// Keystroke samples in the text format, one per line.
        #[arg(long)]
        samples: PathBuf,
        /// PGM files, or directories whose .pgm files are read in name order.
        #[arg(long, num_args = 1.., required = true)]
        faces: Vec<PathBuf>,
        /// Add to an already-trained user and retrain.
        #[arg(long)]
        allow_append: bool,
    },
    /// Verify one attempt; exits 0 on accept and 1 on reject.
    Verify {
        #[arg(long)]
        user: String,
        /// Keystroke sample file; the line chosen by --line is used.
        #[arg(long)]
        sample: PathBuf,
        /// 1-based line of the sample file.
        #[arg(long, default_value_t = 1)]
        line: usize,
        /// PGM face frames; their mean distance is scored.
        #[arg(long = "face", num_args = 1..)]
        faces: Vec<PathBuf>,
        /// Print the report as one JSON object.
        #[arg(long)]
        json: bool,
    },
    /// Sweep the band width over a synthetic population or a recorded dataset; prints JSON lines.
    Evaluate {
        /// Dataset directory in the layout written by `generate`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        population: PopulationArgs,
        /// Band widths to sweep.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
        k: Vec<f64>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        /// Accept enrollment data for already-trained users.
        #[arg(long)]
        allow_append: bool,
    },
    /// Write a synthetic dataset: per user enroll.txt, probe.txt, enroll-faces/ and probe-faces/.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        population: PopulationArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PopulationArgs {
    #[arg(long, default_value_t = 20)]
    pub users: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Scales every between-user difference.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 20)]
    pub samples_per_user: usize,
    #[arg(long, default_value_t = 10)]
    pub probes_per_user: usize,
    #[arg(long, default_value_t = 20)]
    pub faces_per_user: usize,
}

impl PopulationArgs {
    pub fn to_config(&self) -> PopulationConfig {
        PopulationConfig {
            n_users: self.users,
            seed: self.seed,
            separation: self.separation,
            samples_per_user: self.samples_per_user,
            probes_per_user: self.probes_per_user,
            face_images_per_user: self.faces_per_user,
            ..PopulationConfig::default()
        }
    }
}

/// Result of a successful command, mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Rejected,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Rejected => 1,
        }
    }
}

/// Exit code for operational errors.
pub const ERROR_EXIT: u8 = 2;

impl GlobalArgs {
    fn load_config(&self) -> Result<Config, CliError> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(i) = self.integrator {
            config.fusion.integrator = i;
        }
        if let Some(k) = self.band_k {
            config.training.band_width_k = k;
        }
        config.validate()?;
        Ok(config)
    }

    fn passphrase(&self) -> Result<String, CliError> {
        match std::env::var(&self.passphrase_env) {
            Ok(p) if !p.is_empty() => Ok(p),
            _ => Err(CliError::MissingPassphrase(self.passphrase_env.clone())),
        }
    }

    fn engine(&self, config: Config) -> Result<Engine, CliError> {
        Engine::open(&self.profiles_dir, self.passphrase()?, config)
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Outcome, CliError> {
    let mut config = cli.global.load_config()?;
    let g = &cli.global;
    match cli.command {
        Command::Enroll {
            user,
            samples,
            faces,
            allow_append,
        } => {
            let keys = read_samples(&samples)?;
            let images = read_faces(&faces)?;
            let engine = g.engine(config)?;
            let options = EnrollOptions {
                allow_append,
                require_complete: true,
            };
            let outcome = engine.enroll(&user, &keys, &images, options)?;
            let s = &outcome.status;
            w(out, format_args!("enrolled {user}: {} keystroke samples, {} face images\n", s.keystroke_samples, s.face_images))?;
            if let Some(t) = &outcome.training {
                let p = &t.profile;
                w(out, format_args!("training log-likelihood:\n"))?;
                for (i, ll) in p.training_log_likelihoods.iter().enumerate() {
                    w(out, format_args!("  iteration {i:2}: {ll:.6}\n"))?;
                }
                let half = p.band_width_k * p.score_std;
                let band = match p.band_mode {
                    BandMode::TwoSided => format!("[{:.6}, {:.6}]", p.score_mean - half, p.score_mean + half),
                    BandMode::LowerBound => format!("[{:.6}, inf)", p.score_mean - half),
                };
                w(out, format_args!(
                    "score band: mean {:.6}, std {:.6}, k {} -> {band}\n",
                    p.score_mean, p.score_std, p.band_width_k
                ))?;
                w(out, format_args!("face model: {} users, {} dimensions\n", t.face_classes, t.face_dim))?;
            }
            Ok(Outcome::Success)
        }
        Command::Verify {
            user,
            sample,
            line,
            faces,
            json,
        } => {
            let keys = read_samples(&sample)?;
            let attempt = line
                .checked_sub(1)
                .and_then(|i| keys.get(i))
                .ok_or_else(|| CliError::Invalid(format!("{} has no sample on line {line}", sample.display())))?;
            let images = read_faces(&faces)?;
            let engine = g.engine(config)?;
            let options = VerifyOptions {
                integrator: g.integrator,
                band_k: g.band_k,
            };
            let r = engine.verify(&user, attempt, &images, options)?;
            if json {
                let text = serde_json::to_string(&r).expect("report serializes");
                w(out, format_args!("{text}\n"))?;
            } else {
                w(out, format_args!(
                    "keystroke: score {:.6}, band distance {:.4} (k {}), p_true {:.6}, p_false {:.6}\n",
                    r.keystroke_score, r.band_distance, r.band_width_k, r.keystroke.p_true, r.keystroke.p_false
                ))?;
                match r.face_distance {
                    Some(d) => w(out, format_args!(
                        "face: distance {d:.6}, p_true {:.6}, p_false {:.6}\n",
                        r.face.p_true, r.face.p_false
                    ))?,
                    None => w(out, format_args!("face: no frames\n"))?,
                }
                w(out, format_args!("fused ({}): s_true {:.6}, s_false {:.6}\n", r.integrator, r.s_true, r.s_false))?;
                w(out, format_args!("decision: {}\n", if r.accepted() { "accept" } else { "reject" }))?;
            }
            Ok(if r.accepted() { Outcome::Success } else { Outcome::Rejected })
        }
        Command::Evaluate { dataset, population, k } => {
            let datasets = match &dataset {
                Some(dir) => read_dataset(dir)?,
                None => generate_population(&population.to_config())?.1,
            };
            let (_, table) = run_experiment(&datasets, &config.training_config(), &config.face_config())?;
            let integrator = config.fusion.integrator;
            for point in table.sweep_roc(&k, integrator)? {
                w(out, format_args!("{}\n", point.to_json_line()))?;
            }
            let eer_k = g.band_k.unwrap_or(config.training.band_width_k);
            let eer = table.equal_error_rates(eer_k, integrator)?;
            let line = json!({
                "eer": eer,
                "k": eer_k,
                "integrator": integrator,
                "attempts": table.attempts.len(),
            });
            w(out, format_args!("{line}\n"))?;
            Ok(Outcome::Success)
        }
        Command::Serve {
            host,
            port,
            allow_append,
        } => {
            if let Some(h) = host {
                config.server.host = h;
            }
            if let Some(p) = port {
                config.server.port = p;
            }
            config.server.allow_append |= allow_append;
            let engine = Arc::new(g.engine(config)?);
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("tokio runtime"))?;
            runtime.block_on(crate::http::serve(engine))?;
            Ok(Outcome::Success)
        }
        Command::Generate { out: dir, population } => {
            let datasets = generate_population(&population.to_config())?.1;
            write_dataset(&dir, &datasets)?;
            w(out, format_args!("wrote {} users to {}\n", datasets.len(), dir.display()))?;
            Ok(Outcome::Success)
        }
    }
}

fn w(out: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    out.write_fmt(args).map_err(CliError::io("stdout"))
}

pub fn read_samples(path: &Path) -> Result<Vec<KeystrokeTimings>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(parse_samples(&text)?)
}

/// Reads PGM files; directories contribute their `.pgm` files in name order.
pub fn read_faces(paths: &[PathBuf]) -> Result<Vec<FaceImage>, CliError> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            files.extend(pgm_files(path)?);
        } else {
            files.push(path.clone());
        }
    }
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(CliError::io(f))?;
            load_pgm(&bytes).map_err(|e| CliError::Invalid(format!("{}: {e}", f.display())))
        })
        .collect()
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

/// Writes each user's data under `dir/<user_id>/`.
pub fn write_dataset(dir: &Path, datasets: &[UserDataset]) -> Result<(), CliError> {
    for d in datasets {
        let root = dir.join(&d.user_id);
        for sub in ["enroll-faces", "probe-faces"] {
            fs::create_dir_all(root.join(sub)).map_err(CliError::io(root.join(sub)))?;
        }
        let write = |path: PathBuf, bytes: &[u8]| fs::write(&path, bytes).map_err(CliError::io(path));
        write(root.join("enroll.txt"), serialize_timings(d.enroll_keystrokes.iter().cloned()).as_bytes())?;
        write(root.join("probe.txt"), serialize_timings(d.probe_keystrokes.iter().cloned()).as_bytes())?;
        for (i, im) in d.enroll_faces.iter().enumerate() {
            write(root.join("enroll-faces").join(format!("{i:03}.pgm")), &im.to_pgm())?;
        }
        for (i, im) in d.probe_faces.iter().enumerate() {
            write(root.join("probe-faces").join(format!("{i:03}.pgm")), &im.to_pgm())?;
        }
    }
    Ok(())
}

/// Reads a directory in the layout of [`write_dataset`]; users are taken in name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<UserDataset>, CliError> {
    let mut users: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    users.sort();
    users
        .iter()
        .map(|root| {
            let user_id = root
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| CliError::Invalid(format!("{} is not a valid user directory", root.display())))?
                .to_string();
            let probe_keystrokes = read_samples(&root.join("probe.txt"))?;
            let probe_faces = read_faces(&[root.join("probe-faces")])?;
            if probe_keystrokes.len() != probe_faces.len() {
                return Err(CliError::Invalid(format!(
                    "{user_id}: {} probe samples but {} probe faces",
                    probe_keystrokes.len(),
                    probe_faces.len()
                )));
            }
            Ok(UserDataset {
                user_id,
                enroll_keystrokes: read_samples(&root.join("enroll.txt"))?,
                enroll_faces: read_faces(&[root.join("enroll-faces")])?,
                probe_keystrokes,
                probe_faces,
            })
        })
        .collect()
}
