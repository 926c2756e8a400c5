//! Shared harness plumbing: run directories with lockfiles, structured
//! error reports, config provenance, seed fan-out, and environment lookup.

use std::fs;
use std::path::{Path, PathBuf};

use emaq::envs::{gridworld_env, pointmass_env, Environment, GridWorldConfig, PointMassConfig};
use emaq::tabular::TabularMdp;
use emaq::EmaqError;
use serde::Serialize;

/// Structured error carried to the exit path and written as error.json.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

impl ErrorReport {
    pub fn new(kind: &str, message: String) -> Self {
        Self {
            kind: kind.into(),
            message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("error report serialization cannot fail")
    }
}

impl From<EmaqError> for ErrorReport {
    fn from(err: EmaqError) -> Self {
        let kind = match &err {
            EmaqError::Structural(_) => "structural",
            EmaqError::Validation(_) => "validation",
            EmaqError::Divergence(_) => "divergence",
            EmaqError::Config(_) => "config",
            EmaqError::Precondition(_) => "precondition",
            EmaqError::NonFinite(_) => "non_finite",
            EmaqError::Io(_) => "io",
            EmaqError::Parse(_) => "parse",
        };
        Self::new(kind, err.to_string())
    }
}

impl From<std::io::Error> for ErrorReport {
    fn from(err: std::io::Error) -> Self {
        Self::new("io", err.to_string())
    }
}

pub type CliResult<T> = Result<T, ErrorReport>;

/// Validates EMAQ_THREADS (worker-thread cap). All pipelines here are
/// single-threaded, so any positive value is accepted and recorded.
pub fn thread_cap() -> CliResult<usize> {
    match std::env::var("EMAQ_THREADS") {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                ErrorReport::new("config", format!("EMAQ_THREADS must be a positive integer, got '{v}'"))
            })?;
            if n == 0 {
                return Err(ErrorReport::new(
                    "config",
                    "EMAQ_THREADS must be at least 1".into(),
                ));
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

/// An output directory holding exactly one running experiment (lockfile).
/// On drop the lock is released; on error the caller's report is persisted
/// as error.json in the directory.
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn acquire(path: &Path) -> CliResult<Self> {
        fs::create_dir_all(path)?;
        let lock = path.join(".emaq.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ErrorReport::new(
                    "config",
                    format!(
                        "output directory '{}' is locked by another experiment (remove {} if stale)",
                        path.display(),
                        lock.display()
                    ),
                ));
            }
            Err(e) => return Err(e.into()),
        }
        // A fresh run invalidates any stale error report.
        let _ = fs::remove_file(path.join("error.json"));
        Ok(Self {
            path: path.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| ErrorReport::new("io", e.to_string()))?;
        fs::write(self.path.join(name), text + "\n")?;
        Ok(())
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<()> {
        fs::write(self.path.join(name), text)?;
        Ok(())
    }

    /// Copies the user's config file verbatim (provenance) and records the
    /// resolved effective config, both before any computation.
    pub fn record_config<T: Serialize>(
        &self,
        config_file: Option<&Path>,
        effective: &T,
    ) -> CliResult<()> {
        if let Some(src) = config_file {
            fs::copy(src, self.path.join("config.input.json"))?;
        }
        self.write_json("config.json", effective)
    }

    pub fn persist_error(&self, report: &ErrorReport) {
        let _ = fs::write(self.path.join("error.json"), report.to_json() + "\n");
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Runs `body` inside an acquired run directory: on error, error.json is
/// written there before the report propagates.
pub fn with_run_dir<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&RunDir) -> CliResult<()>,
{
    let dir = RunDir::acquire(path)?;
    match body(&dir) {
        Ok(()) => Ok(()),
        Err(report) => {
            dir.persist_error(&report);
            Err(report)
        }
    }
}

/// Loads an optional JSON config file into the command's option struct.
pub fn load_config_file<T: serde::de::DeserializeOwned>(path: Option<&Path>) -> CliResult<Option<T>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| ErrorReport::new("io", format!("config file '{}': {e}", p.display())))?;
            let value = serde_json::from_str(&text).map_err(|e| {
                ErrorReport::new("parse", format!("config file '{}': {e}", p.display()))
            })?;
            Ok(Some(value))
        }
    }
}

/// Precedence: command-line flag > config-file field > default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Seed fan-out: one master seed derives independent named streams so each
/// component can be re-run in isolation.
pub mod seeds {
    pub fn behavior_fit(master: u64) -> u64 {
        emaq::rng::derive_seed_named(master, "behavior-fit")
    }

    pub fn trainer(master: u64) -> u64 {
        emaq::rng::derive_seed_named(master, "trainer")
    }

    pub fn env(master: u64) -> u64 {
        emaq::rng::derive_seed_named(master, "env")
    }

    pub fn eval(master: u64) -> u64 {
        emaq::rng::derive_seed_named(master, "eval")
    }
}

/// Built-in environments by name, with their default desk-scale configs.
pub fn make_env(name: &str) -> CliResult<Box<dyn Environment>> {
    match name {
        "pointmass" => Ok(Box::new(pointmass_env(PointMassConfig::default()))),
        "gridworld" => {
            let (env, _) = gridworld_env(GridWorldConfig::default())?;
            Ok(Box::new(env))
        }
        other => Err(ErrorReport::new(
            "config",
            format!("unknown environment '{other}' (expected pointmass or gridworld)"),
        )),
    }
}

/// The gridworld together with its exact tabular twin.
pub fn make_gridworld() -> CliResult<(emaq::envs::GridWorldEnv, TabularMdp)> {
    Ok(gridworld_env(GridWorldConfig::default())?)
}

/// Deterministic dataset timestamp: honors SOURCE_DATE_EPOCH (seconds since
/// the Unix epoch) and falls back to the epoch itself, so identical inputs
/// produce byte-identical files.
pub fn dataset_timestamp() -> String {
    let secs: u64 = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    format!("unix:{secs}")
}

pub fn parse_usize_list(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| ErrorReport::new("config", format!("invalid integer '{t}' in list")))
        })
        .collect()
}
