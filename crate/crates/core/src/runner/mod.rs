//! Experiment orchestration: config loading, run directories, manifests and the
//! `--check` validator.

mod experiments;

pub use experiments::*;

use crate::analysis::{AnalysisError, FlatnessSlice};
use crate::config::{self, ConfigError, EscapeSpec, HessianSpec, SweepSpec, TrainSpec, TrajectorySpec};
use crate::escape::EscapeError;
use crate::landscape::{LandscapeError, Trajectory};
use crate::nn::{NnError, TrainRun};
use crate::ARTIFACT_VERSION;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DUALADAM_OUT";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Escape(#[from] EscapeError),
    #[error("run directory check failed:\n  {}", .0.join("\n  "))]
    Check(Vec<String>),
}

fn io_err(path: &Path, e: impl fmt::Display) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Trajectory,
    Train,
    Hessian,
    Escape,
    Sweep,
}

impl Subcommand {
    pub const ALL: [Subcommand; 5] = [
        Subcommand::Trajectory,
        Subcommand::Train,
        Subcommand::Hessian,
        Subcommand::Escape,
        Subcommand::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Trajectory => "trajectory",
            Subcommand::Train => "train",
            Subcommand::Hessian => "hessian",
            Subcommand::Escape => "escape",
            Subcommand::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            format!(
                "unknown subcommand `{s}`, expected one of {}",
                Self::ALL.map(Subcommand::name).join(", ")
            )
        })
    }
}

/// A validated config for one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub enum Spec {
    Trajectory(TrajectorySpec),
    Train(TrainSpec),
    Hessian(HessianSpec),
    Escape(EscapeSpec),
    Sweep(SweepSpec),
}

impl Spec {
    pub fn subcommand(&self) -> Subcommand {
        match self {
            Spec::Trajectory(_) => Subcommand::Trajectory,
            Spec::Train(_) => Subcommand::Train,
            Spec::Hessian(_) => Subcommand::Hessian,
            Spec::Escape(_) => Subcommand::Escape,
            Spec::Sweep(_) => Subcommand::Sweep,
        }
    }

    pub fn parse(sub: Subcommand, text: &str) -> Result<Self, ConfigError> {
        Ok(match sub {
            Subcommand::Trajectory => Spec::Trajectory(config::parse(text)?),
            Subcommand::Train => Spec::Train(config::parse(text)?),
            Subcommand::Hessian => Spec::Hessian(config::parse(text)?),
            Subcommand::Escape => Spec::Escape(config::parse(text)?),
            Subcommand::Sweep => Spec::Sweep(config::parse(text)?),
        })
    }

    pub fn seeds(&self) -> &[u64] {
        match self {
            Spec::Trajectory(s) => &s.seeds,
            Spec::Train(s) => &s.seeds,
            Spec::Hessian(s) => &s.seeds,
            Spec::Escape(s) => &s.seeds,
            Spec::Sweep(s) => &s.seeds,
        }
    }

    pub fn set_seeds(&mut self, seeds: Vec<u64>) {
        match self {
            Spec::Trajectory(s) => s.seeds = seeds,
            Spec::Train(s) => s.seeds = seeds,
            Spec::Hessian(s) => s.seeds = seeds,
            Spec::Escape(s) => s.seeds = seeds,
            Spec::Sweep(s) => s.seeds = seeds,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Spec::Trajectory(s) => s.validate(),
            Spec::Train(s) => s.validate(),
            Spec::Hessian(s) => s.validate(),
            Spec::Escape(s) => s.validate(),
            Spec::Sweep(s) => s.validate(),
        }
    }

    /// Makes every implicit choice explicit so the TOML snapshot reproduces the run.
    pub fn resolve(self, config_dir: &Path) -> Result<Self, RunError> {
        Ok(match self {
            Spec::Train(s) => Spec::Train(resolve_train(&s)?),
            Spec::Hessian(s) => Spec::Hessian(resolve_hessian(&s, config_dir)?),
            Spec::Trajectory(mut s) => {
                s.start = Some(s.start_point());
                Spec::Trajectory(s)
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        match self {
            Spec::Trajectory(s) => config::to_toml(s),
            Spec::Train(s) => config::to_toml(s),
            Spec::Hessian(s) => config::to_toml(s),
            Spec::Escape(s) => config::to_toml(s),
            Spec::Sweep(s) => config::to_toml(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub subcommand: Subcommand,
    /// Resolved TOML config; feeding it back reproduces every CSV byte for byte.
    pub config: String,
    pub seeds: Vec<u64>,
    /// Relative to the run directory, in write order; excludes the manifest itself.
    pub files: Vec<String>,
    /// RFC 3339, UTC.
    pub started: String,
    pub duration_seconds: f64,
    pub diverged: Vec<String>,
    /// True when a run diverged without `allow_divergence`.
    pub unexpected_divergence: bool,
    pub warnings: Vec<String>,
}

/// Collects the artifacts one subcommand writes into its run directory.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    diverged: Vec<String>,
    unexpected_divergence: bool,
    warnings: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            diverged: Vec::new(),
            unexpected_divergence: false,
            warnings: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Lists a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.files.push(name.to_string());
    }

    pub fn csv<F>(&mut self, name: &str, write: F) -> Result<(), RunError>
    where
        F: FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
    {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(f);
        write(&mut w).map_err(|e| io_err(&path, e))?;
        w.flush().map_err(|e| io_err(&path, e))?;
        self.record(name);
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
        self.record(name);
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        self.record(name);
        Ok(())
    }

    pub fn diverged(&mut self, what: String, allowed: bool) {
        self.unexpected_divergence |= !allowed;
        self.diverged.push(what);
    }

    pub fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }
}

/// Output root from the environment, else `runs`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Creates `<root>/<UTC timestamp>-<slug>`, adding `-2`, `-3`, ... rather than reuse a directory.
pub fn create_run_dir(root: &Path, slug: &str) -> Result<PathBuf, RunError> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    for n in 1u32.. {
        let name = if n == 1 {
            format!("{stamp}-{slug}")
        } else {
            format!("{stamp}-{slug}-{n}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
    unreachable!("run directory suffixes exhausted")
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Absent means all defaults.
    pub config: Option<PathBuf>,
    /// Replaces the config's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Defaults to `default_out_root()`.
    pub out_root: Option<PathBuf>,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
}

/// Reads, overrides, validates and resolves a config without running anything.
pub fn load_spec(sub: Subcommand, opts: &RunOptions) -> Result<Spec, RunError> {
    let (text, dir) = match &opts.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, dir)
        }
        None => (String::new(), PathBuf::new()),
    };
    let mut spec = Spec::parse(sub, &text)?;
    if let Some(seeds) = &opts.seeds {
        spec.set_seeds(seeds.clone());
    }
    spec.validate()?;
    spec.resolve(&dir)
}

/// Runs the experiment for `spec` into `out`.
pub fn dispatch(spec: &Spec, out: &mut Outputs) -> Result<(), RunError> {
    match spec {
        Spec::Trajectory(s) => cmd_trajectory(s, out),
        Spec::Train(s) => cmd_train(s, out),
        Spec::Hessian(s) => cmd_hessian(s, out),
        Spec::Escape(s) => cmd_escape(s, out),
        Spec::Sweep(s) => cmd_sweep(s, out),
    }
}

/// Runs `spec` into a fresh run directory under `root` and writes the manifest last.
pub fn run_spec(spec: &Spec, root: &Path, jobs: Option<usize>) -> Result<(PathBuf, RunManifest), RunError> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let dir = create_run_dir(root, spec.subcommand().name())?;
    let mut out = Outputs::new(&dir);
    let snapshot = spec.to_toml();
    out.text(CONFIG_SNAPSHOT, &snapshot)?;
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunError::Invalid(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| dispatch(spec, &mut out))?;
        }
        None => dispatch(spec, &mut out)?,
    }
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        subcommand: spec.subcommand(),
        config: snapshot,
        seeds: spec.seeds().to_vec(),
        files: out.files,
        started: started.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        duration_seconds: clock.elapsed().as_secs_f64(),
        diverged: out.diverged,
        unexpected_divergence: out.unexpected_divergence,
        warnings: out.warnings,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok((dir, manifest))
}

pub fn execute(sub: Subcommand, opts: &RunOptions) -> Result<(PathBuf, RunManifest), RunError> {
    let spec = load_spec(sub, opts)?;
    let root = opts.out_root.clone().unwrap_or_else(default_out_root);
    run_spec(&spec, &root, opts.jobs)
}

/// Expected header of a CSV artifact, keyed by file name.
pub fn expected_header(sub: Subcommand, name: &str) -> Option<Vec<&'static str>> {
    let h: &[&'static str] = match (sub, name) {
        (_, "contour.csv") => &CONTOUR_HEADER,
        (_, "basins.csv") => &BASINS_HEADER,
        (_, "slice.csv") => &FlatnessSlice::CSV_HEADER,
        (_, "cells.csv") => &SWEEP_CELLS_HEADER,
        (Subcommand::Train, "summary.csv") => &TRAIN_SUMMARY_HEADER,
        (Subcommand::Escape, "summary.csv") => &crate::escape::SUMMARY_HEADER,
        (_, n) if n.starts_with("trajectory_") => &Trajectory::CSV_HEADER,
        (_, n) if n.starts_with("train_") => &TrainRun::CSV_HEADER,
        _ => return None,
    };
    Some(h.to_vec())
}

fn check_csv(sub: Subcommand, path: &Path, name: &str, problems: &mut Vec<String>) {
    let mut reader = match csv::ReaderBuilder::new().has_headers(false).from_path(path) {
        Ok(r) => r,
        Err(e) => return problems.push(format!("{name}: {e}")),
    };
    let mut rows = reader.records();
    let header: Vec<String> = match rows.next() {
        Some(Ok(r)) => r.iter().map(str::to_string).collect(),
        Some(Err(e)) => return problems.push(format!("{name}: {e}")),
        None => return problems.push(format!("{name}: empty file")),
    };
    let expected: Vec<Vec<&str>> = if name == "sweep.csv" {
        vec![SWEEP_RATE_HEADER.to_vec(), SWEEP_MECHANISM_HEADER.to_vec()]
    } else {
        match expected_header(sub, name) {
            Some(h) => vec![h],
            None => return problems.push(format!("{name}: not a known artifact for `{sub}`")),
        }
    };
    if !expected.iter().any(|h| *h == header) {
        return problems.push(format!("{name}: header {header:?}, expected {:?}", expected[0]));
    }
    for (i, row) in rows.enumerate() {
        match row {
            Ok(r) if r.len() == header.len() => {}
            Ok(r) => problems.push(format!(
                "{name}: row {} has {} fields, expected {}",
                i + 2,
                r.len(),
                header.len()
            )),
            Err(e) => problems.push(format!("{name}: row {}: {e}", i + 2)),
        }
    }
}

/// Validates a finished run directory: manifest, listed files, CSV headers and
/// row widths, JSON syntax and the config snapshot.
pub fn check_run_dir(dir: &Path) -> Result<RunManifest, RunError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| RunError::Check(vec![format!("{MANIFEST}: {e}")]))?;
    let mut problems = Vec::new();
    if manifest.artifact_version != ARTIFACT_VERSION {
        problems.push(format!(
            "artifact version {} is not the supported {ARTIFACT_VERSION}",
            manifest.artifact_version
        ));
    }
    if let Err(e) = Spec::parse(manifest.subcommand, &manifest.config) {
        problems.push(format!("config snapshot: {e}"));
    }
    for name in &manifest.files {
        let p = dir.join(name);
        if !p.is_file() {
            problems.push(format!("{name}: listed in the manifest but missing"));
        } else if name.ends_with(".csv") {
            check_csv(manifest.subcommand, &p, name, &mut problems);
        } else if name.ends_with(".json") {
            let parsed = fs::read_to_string(&p)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).map_err(|e| e.to_string()));
            if let Err(e) = parsed {
                problems.push(format!("{name}: {e}"));
            }
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(RunError::Check(problems))
    }
}
