use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dynpop::agents::{Checkpoint, Listener, Speaker};
use dynpop::train::{load_population, load_summary, write_atomic, Population, RunSummary, TrainConfig};
use dynpop::world::World;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DYNPOP_OUT";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(dynpop::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dynpop::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::NonFinite { .. } | E::Diverged(_)) => EXIT_NUMERICAL,
            CliError::Core(
                E::Config(_)
                | E::Io { .. }
                | E::Json(_)
                | E::Csv(_)
                | E::Checkpoint(_)
                | E::WorldMismatch { .. }
                | E::World(_)
                | E::InvalidArgument(_),
            ) => EXIT_USAGE,
            CliError::Core(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<dynpop::Error> for CliError {
    fn from(e: dynpop::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Create `dir`, refusing to reuse a non-empty directory.
pub fn fresh_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() && fs::read_dir(dir).map_err(|e| dynpop::Error::io(dir, e))?.next().is_some() {
        return usage(format!(
            "{} already exists and is not empty; output directories are write-once",
            dir.display()
        ));
    }
    fs::create_dir_all(dir).map_err(|e| dynpop::Error::io(dir, e))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| dynpop::Error::io(path, e))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Serialise rows (header first) as RFC 4180 CSV.
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| dynpop::Error::io(path, e))?;
    Ok(())
}

/// Provenance of one command invocation, written before any work starts
/// and rewritten when it ends.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub world_hash: String,
    pub seeds: Vec<u64>,
    pub config: Option<TrainConfig>,
    pub inputs: Vec<PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub diagnostics: Option<String>,
    pub outputs: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config_hash: &str, world_hash: &str, seeds: Vec<u64>) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            world_hash: world_hash.into(),
            seeds,
            config: None,
            inputs: Vec::new(),
            started_at: now(),
            finished_at: None,
            status: "running".into(),
            diagnostics: None,
            outputs: BTreeMap::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        write_atomic(&dir.join("manifest.json"), &(serde_json::to_string_pretty(self)? + "\n"))?;
        Ok(())
    }

    pub fn finish(&mut self, dir: &Path, outcome: &CliResult<()>) -> CliResult<()> {
        self.finished_at = Some(now());
        match outcome {
            Ok(()) => self.status = "ok".into(),
            Err(e) => {
                self.status = if e.exit_code() == EXIT_NUMERICAL { "numerical_abort" } else { "failed" }.into();
                self.diagnostics = Some(e.to_string());
            }
        }
        self.save(dir)
    }
}

/// A finished training run read back from disk.
pub struct Run {
    pub dir: PathBuf,
    pub name: String,
    pub config: TrainConfig,
    pub summary: RunSummary,
    pub world: World,
    pub speaker: Speaker,
    pub listener: Listener,
}

impl Run {
    pub fn load(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return usage(format!("{} is not a run directory", dir.display()));
        }
        let cfg_path = dir.join("config.toml");
        let text = fs::read_to_string(&cfg_path).map_err(|e| dynpop::Error::io(&cfg_path, e))?;
        let config = TrainConfig::from_toml(&text)?;
        let summary = load_summary(dir)?;
        let world = World::new(config.world.spec())?;
        if summary.world_hash != world.hash() {
            return Err(dynpop::Error::WorldMismatch {
                expected: world.hash(),
                found: summary.world_hash.clone(),
            }
            .into());
        }
        let (speaker, listener) = load_pair(&dir.join("final"), &world.hash())?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self {
            dir: dir.to_path_buf(),
            name,
            config,
            summary,
            world,
            speaker,
            listener,
        })
    }

    /// Method name, or the ablation name for ablated runs.
    pub fn label(&self) -> String {
        match self.summary.ablation {
            Some(a) => a.name().to_string(),
            None => self.summary.method.name().to_string(),
        }
    }

    pub fn pretrained(&self) -> CliResult<Option<(Speaker, Listener)>> {
        let dir = self.dir.join("pretrained");
        if !dir.is_dir() {
            return Ok(None);
        }
        load_pair(&dir, &self.world.hash()).map(Some)
    }

    pub fn population(&self) -> CliResult<Option<Population>> {
        if !self.dir.join("population").is_dir() {
            return Ok(None);
        }
        Ok(Some(load_population(&self.dir)?))
    }
}

pub fn load_pair(dir: &Path, world_hash: &str) -> CliResult<(Speaker, Listener)> {
    let s = Checkpoint::load_for_world(&dir.join("speaker.ckpt"), world_hash)?.into_speaker()?;
    let l = Checkpoint::load_for_world(&dir.join("listener.ckpt"), world_hash)?.into_listener()?;
    Ok((s, l))
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::desk(),
    };
    for o in overrides {
        cfg = cfg.with_override(o)?;
    }
    Ok(cfg)
}

pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}
