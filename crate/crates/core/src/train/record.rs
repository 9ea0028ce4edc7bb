//! On-disk layout of a training run.
//!
//! ```text
//! <run>/metrics.csv          one row per outer iteration
//! <run>/summary.json         method, stop reason, history
//! <run>/checkpoints/iter_NNNN/{speaker,listener}.ckpt
//! <run>/final/{speaker,listener}.ckpt
//! <run>/pretrained/{speaker,listener}.ckpt
//! <run>/population/{speaker,listener}_NNNN.ckpt and buffers.json
//! ```
//!
//! Every file carries the configuration hash: CSV rows in a `config_hash`
//! column, JSON files in a field, checkpoints in their metadata.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::algorithm::{
    Ablation, IterationRecord, IterationState, Method, Observer, Population, RunOutcome, Stop,
};
use crate::agents::{Checkpoint, Listener, Speaker};
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 13] = [
    "config_hash",
    "iteration",
    "meta_speaker_loss",
    "meta_listener_loss",
    "int_speaker_loss",
    "int_listener_loss",
    "int_accuracy",
    "sup_speaker_loss",
    "sup_listener_loss",
    "val_accuracy",
    "speaker_buffer",
    "listener_buffer",
    "meta_start_hash",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn row(hash: &str, r: &IterationRecord) -> [String; 13] {
    [
        hash.to_string(),
        r.iteration.to_string(),
        cell(r.meta_speaker_loss),
        cell(r.meta_listener_loss),
        cell(r.int_speaker_loss),
        cell(r.int_listener_loss),
        cell(r.int_accuracy),
        cell(r.sup_speaker_loss),
        cell(r.sup_listener_loss),
        format!("{}", r.val_accuracy),
        r.speaker_buffer.to_string(),
        r.listener_buffer.to_string(),
        r.meta_start_hash.clone().unwrap_or_default(),
    ]
}

/// The metrics history as CSV. Skipped phases leave empty cells.
pub fn metrics_csv(config_hash: &str, history: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for r in history {
        w.write_record(row(config_hash, r))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Parse a metrics file written by [`metrics_csv`] or [`RunWriter`].
pub fn read_metrics(path: &Path) -> Result<(String, Vec<IterationRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::InvalidArgument(format!(
            "{} is not a metrics file (header {header:?})",
            path.display()
        )));
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("bad number {s:?}")))
        }
    };
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::InvalidArgument(format!("bad count {s:?}")))
    };
    let mut hash = String::new();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        hash = rec[0].to_string();
        out.push(IterationRecord {
            iteration: num(&rec[1])?,
            meta_speaker_loss: opt(&rec[2])?,
            meta_listener_loss: opt(&rec[3])?,
            int_speaker_loss: opt(&rec[4])?,
            int_listener_loss: opt(&rec[5])?,
            int_accuracy: opt(&rec[6])?,
            sup_speaker_loss: opt(&rec[7])?,
            sup_listener_loss: opt(&rec[8])?,
            val_accuracy: opt(&rec[9])?.unwrap_or(0.0),
            speaker_buffer: num(&rec[10])?,
            listener_buffer: num(&rec[11])?,
            meta_start_hash: (!rec[12].is_empty()).then(|| rec[12].to_string()),
        });
    }
    Ok((hash, out))
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub world_hash: String,
    pub method: Method,
    pub ablation: Option<Ablation>,
    pub seed: u64,
    pub iterations: usize,
    pub stop: Stop,
    pub final_val_accuracy: Option<f64>,
    pub history: Vec<IterationRecord>,
}

/// Membership of the buffers per iteration, as written to `buffers.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferLog {
    pub config_hash: String,
    pub speakers: usize,
    pub listeners: usize,
    pub speaker_buffers: Vec<Vec<usize>>,
    pub listener_buffers: Vec<Vec<usize>>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

/// Streams a run to disk as it progresses.
pub struct RunWriter {
    root: PathBuf,
    config_hash: String,
    world_hash: String,
    metrics: csv::Writer<fs::File>,
    checkpoints: bool,
}

impl RunWriter {
    /// Create the run directory and the metrics file. With `checkpoints`
    /// off, only the final artifacts are saved.
    pub fn create(root: &Path, config_hash: &str, world_hash: &str, checkpoints: bool) -> Result<Self> {
        mkdir(root)?;
        let path = root.join("metrics.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut metrics = csv::Writer::from_writer(file);
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush().map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            config_hash: config_hash.to_string(),
            world_hash: world_hash.to_string(),
            metrics,
            checkpoints,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn save_speaker(&self, s: &Speaker, path: &Path) -> Result<()> {
        Checkpoint::speaker(s, &self.world_hash)
            .with_metadata("config_hash", self.config_hash.clone())
            .save(path)
    }

    fn save_listener(&self, l: &Listener, path: &Path) -> Result<()> {
        Checkpoint::listener(l, &self.world_hash)
            .with_metadata("config_hash", self.config_hash.clone())
            .save(path)
    }

    fn save_pair(&self, dir: &Path, prefix: &str, s: &Speaker, l: &Listener) -> Result<()> {
        mkdir(dir)?;
        self.save_speaker(s, &dir.join(format!("{prefix}speaker.ckpt")))?;
        self.save_listener(l, &dir.join(format!("{prefix}listener.ckpt")))
    }

    /// Final pair, pretrained pair, population and summary.
    pub fn finish(mut self, out: &RunOutcome, seed: u64) -> Result<PathBuf> {
        let path = self.root.join("metrics.csv");
        self.metrics.flush().map_err(|e| Error::io(&path, e))?;
        self.save_pair(&self.root.join("final"), "", &out.speaker, &out.listener)?;
        if let Some((s, l)) = &out.pretrained {
            self.save_pair(&self.root.join("pretrained"), "", s, l)?;
        }
        if !out.population.speakers.is_empty() {
            self.save_population(&out.population)?;
        }
        let summary = RunSummary {
            config_hash: self.config_hash.clone(),
            world_hash: self.world_hash.clone(),
            method: out.method,
            ablation: out.ablation,
            seed,
            iterations: out.history.len(),
            stop: out.stop,
            final_val_accuracy: out.history.last().map(|r| r.val_accuracy),
            history: out.history.clone(),
        };
        write_file(
            &self.root.join("summary.json"),
            serde_json::to_string_pretty(&summary)?.as_bytes(),
        )?;
        Ok(self.root)
    }

    fn save_population(&self, pop: &Population) -> Result<()> {
        let dir = self.root.join("population");
        mkdir(&dir)?;
        for (i, s) in pop.speakers.iter().enumerate() {
            self.save_speaker(s, &dir.join(format!("speaker_{i:04}.ckpt")))?;
        }
        for (i, l) in pop.listeners.iter().enumerate() {
            self.save_listener(l, &dir.join(format!("listener_{i:04}.ckpt")))?;
        }
        let log = BufferLog {
            config_hash: self.config_hash.clone(),
            speakers: pop.speakers.len(),
            listeners: pop.listeners.len(),
            speaker_buffers: pop.speaker_buffers.clone(),
            listener_buffers: pop.listener_buffers.clone(),
        };
        write_file(&dir.join("buffers.json"), serde_json::to_string_pretty(&log)?.as_bytes())
    }
}

impl Observer for RunWriter {
    fn iteration(&mut self, st: &IterationState<'_>) -> Result<()> {
        let path = self.root.join("metrics.csv");
        self.metrics.write_record(row(&self.config_hash, st.record))?;
        self.metrics.flush().map_err(|e| Error::io(&path, e))?;
        if self.checkpoints {
            let dir = self
                .root
                .join("checkpoints")
                .join(format!("iter_{:04}", st.record.iteration));
            self.save_pair(&dir, "", st.speaker, st.listener)?;
            if let Some((s, l)) = st.lineage {
                self.save_pair(&dir, "lineage_", s, l)?;
            }
        }
        Ok(())
    }
}

/// Load a population saved by [`RunWriter`].
pub fn load_population(run: &Path) -> Result<Population> {
    let dir = run.join("population");
    let path = dir.join("buffers.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let log: BufferLog = serde_json::from_str(&text)?;
    let speakers = (0..log.speakers)
        .map(|i| Checkpoint::load(&dir.join(format!("speaker_{i:04}.ckpt")))?.into_speaker())
        .collect::<Result<_>>()?;
    let listeners = (0..log.listeners)
        .map(|i| Checkpoint::load(&dir.join(format!("listener_{i:04}.ckpt")))?.into_listener())
        .collect::<Result<_>>()?;
    Ok(Population {
        speakers,
        listeners,
        speaker_buffers: log.speaker_buffers,
        listener_buffers: log.listener_buffers,
    })
}

/// Load `summary.json` of a run directory.
pub fn load_summary(run: &Path) -> Result<RunSummary> {
    let path = run.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write `text` to `path` through a temporary file, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::algorithm::Experiment;

    fn tiny() -> crate::train::TrainConfig {
        let mut c = crate::train::TrainConfig::desk();
        c.world.attributes = 2;
        c.world.values = 4;
        c.world.test_size = 3;
        c.world.val_size = 3;
        c.world.dataset_size = 3;
        c.world.k = 1;
        c.model.hidden = 4;
        c.model.embed = 3;
        c.schedule.batch_size = 4;
        c.schedule.buffer_capacity = 2;
        c.schedule.n_pretrain = 2;
        c.schedule.n_meta = 1;
        c.schedule.n_int = 1;
        c.schedule.n_sup = 1;
        c.schedule.n_finetune = 1;
        c.schedule.max_outer = 3;
        c.schedule.val_episodes = 16;
        c
    }

    #[test]
    fn run_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::new(tiny()).unwrap();
        let hash = exp.config.hash();
        let mut w = RunWriter::create(dir.path(), &hash, &exp.world.hash(), true).unwrap();
        let out = exp.run_observed(Method::Ours, None, &mut w).unwrap();
        let root = w.finish(&out, exp.config.seed).unwrap();

        let (h, hist) = read_metrics(&root.join("metrics.csv")).unwrap();
        assert_eq!(h, hash);
        assert_eq!(hist, out.history);
        let text = std::fs::read_to_string(root.join("metrics.csv")).unwrap();
        assert_eq!(text, metrics_csv(&hash, &out.history).unwrap());

        let pop = load_population(&root).unwrap();
        assert_eq!(pop.speaker_buffers, out.population.speaker_buffers);
        assert_eq!(
            pop.speakers[1].params.content_hash(),
            out.population.speakers[1].params.content_hash()
        );
        let s = load_summary(&root).unwrap();
        assert_eq!(s.iterations, 3);
        assert_eq!(s.method, Method::Ours);
        assert!(root.join("checkpoints/iter_0003/lineage_speaker.ckpt").exists());
        let fin = Checkpoint::load_for_world(&root.join("final/speaker.ckpt"), &exp.world.hash())
            .unwrap();
        assert_eq!(fin.metadata["config_hash"], serde_json::json!(hash));
    }

    #[test]
    fn skipped_phases_leave_empty_cells() {
        let mut r = IterationRecord {
            iteration: 1,
            meta_speaker_loss: None,
            meta_listener_loss: None,
            int_speaker_loss: Some(0.5),
            int_listener_loss: Some(0.25),
            int_accuracy: Some(1.0),
            sup_speaker_loss: None,
            sup_listener_loss: None,
            val_accuracy: 0.75,
            speaker_buffer: 0,
            listener_buffer: 0,
            meta_start_hash: None,
        };
        let csv = metrics_csv("abc", std::slice::from_ref(&r)).unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert_eq!(line, "abc,1,,,0.5,0.25,1,,,0.75,0,0,");
        r.iteration = 2;
        assert!(csv.starts_with("config_hash,iteration,"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert!(!p.with_extension("tmp").exists());
    }
}
