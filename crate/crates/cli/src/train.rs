use std::path::{Path, PathBuf};

use dynpop::train::{Ablation, Experiment, IterationState, Method, Observer, RunWriter};

use crate::common::*;

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub overrides: Vec<String>,
    pub method: Method,
    pub ablation: Option<Ablation>,
    pub out: Option<PathBuf>,
    pub checkpoints: bool,
    pub quiet: bool,
}

struct Progress<'a> {
    writer: &'a mut RunWriter,
    quiet: bool,
}

impl Observer for Progress<'_> {
    fn iteration(&mut self, st: &IterationState<'_>) -> dynpop::Result<()> {
        self.writer.iteration(st)?;
        if !self.quiet {
            let r = st.record;
            eprintln!(
                "iteration {:>3}  val {:.3}  buffers {}/{}",
                r.iteration, r.val_accuracy, r.speaker_buffer, r.listener_buffer
            );
        }
        Ok(())
    }
}

pub fn run_name(method: Method, ablation: Option<Ablation>, seed: u64) -> String {
    let label = ablation.map_or(method.name(), |a| a.name());
    format!("{label}-seed{seed}")
}

/// Train one run per seed; returns the run directories.
pub fn train(args: TrainArgs) -> CliResult<Vec<PathBuf>> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    if args.ablation.is_some() && args.method != Method::Ours {
        return usage("--ablation only applies to --method ours");
    }
    let seeds = if args.seeds.is_empty() { vec![base.seed] } else { args.seeds.clone() };
    let root = out_root(args.out.clone());
    let mut dirs = Vec::new();
    for seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        let dir = root.join(run_name(args.method, args.ablation, seed));
        train_one(cfg, &dir, &args)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn train_one(cfg: dynpop::train::TrainConfig, dir: &Path, args: &TrainArgs) -> CliResult<()> {
    fresh_dir(dir)?;
    let exp = Experiment::new(cfg)?;
    let hash = exp.config.hash();
    let world_hash = exp.world.hash();
    write_text(&dir.join("config.toml"), &exp.config.to_toml()?)?;
    let mut manifest = RunManifest::start("train", &hash, &world_hash, vec![exp.config.seed]);
    manifest.config = Some(exp.config.clone());
    manifest.inputs = args.config.iter().cloned().collect();
    for (k, v) in [
        ("config", "config.toml"),
        ("metrics", "metrics.csv"),
        ("summary", "summary.json"),
        ("final", "final"),
    ] {
        manifest.outputs.insert(k.into(), PathBuf::from(v));
    }
    manifest.save(dir)?;
    if !args.quiet {
        eprintln!(
            "training {} (config {hash}) into {}",
            run_name(args.method, args.ablation, exp.config.seed),
            dir.display()
        );
    }

    let outcome = (|| -> CliResult<()> {
        let mut writer = RunWriter::create(dir, &hash, &world_hash, args.checkpoints)?;
        let out = exp.run_observed(
            args.method,
            args.ablation,
            &mut Progress {
                writer: &mut writer,
                quiet: args.quiet,
            },
        )?;
        writer.finish(&out, exp.config.seed)?;
        if !args.quiet {
            eprintln!("stopped: {:?} after {} iterations", out.stop, out.history.len());
        }
        Ok(())
    })();
    if dir.join("pretrained").is_dir() {
        manifest.outputs.insert("pretrained".into(), PathBuf::from("pretrained"));
    }
    if dir.join("population").is_dir() {
        manifest.outputs.insert("population".into(), PathBuf::from("population"));
    }
    if dir.join("checkpoints").is_dir() {
        manifest.outputs.insert("checkpoints".into(), PathBuf::from("checkpoints"));
    }
    manifest.finish(dir, &outcome)?;
    outcome
}
