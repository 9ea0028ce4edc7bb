use std::path::PathBuf;

use dynpop::eval::{crossplay, svg, EvalSettings};
use dynpop::game::PlayMode;

use crate::common::*;

pub struct CrossplayArgs {
    pub runs: Vec<PathBuf>,
    pub episodes: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub fn run_crossplay(args: CrossplayArgs) -> CliResult<PathBuf> {
    if args.runs.is_empty() {
        return usage("crossplay needs at least one run directory");
    }
    let runs = args.runs.iter().map(|d| Run::load(d)).collect::<CliResult<Vec<_>>>()?;
    let world_hash = runs[0].world.hash();
    for r in &runs[1..] {
        if r.world.hash() != world_hash {
            return Err(dynpop::Error::WorldMismatch {
                expected: world_hash,
                found: r.world.hash(),
            }
            .into());
        }
    }
    if runs.len() == 1 {
        eprintln!("warning: a single run gives a 1 x 1 matrix with no cross-play cells");
    }
    let first = &runs[0];
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_root(None).join(format!("crossplay-{}", first.name)));
    fresh_dir(&out)?;
    let hashes: Vec<String> = runs.iter().map(|r| r.config.hash()).collect();
    let mut manifest = RunManifest::start(
        "crossplay",
        &hashes.join(";"),
        &world_hash,
        runs.iter().map(|r| r.config.seed).collect(),
    );
    manifest.inputs = args.runs.clone();
    manifest.save(&out)?;

    let outcome = (|| -> CliResult<()> {
        let settings = EvalSettings {
            objects: &first.world.split().test,
            k: first.config.world.k,
            distractors: first.config.world.distractors,
            episodes: args.episodes,
            mode: PlayMode::EVAL,
            seed: args.seed.unwrap_or(first.config.seed),
        };
        let speakers: Vec<_> = runs.iter().map(|r| &r.speaker).collect();
        let listeners: Vec<_> = runs.iter().map(|r| &r.listener).collect();
        let cp = crossplay(&speakers, &listeners, &settings)?;
        let mut rows = vec![vec![
            "config_hash".to_string(),
            "speaker_run".into(),
            "listener_run".into(),
            "accuracy".into(),
        ]];
        for (i, row) in cp.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                rows.push(vec![hashes[i].clone(), runs[i].name.clone(), runs[j].name.clone(), fmt_f(*v)]);
            }
        }
        write_csv(&out.join("crossplay.csv"), &rows)?;
        write_json(
            &out.join("crossplay.json"),
            &serde_json::json!({
                "config_hashes": hashes,
                "world_hash": world_hash,
                "runs": runs.iter().map(|r| r.name.clone()).collect::<Vec<_>>(),
                "crossplay": cp,
                "gap": cp.gap(),
            }),
        )?;
        write_text(
            &out.join("crossplay.svg"),
            &svg::heatmap(
                &cp.matrix,
                "cross-play accuracy",
                "speaker (run)",
                "listener (run)",
                &format!("config {}", hashes.join(";")),
            ),
        )?;
        println!(
            "diag {:.3}  off-diag {}  ({} x {})",
            cp.diag_mean,
            cp.off_diag_mean.map_or("n/a".into(), |m| format!("{m:.3}")),
            cp.size(),
            cp.size()
        );
        Ok(())
    })();
    for f in ["crossplay.csv", "crossplay.json", "crossplay.svg"] {
        manifest.outputs.insert(f.into(), PathBuf::from(f));
    }
    manifest.finish(&out, &outcome)?;
    outcome.map(|()| out)
}
