use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dynpop::agents::{Checkpoint, Listener, Speaker};
use dynpop::eval::{
    bleu_curve, corpus_stats, describe_all, oracle_eval, referential_accuracy, robustness_eval, svg,
    welch_t_test, Accuracy, EvalSettings, Summary,
};
use dynpop::game::PlayMode;
use dynpop::rng::substream;
use dynpop::train::{Population, TrainConfig};
use dynpop::world::{CanonicalLanguage, Object, World};
use serde::Serialize;

use crate::common::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Accuracy,
    Bleu,
    Oracle,
    Stats,
    Robustness,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Accuracy => "accuracy",
            Suite::Bleu => "bleu",
            Suite::Oracle => "oracle",
            Suite::Stats => "stats",
            Suite::Robustness => "robustness",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Val,
}

pub struct EvalArgs {
    pub suite: Suite,
    pub runs: Vec<PathBuf>,
    pub speaker: Option<PathBuf>,
    pub listener: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub split: Split,
    pub episodes: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// What a suite evaluates: a run's final pair or loose checkpoints.
pub struct Target {
    pub name: String,
    pub label: String,
    pub config: TrainConfig,
    pub world: World,
    pub speaker: Speaker,
    pub listener: Listener,
    pub population: Option<Population>,
    pub pretrained: Option<(Speaker, Listener)>,
}

impl Target {
    fn hash(&self) -> String {
        self.config.hash()
    }

    fn objects(&self, split: Split) -> &[Object] {
        match split {
            Split::Test => &self.world.split().test,
            Split::Val => &self.world.split().val,
        }
    }

    fn settings<'a>(&'a self, split: Split, episodes: usize, seed: Option<u64>) -> EvalSettings<'a> {
        EvalSettings {
            objects: self.objects(split),
            k: self.config.world.k,
            distractors: self.config.world.distractors,
            episodes,
            mode: PlayMode::EVAL,
            seed: seed.unwrap_or(self.config.seed),
        }
    }
}

fn from_run(dir: &Path, with_extras: bool) -> CliResult<Target> {
    let run = Run::load(dir)?;
    let (population, pretrained) = if with_extras {
        (run.population()?, run.pretrained()?)
    } else {
        (None, None)
    };
    Ok(Target {
        label: run.label(),
        name: run.name,
        config: run.config,
        world: run.world,
        speaker: run.speaker,
        listener: run.listener,
        population,
        pretrained,
    })
}

fn targets(args: &EvalArgs, with_extras: bool) -> CliResult<Vec<Target>> {
    if !args.runs.is_empty() {
        if args.speaker.is_some() || args.listener.is_some() {
            return usage("give either run directories or --speaker/--listener, not both");
        }
        return args.runs.iter().map(|d| from_run(d, with_extras)).collect();
    }
    let (Some(sp), Some(lp)) = (&args.speaker, &args.listener) else {
        return usage("eval needs run directories or both --speaker and --listener");
    };
    let config = load_config(args.config.as_deref(), &args.overrides)?;
    let world = World::new(config.world.spec())?;
    let speaker = Checkpoint::load_for_world(sp, &world.hash())?.into_speaker()?;
    let listener = Checkpoint::load_for_world(lp, &world.hash())?.into_listener()?;
    Ok(vec![Target {
        name: "checkpoints".into(),
        label: "checkpoints".into(),
        config,
        world,
        speaker,
        listener,
        population: None,
        pretrained: None,
    }])
}

fn accuracy_of(t: &Target, split: Split, episodes: usize, seed: Option<u64>) -> CliResult<Accuracy> {
    let s = t.settings(split, episodes, seed);
    Ok(referential_accuracy(
        &t.speaker,
        &t.listener,
        s.objects,
        s.k,
        s.distractors,
        s.episodes,
        s.mode,
        &mut substream(s.seed, 0),
    )?)
}

pub fn eval(args: EvalArgs) -> CliResult<PathBuf> {
    let with_extras = matches!(args.suite, Suite::Bleu | Suite::Robustness);
    let ts = targets(&args, with_extras)?;
    let root = out_root(None);
    let out = args.out.clone().unwrap_or_else(|| {
        root.join(format!("eval-{}-{}", args.suite.name(), ts[0].name))
    });
    fresh_dir(&out)?;
    let seeds = ts.iter().map(|t| args.seed.unwrap_or(t.config.seed)).collect();
    let hashes: Vec<String> = ts.iter().map(Target::hash).collect();
    let mut manifest = RunManifest::start(
        &format!("eval --suite {}", args.suite.name()),
        &hashes.join(";"),
        &ts[0].world.hash(),
        seeds,
    );
    manifest.inputs = args
        .runs
        .iter()
        .chain(args.speaker.iter())
        .chain(args.listener.iter())
        .cloned()
        .collect();
    manifest.save(&out)?;
    let result = match args.suite {
        Suite::Accuracy => suite_accuracy(&args, &ts, &out),
        Suite::Bleu => suite_bleu(&ts, &out),
        Suite::Oracle => suite_oracle(&args, &ts, &out),
        Suite::Stats => suite_stats(&args, &ts, &out),
        Suite::Robustness => suite_robustness(&args, &ts, &out),
    };
    let outcome = result.map(|files| {
        for f in files {
            manifest.outputs.insert(f.clone(), PathBuf::from(f));
        }
    });
    manifest.finish(&out, &outcome)?;
    outcome.map(|()| out)
}

#[derive(Serialize)]
struct AccuracyRow {
    config_hash: String,
    run: String,
    split: Split,
    accuracy: f64,
    std_error: f64,
    episodes: usize,
}

fn suite_accuracy(args: &EvalArgs, ts: &[Target], out: &Path) -> CliResult<Vec<String>> {
    let mut rows = vec![header(&["config_hash", "run", "split", "accuracy", "std_error", "episodes"])];
    let mut json = Vec::new();
    for t in ts {
        let a = accuracy_of(t, args.split, args.episodes, args.seed)?;
        let split = format!("{:?}", args.split).to_lowercase();
        rows.push(vec![
            t.hash(),
            t.name.clone(),
            split,
            fmt_f(a.value),
            fmt_f(a.std_error()),
            a.episodes.to_string(),
        ]);
        json.push(AccuracyRow {
            config_hash: t.hash(),
            run: t.name.clone(),
            split: args.split,
            accuracy: a.value,
            std_error: a.std_error(),
            episodes: a.episodes,
        });
    }
    write_csv(&out.join("accuracy.csv"), &rows)?;
    write_json(&out.join("accuracy.json"), &json)?;
    Ok(vec!["accuracy.csv".into(), "accuracy.json".into()])
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn suite_bleu(ts: &[Target], out: &Path) -> CliResult<Vec<String>> {
    let mut rows = vec![header(&[
        "config_hash",
        "run",
        "bleu",
        "precision_1",
        "precision_2",
        "precision_3",
        "precision_4",
        "brevity_penalty",
        "length_ratio",
        "unique_ratio",
        "sentences",
    ])];
    let mut json = Vec::new();
    let mut files = vec!["bleu.csv".to_string(), "bleu.json".to_string()];
    for t in ts {
        let lang = CanonicalLanguage::new(t.world.spec());
        let objects = &t.world.split().test;
        let (h, r) = describe_all(&t.speaker, &lang, objects)?;
        let b = dynpop::eval::bleu(&h, &r)?;
        let c = corpus_stats(&h, &r)?;
        let mut row = vec![t.hash(), t.name.clone(), fmt_f(b.score)];
        row.extend(b.precisions.iter().map(|p| fmt_f(*p)));
        row.extend([
            fmt_f(b.brevity_penalty),
            fmt_f(c.length_ratio),
            fmt_f(c.unique_ratio),
            b.sentences.to_string(),
        ]);
        rows.push(row);
        let mut entry = serde_json::json!({
            "config_hash": t.hash(),
            "run": t.name,
            "bleu": b,
            "corpus": c,
        });
        if let Some(pop) = &t.population {
            let curve = bleu_curve(pop, &lang, objects)?;
            let base = format!("bleu_curve_{}", t.name);
            write_curve(out, &base, &t.hash(), &curve)?;
            write_text(
                &out.join(format!("{base}.svg")),
                &svg::band_chart(&curve, &format!("buffer BLEU: {}", t.name), &format!("config {}", t.hash())),
            )?;
            files.extend([format!("{base}.csv"), format!("{base}.svg")]);
            entry["curve"] = serde_json::to_value(&curve)?;
        }
        json.push(entry);
    }
    write_csv(&out.join("bleu.csv"), &rows)?;
    write_json(&out.join("bleu.json"), &json)?;
    Ok(files)
}

pub fn write_curve(
    out: &Path,
    base: &str,
    hash: &str,
    curve: &dynpop::eval::DiversityCurve,
) -> CliResult<()> {
    let mut rows = vec![header(&["config_hash", "iteration", "metric", "mean", "std", "min", "max", "members"])];
    for p in &curve.points {
        rows.push(vec![
            hash.to_string(),
            p.iteration.to_string(),
            curve.metric.clone(),
            fmt_f(p.mean),
            fmt_f(p.std),
            fmt_f(p.min),
            fmt_f(p.max),
            p.members.to_string(),
        ]);
    }
    write_csv(&out.join(format!("{base}.csv")), &rows)
}

fn suite_oracle(args: &EvalArgs, ts: &[Target], out: &Path) -> CliResult<Vec<String>> {
    let mut rows = vec![header(&["config_hash", "run", "pairing", "accuracy", "std_error", "episodes"])];
    let mut json = Vec::new();
    for t in ts {
        let lang = CanonicalLanguage::new(t.world.spec());
        let o = oracle_eval(&t.speaker, &t.listener, &lang, &t.settings(args.split, args.episodes, args.seed))?;
        for (name, a) in [
            ("speaker_with_oracle", o.speaker_with_oracle),
            ("oracle_with_listener", o.oracle_with_listener),
            ("oracle_with_oracle", o.oracle_with_oracle),
        ] {
            rows.push(vec![
                t.hash(),
                t.name.clone(),
                name.into(),
                fmt_f(a.value),
                fmt_f(a.std_error()),
                a.episodes.to_string(),
            ]);
        }
        json.push(serde_json::json!({ "config_hash": t.hash(), "run": t.name, "oracle": o }));
    }
    write_csv(&out.join("oracle.csv"), &rows)?;
    write_json(&out.join("oracle.json"), &json)?;
    Ok(vec!["oracle.csv".into(), "oracle.json".into()])
}

fn suite_stats(args: &EvalArgs, ts: &[Target], out: &Path) -> CliResult<Vec<String>> {
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<String>)> = BTreeMap::new();
    for t in ts {
        let a = accuracy_of(t, args.split, args.episodes, args.seed)?;
        let g = groups.entry(t.label.clone()).or_default();
        g.0.push(a.value);
        g.1.push(t.hash());
    }
    let mut rows = vec![header(&["config_hashes", "group", "n", "mean", "std", "min", "max"])];
    let mut summaries = BTreeMap::new();
    for (label, (xs, hashes)) in &groups {
        let s = Summary::of(xs)?;
        rows.push(vec![
            hashes.join(";"),
            label.clone(),
            s.n.to_string(),
            fmt_f(s.mean),
            fmt_f(s.std),
            fmt_f(s.min),
            fmt_f(s.max),
        ]);
        summaries.insert(label.clone(), s);
    }
    let mut tests = vec![header(&["config_hashes", "group_a", "group_b", "t", "df", "p_value"])];
    let mut test_json = Vec::new();
    let labels: Vec<&String> = groups.keys().collect();
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            let (xa, ha) = &groups[*a];
            let (xb, hb) = &groups[*b];
            if xa.len() < 2 || xb.len() < 2 {
                continue;
            }
            let r = welch_t_test(xa, xb)?;
            tests.push(vec![
                ha.iter().chain(hb).cloned().collect::<Vec<_>>().join(";"),
                a.to_string(),
                b.to_string(),
                fmt_f(r.t),
                fmt_f(r.df),
                fmt_f(r.p_value),
            ]);
            test_json.push(serde_json::json!({ "group_a": a, "group_b": b, "test": r }));
        }
    }
    write_csv(&out.join("stats.csv"), &rows)?;
    write_csv(&out.join("ttests.csv"), &tests)?;
    write_json(
        &out.join("stats.json"),
        &serde_json::json!({ "groups": summaries, "t_tests": test_json }),
    )?;
    Ok(vec!["stats.csv".into(), "ttests.csv".into(), "stats.json".into()])
}

fn suite_robustness(args: &EvalArgs, ts: &[Target], out: &Path) -> CliResult<Vec<String>> {
    let [a, b] = ts else {
        return usage("--suite robustness needs exactly two runs: one per world (source first)");
    };
    let (Some(pa), Some(pb)) = (&a.pretrained, &b.pretrained) else {
        return usage("--suite robustness needs runs that saved a pretrained pair");
    };
    let r = robustness_eval(
        &a.world,
        &b.world,
        (&a.speaker, &a.listener),
        (&b.speaker, &b.listener),
        (&pa.0, &pa.1),
        (&pb.0, &pb.1),
        b.config.world.k,
        b.config.world.distractors,
        args.episodes,
        args.seed.unwrap_or(b.config.seed),
    )?;
    let rows = vec![
        header(&[
            "config_hash_source",
            "config_hash_target",
            "ours_cross",
            "ours_within",
            "pretrained_cross",
            "pretrained_within",
        ]),
        vec![
            a.hash(),
            b.hash(),
            fmt_f(r.ours_cross),
            fmt_f(r.ours_within),
            fmt_f(r.pretrained_cross),
            fmt_f(r.pretrained_within),
        ],
    ];
    write_csv(&out.join("robustness.csv"), &rows)?;
    write_json(
        &out.join("robustness.json"),
        &serde_json::json!({
            "config_hash_source": a.hash(),
            "config_hash_target": b.hash(),
            "source": a.name,
            "target": b.name,
            "robustness": r,
        }),
    )?;
    Ok(vec!["robustness.csv".into(), "robustness.json".into()])
}
