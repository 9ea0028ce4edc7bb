use std::collections::BTreeMap;
use std::path::PathBuf;

use dynpop::eval::{diversity_curve, referential_accuracy, svg, EvalSettings, Summary};
use dynpop::game::PlayMode;
use dynpop::rng::substream;

use crate::common::*;
use crate::eval::write_curve;

pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    pub episodes: usize,
    pub out: Option<PathBuf>,
}

struct Group {
    accuracies: Vec<f64>,
    hashes: Vec<String>,
}

pub fn report(args: ReportArgs) -> CliResult<PathBuf> {
    if args.runs.is_empty() {
        return usage("report needs at least one run directory");
    }
    let runs = args.runs.iter().map(|d| Run::load(d)).collect::<CliResult<Vec<_>>>()?;
    let out = args.out.clone().unwrap_or_else(|| out_root(None).join("report"));
    fresh_dir(&out)?;
    let hashes: Vec<String> = runs.iter().map(|r| r.config.hash()).collect();
    let mut manifest = RunManifest::start(
        "report",
        &hashes.join(";"),
        &runs[0].world.hash(),
        runs.iter().map(|r| r.config.seed).collect(),
    );
    manifest.inputs = args.runs.clone();
    manifest.save(&out)?;

    let mut files = vec!["report.csv".to_string(), "report.json".into(), "report.svg".into()];
    let outcome = (|| -> CliResult<()> {
        let mut groups: BTreeMap<String, Group> = BTreeMap::new();
        for r in &runs {
            let settings = EvalSettings {
                objects: &r.world.split().test,
                k: r.config.world.k,
                distractors: r.config.world.distractors,
                episodes: args.episodes,
                mode: PlayMode::EVAL,
                seed: r.config.seed,
            };
            let a = referential_accuracy(
                &r.speaker,
                &r.listener,
                settings.objects,
                settings.k,
                settings.distractors,
                settings.episodes,
                settings.mode,
                &mut substream(settings.seed, 0),
            )?;
            let g = groups.entry(r.label()).or_insert(Group {
                accuracies: Vec::new(),
                hashes: Vec::new(),
            });
            g.accuracies.push(a.value);
            g.hashes.push(r.config.hash());

            if let Some(pop) = r.population()? {
                let curve = diversity_curve(&r.listener, &pop, &settings)?;
                let base = format!("diversity_{}", r.name);
                write_curve(&out, &base, &r.config.hash(), &curve)?;
                write_text(
                    &out.join(format!("{base}.svg")),
                    &svg::band_chart(
                        &curve,
                        &format!("buffer accuracy: {}", r.name),
                        &format!("config {}", r.config.hash()),
                    ),
                )?;
                files.extend([format!("{base}.csv"), format!("{base}.svg")]);
            }
        }
        let mut table: Vec<(String, Summary, Vec<String>)> = groups
            .into_iter()
            .map(|(k, g)| Summary::of(&g.accuracies).map(|s| (k, s, g.hashes)))
            .collect::<dynpop::Result<_>>()?;
        // best first; ties keep name order
        table.sort_by(|a, b| b.1.mean.total_cmp(&a.1.mean));

        let mut rows = vec![["config_hashes", "method", "n", "mean", "std", "min", "max"]
            .map(String::from)
            .to_vec()];
        for (name, s, h) in &table {
            rows.push(vec![
                h.join(";"),
                name.clone(),
                s.n.to_string(),
                fmt_f(s.mean),
                fmt_f(s.std),
                fmt_f(s.min),
                fmt_f(s.max),
            ]);
        }
        write_csv(&out.join("report.csv"), &rows)?;
        write_json(
            &out.join("report.json"),
            &table
                .iter()
                .map(|(n, s, h)| serde_json::json!({ "method": n, "summary": s, "config_hashes": h }))
                .collect::<Vec<_>>(),
        )?;
        let bars: Vec<(String, f64, f64)> =
            table.iter().map(|(n, s, _)| (n.clone(), s.mean, s.std)).collect();
        write_text(
            &out.join("report.svg"),
            &svg::bar_chart(&bars, "test accuracy by method", "accuracy", &format!("config {}", hashes.join(";"))),
        )?;
        for (name, s, _) in &table {
            println!("{name:<22} {:.3} ± {:.3}  (n = {})", s.mean, s.std, s.n);
        }
        Ok(())
    })();
    for f in files {
        manifest.outputs.insert(f.clone(), PathBuf::from(f));
    }
    manifest.finish(&out, &outcome)?;
    outcome.map(|()| out)
}
