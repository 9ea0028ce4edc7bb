use serde::{Deserialize, Serialize};

use super::accuracy::{referential_accuracy, Accuracy};
use super::stats::Summary;
use super::text::speaker_bleu;
use crate::agents::{Listener, Speaker};
use crate::error::{Error, Result};
use crate::game::{ListenerPolicy, OracleListener, OracleSpeaker, PlayMode, SpeakerPolicy};
use crate::rng::substream;
use crate::train::Population;
use crate::world::{CanonicalLanguage, DistractorMode, Object, World};

/// Shared settings of every accuracy measurement in this module.
#[derive(Clone, Debug)]
pub struct EvalSettings<'a> {
    pub objects: &'a [Object],
    pub k: usize,
    pub distractors: DistractorMode,
    pub episodes: usize,
    pub mode: PlayMode,
    pub seed: u64,
}

impl EvalSettings<'_> {
    /// Replays the episodes of `stream`, so results do not depend on the
    /// order in which measurements are taken.
    fn accuracy(
        &self,
        speaker: &dyn SpeakerPolicy,
        listener: &dyn ListenerPolicy,
        stream: u64,
    ) -> Result<Accuracy> {
        referential_accuracy(
            speaker,
            listener,
            self.objects,
            self.k,
            self.distractors,
            self.episodes,
            self.mode,
            &mut substream(self.seed, stream),
        )
    }
}

/// Accuracy of every meta-speaker with every meta-listener.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossPlay {
    /// `matrix[i][j]`: speaker `i` with listener `j`.
    pub matrix: Vec<Vec<f64>>,
    pub episodes_per_cell: usize,
    pub diag_mean: f64,
    /// Absent for a 1 x 1 matrix.
    pub off_diag_mean: Option<f64>,
    pub off_diag_std: Option<f64>,
}

impl CrossPlay {
    pub fn size(&self) -> usize {
        self.matrix.len()
    }

    /// `diag_mean - off_diag_mean`, when off-diagonal cells exist.
    pub fn gap(&self) -> Option<f64> {
        self.off_diag_mean.map(|o| self.diag_mean - o)
    }
}

pub fn crossplay(
    speakers: &[&Speaker],
    listeners: &[&Listener],
    settings: &EvalSettings<'_>,
) -> Result<CrossPlay> {
    let n = speakers.len();
    if n == 0 || listeners.len() != n {
        return Err(Error::InvalidArgument(format!(
            "cross-play needs as many speakers as listeners (got {n} and {})",
            listeners.len()
        )));
    }
    let arch = &speakers[0].arch;
    if speakers.iter().any(|s| s.arch.vocab != arch.vocab)
        || listeners.iter().any(|l| l.arch.vocab != arch.vocab)
    {
        return Err(Error::InvalidArgument(
            "cross-play agents do not share a vocabulary".into(),
        ));
    }
    // every cell sees the same episodes, so identical agents score identically
    let mut matrix = vec![vec![0.0; n]; n];
    let (mut diag, mut off) = (Vec::new(), Vec::new());
    for (i, s) in speakers.iter().enumerate() {
        for (j, l) in listeners.iter().enumerate() {
            let a = settings.accuracy(*s, *l, 0)?.value;
            matrix[i][j] = a;
            if i == j {
                diag.push(a);
            } else {
                off.push(a);
            }
        }
    }
    let off = (!off.is_empty()).then(|| Summary::of(&off)).transpose()?;
    Ok(CrossPlay {
        matrix,
        episodes_per_cell: settings.episodes,
        diag_mean: Summary::of(&diag)?.mean,
        off_diag_mean: off.map(|s| s.mean),
        off_diag_std: off.map(|s| s.std),
    })
}

/// Spread of a score over the buffer at one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityPoint {
    pub iteration: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub members: usize,
}

impl DiversityPoint {
    fn new(iteration: usize, values: &[f64]) -> Result<Self> {
        let s = Summary::of(values)?;
        Ok(Self {
            iteration,
            mean: s.mean,
            std: s.std,
            min: s.min,
            max: s.max,
            members: s.n,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityCurve {
    pub points: Vec<DiversityPoint>,
    /// What was measured, e.g. "accuracy" or "bleu".
    pub metric: String,
}

/// Accuracy of `listener` with each speaker in the buffer, iteration by
/// iteration. Each population member is evaluated once and reused.
pub fn diversity_curve(
    listener: &Listener,
    population: &Population,
    settings: &EvalSettings<'_>,
) -> Result<DiversityCurve> {
    let mut cache: Vec<Option<f64>> = vec![None; population.speakers.len()];
    let mut points = Vec::new();
    for (it, ids) in population.speaker_buffers.iter().enumerate() {
        let mut values = Vec::with_capacity(ids.len());
        for &id in ids {
            let v = match cache[id] {
                Some(v) => v,
                None => {
                    let v = settings.accuracy(&population.speakers[id], listener, 0)?.value;
                    cache[id] = Some(v);
                    v
                }
            };
            values.push(v);
        }
        points.push(DiversityPoint::new(it + 1, &values)?);
    }
    Ok(DiversityCurve {
        points,
        metric: "accuracy".into(),
    })
}

/// Canonical-language BLEU of each buffered speaker, iteration by iteration.
pub fn bleu_curve(
    population: &Population,
    lang: &CanonicalLanguage,
    objects: &[Object],
) -> Result<DiversityCurve> {
    let scores: Vec<f64> = population
        .speakers
        .iter()
        .map(|s| speaker_bleu(s, lang, objects).map(|b| b.score))
        .collect::<Result<_>>()?;
    let points = population
        .speaker_buffers
        .iter()
        .enumerate()
        .map(|(it, ids)| {
            let v: Vec<f64> = ids.iter().map(|&i| scores[i]).collect();
            DiversityPoint::new(it + 1, &v)
        })
        .collect::<Result<_>>()?;
    Ok(DiversityCurve {
        points,
        metric: "bleu".into(),
    })
}

/// Play against the rule-based players of the canonical language.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEval {
    pub speaker_with_oracle: Accuracy,
    pub oracle_with_listener: Accuracy,
    pub oracle_with_oracle: Accuracy,
}

pub fn oracle_eval(
    speaker: &dyn SpeakerPolicy,
    listener: &dyn ListenerPolicy,
    lang: &CanonicalLanguage,
    settings: &EvalSettings<'_>,
) -> Result<OracleEval> {
    let os = OracleSpeaker(lang.clone());
    let ol = OracleListener(lang.clone());
    Ok(OracleEval {
        speaker_with_oracle: settings.accuracy(speaker, &ol, 0)?,
        oracle_with_listener: settings.accuracy(&os, listener, 1)?,
        oracle_with_oracle: settings.accuracy(&os, &ol, 2)?,
    })
}

/// Accuracies on world B of pairs trained on world A (cross) and on
/// world B (within).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    pub ours_cross: f64,
    pub ours_within: f64,
    pub pretrained_cross: f64,
    pub pretrained_within: f64,
}

/// A trained speaker and listener.
pub type Pair<'a> = (&'a Speaker, &'a Listener);

/// Evaluate on world B's test split. Both worlds must share the token map.
#[allow(clippy::too_many_arguments)]
pub fn robustness_eval(
    world_a: &World,
    world_b: &World,
    ours_a: Pair<'_>,
    ours_b: Pair<'_>,
    pretrained_a: Pair<'_>,
    pretrained_b: Pair<'_>,
    k: usize,
    distractors: DistractorMode,
    episodes: usize,
    seed: u64,
) -> Result<Robustness> {
    if world_a.spec().vocab_hash() != world_b.spec().vocab_hash() {
        return Err(Error::WorldMismatch {
            expected: world_a.spec().vocab_hash(),
            found: world_b.spec().vocab_hash(),
        });
    }
    let settings = EvalSettings {
        objects: &world_b.split().test,
        k,
        distractors,
        episodes,
        mode: PlayMode::EVAL,
        seed,
    };
    // the same stream for every pair: differences come from the agents only
    let acc = |p: Pair<'_>| settings.accuracy(p.0, p.1, 0).map(|a| a.value);
    Ok(Robustness {
        ours_cross: acc(ours_a)?,
        ours_within: acc(ours_b)?,
        pretrained_cross: acc(pretrained_a)?,
        pretrained_within: acc(pretrained_b)?,
    })
}
