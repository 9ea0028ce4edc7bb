//! Referential game episodes.
//!
//! A round shows the listener the target and `K` distractors in a random
//! order; the speaker only sees the target. The reward is `1` when the
//! listener picks the target and `-0.1` otherwise.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Decode, Listener, Speaker};
use crate::error::{Error, Result};
use crate::grad::Tensor;
use crate::message::Message;
use crate::world::{sample_distractors, CanonicalLanguage, DistractorMode, Object};

pub const REWARD_CORRECT: f64 = 1.0;
pub const REWARD_WRONG: f64 = -0.1;

pub fn reward(correct: bool) -> f64 {
    if correct {
        REWARD_CORRECT
    } else {
        REWARD_WRONG
    }
}

/// Target plus shuffled candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub target: Object,
    pub distractors: Vec<Object>,
    /// Target and distractors in presentation order.
    pub candidates: Vec<Object>,
    pub target_index: usize,
}

impl Round {
    /// Fresh distractors from `pool`, then a uniform shuffle of the candidates.
    pub fn sample<R: Rng + ?Sized>(
        target: &Object,
        k: usize,
        mode: DistractorMode,
        pool: &[Object],
        rng: &mut R,
    ) -> Result<Self> {
        let distractors = sample_distractors(target, k, mode, pool, rng)?;
        let mut candidates = Vec::with_capacity(k + 1);
        candidates.push(target.clone());
        candidates.extend(distractors.iter().cloned());
        crate::rng::shuffle(&mut candidates, rng);
        let target_index = candidates
            .iter()
            .position(|c| c == target)
            .expect("target is a candidate");
        Ok(Self {
            target: target.clone(),
            distractors,
            candidates,
            target_index,
        })
    }

    pub fn candidate_refs(&self) -> Vec<&Object> {
        self.candidates.iter().collect()
    }
}

pub fn sample_rounds<R: Rng + ?Sized>(
    targets: &[Object],
    k: usize,
    mode: DistractorMode,
    pool: &[Object],
    rng: &mut R,
) -> Result<Vec<Round>> {
    targets
        .iter()
        .map(|t| Round::sample(t, k, mode, pool, rng))
        .collect()
}

/// How the listener turns its distribution into a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pick {
    Sample,
    /// Most probable candidate, lowest index on ties.
    Argmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayMode {
    pub decode: Decode,
    pub pick: Pick,
}

impl PlayMode {
    /// Sampled messages and sampled predictions.
    pub const TRAIN: PlayMode = PlayMode {
        decode: Decode::Sample,
        pick: Pick::Sample,
    };
    /// Greedy messages and argmax predictions.
    pub const EVAL: PlayMode = PlayMode {
        decode: Decode::Greedy,
        pick: Pick::Argmax,
    };
}

/// Anything that can describe objects.
pub trait SpeakerPolicy {
    fn messages(&self, objects: &[Object], decode: Decode, rng: &mut dyn rand::RngCore)
        -> Result<Vec<Message>>;
}

/// Anything that can score candidates given a message.
pub trait ListenerPolicy {
    /// One distribution over `candidates[b]` per message.
    fn distributions(&self, messages: &[&[usize]], candidates: &[&[&Object]]) -> Result<Vec<Vec<f64>>>;
}

impl SpeakerPolicy for Speaker {
    fn messages(
        &self,
        objects: &[Object],
        decode: Decode,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<Message>> {
        self.speak(objects, decode, rng)
    }
}

impl ListenerPolicy for Listener {
    fn distributions(&self, messages: &[&[usize]], candidates: &[&[&Object]]) -> Result<Vec<Vec<f64>>> {
        let t: Tensor = self.listen_batch(messages, candidates)?;
        Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
    }
}

/// The canonical description of every object, regardless of decoding mode.
#[derive(Clone, Debug)]
pub struct OracleSpeaker(pub CanonicalLanguage);

impl SpeakerPolicy for OracleSpeaker {
    fn messages(&self, objects: &[Object], _: Decode, _: &mut dyn rand::RngCore) -> Result<Vec<Message>> {
        Ok(objects.iter().map(|o| self.0.oracle_speaker(o)).collect())
    }
}

/// Parses messages with the canonical language; all mass on its choice.
#[derive(Clone, Debug)]
pub struct OracleListener(pub CanonicalLanguage);

impl ListenerPolicy for OracleListener {
    fn distributions(&self, messages: &[&[usize]], candidates: &[&[&Object]]) -> Result<Vec<Vec<f64>>> {
        Ok(messages
            .iter()
            .zip(candidates)
            .map(|(m, c)| {
                let owned: Vec<Object> = c.iter().map(|&o| o.clone()).collect();
                let pick = self.0.oracle_listener(m, &owned);
                let mut d = vec![0.0; c.len()];
                d[pick] = 1.0;
                d
            })
            .collect())
    }
}

/// Uniform over candidates.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformListener;

impl ListenerPolicy for UniformListener {
    fn distributions(&self, _: &[&[usize]], candidates: &[&[&Object]]) -> Result<Vec<Vec<f64>>> {
        Ok(candidates
            .iter()
            .map(|c| vec![1.0 / c.len() as f64; c.len()])
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub round: Round,
    pub message: Message,
    pub listener_probs: Vec<f64>,
    pub prediction: usize,
    pub reward: f64,
}

impl Episode {
    pub fn correct(&self) -> bool {
        self.prediction == self.round.target_index
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeBatch {
    pub episodes: Vec<Episode>,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn accuracy(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.correct()).count() as f64 / self.len() as f64
    }

    pub fn mean_reward(&self) -> f64 {
        self.episodes.iter().map(|e| e.reward).sum::<f64>() / self.len().max(1) as f64
    }

    /// One JSON object per line: target, distractors, tokens, prediction, reward.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.episodes {
            let line = serde_json::json!({
                "target": e.round.target.values,
                "distractors": e.round.distractors.iter().map(|d| &d.values).collect::<Vec<_>>(),
                "candidates": e.round.candidates.iter().map(|d| &d.values).collect::<Vec<_>>(),
                "target_index": e.round.target_index,
                "tokens": e.message.tokens,
                "prediction": e.prediction,
                "reward": e.reward,
            });
            writeln!(out, "{line}").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}

pub fn pick_index<R: Rng + ?Sized>(probs: &[f64], pick: Pick, rng: &mut R) -> usize {
    match pick {
        Pick::Sample => crate::rng::categorical(probs, rng),
        Pick::Argmax => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
    }
}

/// Play already-sampled rounds.
pub fn play_rounds<R: Rng>(
    speaker: &dyn SpeakerPolicy,
    listener: &dyn ListenerPolicy,
    rounds: Vec<Round>,
    mode: PlayMode,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if rounds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets: Vec<Object> = rounds.iter().map(|r| r.target.clone()).collect();
    let messages = speaker.messages(&targets, mode.decode, rng)?;
    let toks: Vec<&[usize]> = messages.iter().map(|m| m.tokens.as_slice()).collect();
    let cand_refs: Vec<Vec<&Object>> = rounds.iter().map(Round::candidate_refs).collect();
    let cands: Vec<&[&Object]> = cand_refs.iter().map(Vec::as_slice).collect();
    let dists = listener.distributions(&toks, &cands)?;
    let episodes = rounds
        .into_iter()
        .zip(messages)
        .zip(dists)
        .map(|((round, message), probs)| {
            let prediction = pick_index(&probs, mode.pick, rng);
            let reward = reward(prediction == round.target_index);
            Episode {
                round,
                message,
                listener_probs: probs,
                prediction,
                reward,
            }
        })
        .collect();
    Ok(EpisodeBatch { episodes })
}

/// Sample rounds for `targets` and play them. Rounds are drawn first (in
/// target order), then messages, then predictions.
#[allow(clippy::too_many_arguments)]
pub fn play_batch<R: Rng>(
    speaker: &dyn SpeakerPolicy,
    listener: &dyn ListenerPolicy,
    targets: &[Object],
    k: usize,
    distractors: DistractorMode,
    pool: &[Object],
    mode: PlayMode,
    rng: &mut R,
) -> Result<EpisodeBatch> {
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let rounds = sample_rounds(targets, k, distractors, pool, rng)?;
    play_rounds(speaker, listener, rounds, mode, rng)
}

/// A single episode; identical to a batch of one.
pub fn play<R: Rng>(
    speaker: &dyn SpeakerPolicy,
    listener: &dyn ListenerPolicy,
    round: Round,
    mode: PlayMode,
    rng: &mut R,
) -> Result<Episode> {
    let mut b = play_rounds(speaker, listener, vec![round], mode, rng)?;
    Ok(b.episodes.pop().expect("one episode"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Architecture;
    use crate::world::{World, WorldSpec};

    fn world() -> World {
        World::new(WorldSpec::uniform(4, 6, 0).with_splits(200, 100, 0)).unwrap()
    }

    fn oracles(w: &World) -> (OracleSpeaker, OracleListener) {
        let lang = CanonicalLanguage::new(w.spec());
        (OracleSpeaker(lang.clone()), OracleListener(lang))
    }

    #[test]
    fn reward_rule() {
        assert_eq!(reward(true), 1.0);
        assert_eq!(reward(false), -0.1);
    }

    #[test]
    fn oracle_pair_is_perfect() {
        let w = world();
        let (s, l) = oracles(&w);
        let pool = &w.split().test;
        let mut rng = crate::rng::seeded(0);
        let b = play_batch(&s, &l, &pool[..100], 9, DistractorMode::Uniform, pool, PlayMode::EVAL, &mut rng)
            .unwrap();
        assert_eq!(b.accuracy(), 1.0);
        assert!(b.episodes.iter().all(|e| e.reward == 1.0));
    }

    #[test]
    fn zero_distractors_always_win() {
        let w = world();
        let arch = Architecture::for_world(w.spec(), 8, 4);
        let s = Speaker::new(arch.clone(), &mut crate::rng::seeded(1)).unwrap();
        let l = Listener::new(arch, &mut crate::rng::seeded(2)).unwrap();
        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(3);
        let b = play_batch(&s, &l, &pool[..20], 0, DistractorMode::Uniform, pool, PlayMode::TRAIN, &mut rng)
            .unwrap();
        assert!(b.episodes.iter().all(|e| e.reward == 1.0 && e.listener_probs == vec![1.0]));
    }

    #[test]
    fn wrong_pick_gets_negative_reward() {
        let w = world();
        let (s, _) = oracles(&w);
        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(4);
        let b = play_batch(&s, &UniformListener, &pool[..200], 4, DistractorMode::Uniform, pool, PlayMode::EVAL, &mut rng)
            .unwrap();
        for e in &b.episodes {
            assert_eq!(e.prediction, 0);
            assert_eq!(e.reward, if e.round.target_index == 0 { 1.0 } else { -0.1 });
        }
    }

    #[test]
    fn batch_of_one_equals_play() {
        let w = world();
        let arch = Architecture::for_world(w.spec(), 8, 4);
        let s = Speaker::new(arch.clone(), &mut crate::rng::seeded(5)).unwrap();
        let l = Listener::new(arch, &mut crate::rng::seeded(6)).unwrap();
        let pool = &w.split().train;
        let t = pool[7].clone();
        let mut r1 = crate::rng::seeded(9);
        let b = play_batch(&s, &l, &[t.clone()], 4, DistractorMode::Uniform, pool, PlayMode::TRAIN, &mut r1)
            .unwrap();
        let mut r2 = crate::rng::seeded(9);
        let round = Round::sample(&t, 4, DistractorMode::Uniform, pool, &mut r2).unwrap();
        let e = play(&s, &l, round, PlayMode::TRAIN, &mut r2).unwrap();
        assert_eq!(b.episodes[0], e);
    }

    #[test]
    fn trace_lines() {
        let w = world();
        let (s, l) = oracles(&w);
        let pool = &w.split().test;
        let b = play_batch(&s, &l, &pool[..3], 2, DistractorMode::Uniform, pool, PlayMode::EVAL, &mut crate::rng::seeded(0))
            .unwrap();
        let mut buf = Vec::new();
        b.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["reward"], 1.0);
        assert_eq!(v["distractors"].as_array().unwrap().len(), 2);
    }
}
