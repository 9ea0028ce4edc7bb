//! Training objectives, recorded on a tape so they can be differentiated
//! (and, for the meta-agents, differentiated through an inner update).

use rand::Rng;

use super::config::{ListenerSupLoss, LossConfig};
use crate::agents::{listener_log_probs, rollout, teacher_force, Architecture, Decode};
use crate::error::{Error, Result};
use crate::game::{pick_index, reward, Pick, Round};
use crate::grad::{Tape, Tensor, Var};
use crate::world::Object;

/// Result of one batch of self-play on a tape.
#[derive(Clone, Debug)]
pub struct InteractiveTerms {
    pub speaker_loss: Var,
    pub listener_loss: Var,
    pub rewards: Vec<f64>,
    /// Sampled listener predictions (candidate indices).
    pub picks: Vec<usize>,
    pub correct: usize,
}

impl InteractiveTerms {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.rewards.len().max(1) as f64
    }
}

fn batch_mean(tape: &mut Tape, per_example: Var) -> Result<Var> {
    let n = tape.shape(per_example)[0];
    let s = tape.sum(per_example)?;
    tape.scale(s, 1.0 / n as f64)
}

fn weighted(tape: &mut Tape, v: Var, w: Vec<f64>) -> Result<Var> {
    let c = tape.constant(Tensor::column(w));
    tape.mul(v, c)
}

/// Speaker and listener losses for one batch of rounds.
///
/// The speaker samples a message for every target; the listener samples a
/// prediction from its distribution; the reward is a constant. Either side
/// may be recorded as constants when it is a frozen partner.
///
/// Speaker, per example: `-(r / l) * sum_j log p(m_j) - lambda_hs * H_S`
/// where `H_S` is the mean step entropy over the `l` emitted tokens.
/// Listener, per example: `-r log p(t') - lambda_s log p(t) - lambda_hl * H_L`.
/// Both are averaged over the batch.
pub fn interactive_losses<R: Rng + ?Sized>(
    arch: &Architecture,
    tape: &mut Tape,
    speaker: &[Var],
    listener: &[Var],
    rounds: &[Round],
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<InteractiveTerms> {
    if rounds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let targets: Vec<&Object> = rounds.iter().map(|r| &r.target).collect();
    let roll = rollout(arch, tape, speaker, &targets, Decode::Sample, rng)?;
    let tokens: Vec<&[usize]> = roll.tokens.iter().map(Vec::as_slice).collect();
    let cand_refs: Vec<Vec<&Object>> = rounds.iter().map(Round::candidate_refs).collect();
    let cands: Vec<&[&Object]> = cand_refs.iter().map(Vec::as_slice).collect();
    let lp = listener_log_probs(arch, tape, listener, &tokens, &cands)?;

    let picks: Vec<usize> = {
        let dist = tape.value(lp);
        (0..rounds.len())
            .map(|b| {
                let probs: Vec<f64> = dist.row_slice(b).iter().map(|l| l.exp()).collect();
                pick_index(&probs, Pick::Sample, rng)
            })
            .collect()
    };
    let rewards: Vec<f64> = rounds
        .iter()
        .zip(&picks)
        .map(|(r, &p)| reward(p == r.target_index))
        .collect();
    let correct = rounds
        .iter()
        .zip(&picks)
        .filter(|(r, &p)| p == r.target_index)
        .count();
    let mean_r = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let adv: Vec<f64> = rewards
        .iter()
        .map(|r| if cfg.reward_baseline { r - mean_r } else { *r })
        .collect();

    let lens = roll.lengths();
    let pg = weighted(
        tape,
        roll.log_prob,
        adv.iter().zip(&lens).map(|(a, &l)| -a / l as f64).collect(),
    )?;
    let ent = weighted(
        tape,
        roll.entropy,
        lens.iter().map(|&l| -cfg.lambda_hs / l as f64).collect(),
    )?;
    let spk = tape.add(pg, ent)?;
    let speaker_loss = batch_mean(tape, spk)?;

    let chosen = tape.pick_cols(lp, &picks)?;
    let chosen = weighted(tape, chosen, adv.iter().map(|a| -a).collect())?;
    let tgt: Vec<usize> = rounds.iter().map(|r| r.target_index).collect();
    let sup = tape.pick_cols(lp, &tgt)?;
    let sup = tape.scale(sup, -cfg.lambda_s)?;
    let h = crate::agents::row_entropy(tape, lp)?;
    let h = tape.scale(h, -cfg.lambda_hl)?;
    let lis = tape.add(chosen, sup)?;
    let lis = tape.add(lis, h)?;
    let listener_loss = batch_mean(tape, lis)?;

    Ok(InteractiveTerms {
        speaker_loss,
        listener_loss,
        rewards,
        picks,
        correct,
    })
}

/// Teacher-forced cross-entropy of reference descriptions, each averaged
/// over its own length, then over the batch.
pub fn speaker_supervised_loss(
    arch: &Architecture,
    tape: &mut Tape,
    speaker: &[Var],
    objects: &[&Object],
    messages: &[&[usize]],
) -> Result<Var> {
    if objects.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let r = teacher_force(arch, tape, speaker, objects, messages)?;
    let w = r.lengths().iter().map(|&l| -1.0 / l as f64).collect();
    let per = weighted(tape, r.log_prob, w)?;
    batch_mean(tape, per)
}

/// Listener grounding loss on reference descriptions: `-p(target)` or
/// `-log p(target)`, averaged over the batch.
pub fn listener_supervised_loss(
    arch: &Architecture,
    tape: &mut Tape,
    listener: &[Var],
    messages: &[&[usize]],
    rounds: &[Round],
    kind: ListenerSupLoss,
) -> Result<Var> {
    if rounds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let cand_refs: Vec<Vec<&Object>> = rounds.iter().map(Round::candidate_refs).collect();
    let cands: Vec<&[&Object]> = cand_refs.iter().map(Vec::as_slice).collect();
    let lp = listener_log_probs(arch, tape, listener, messages, &cands)?;
    let tgt: Vec<usize> = rounds.iter().map(|r| r.target_index).collect();
    let t = tape.pick_cols(lp, &tgt)?;
    let t = match kind {
        ListenerSupLoss::Probability => tape.exp(t)?,
        ListenerSupLoss::LogProbability => t,
    };
    let t = tape.neg(t)?;
    batch_mean(tape, t)
}

/// Mean per-token `KL(reference || current)` of speaker step distributions
/// on teacher-forced messages. `reference` holds the frozen policy's
/// parameters (usually as constants).
pub fn speaker_kl(
    arch: &Architecture,
    tape: &mut Tape,
    reference: &[Var],
    current: &[Var],
    objects: &[&Object],
    messages: &[&[usize]],
) -> Result<Var> {
    let r_ref = teacher_force(arch, tape, reference, objects, messages)?;
    let r_cur = teacher_force(arch, tape, current, objects, messages)?;
    let tokens: usize = r_cur.lengths().iter().sum();
    let mut total: Option<Var> = None;
    for (step, (&lp_ref, &lp_cur)) in r_ref
        .step_log_probs
        .iter()
        .zip(&r_cur.step_log_probs)
        .enumerate()
    {
        let kl = kl_rows(tape, lp_ref, lp_cur)?;
        let mask = r_cur.step_active[step]
            .iter()
            .map(|&a| if a { 1.0 } else { 0.0 })
            .collect();
        let kl = weighted(tape, kl, mask)?;
        let s = tape.sum(kl)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = total.ok_or(Error::EmptyBatch)?;
    tape.scale(total, 1.0 / tokens.max(1) as f64)
}

/// Mean `KL(reference || current)` of listener candidate distributions.
pub fn listener_kl(
    arch: &Architecture,
    tape: &mut Tape,
    reference: &[Var],
    current: &[Var],
    messages: &[&[usize]],
    rounds: &[Round],
) -> Result<Var> {
    let cand_refs: Vec<Vec<&Object>> = rounds.iter().map(Round::candidate_refs).collect();
    let cands: Vec<&[&Object]> = cand_refs.iter().map(Vec::as_slice).collect();
    let lp_ref = listener_log_probs(arch, tape, reference, messages, &cands)?;
    let lp_cur = listener_log_probs(arch, tape, current, messages, &cands)?;
    let kl = kl_rows(tape, lp_ref, lp_cur)?;
    batch_mean(tape, kl)
}

/// Row-wise `sum p_ref (log p_ref - log p_cur)` of two `[B, c]` log-distributions.
fn kl_rows(tape: &mut Tape, lp_ref: Var, lp_cur: Var) -> Result<Var> {
    let p = tape.exp(lp_ref)?;
    let d = tape.sub(lp_ref, lp_cur)?;
    let pd = tape.mul(p, d)?;
    tape.sum_cols(pd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Listener, Speaker};
    use crate::world::{CanonicalLanguage, DistractorMode, World, WorldSpec};

    fn setup() -> (World, Architecture, Speaker, Listener) {
        let w = World::new(WorldSpec::uniform(2, 4, 0).with_splits(4, 2, 0)).unwrap();
        let arch = Architecture::for_world(w.spec(), 6, 4);
        let s = Speaker::new(arch.clone(), &mut crate::rng::seeded(1)).unwrap();
        let l = Listener::new(arch.clone(), &mut crate::rng::seeded(2)).unwrap();
        (w, arch, s, l)
    }

    fn uniform_listener(l: &Listener) -> Listener {
        let mut l = l.clone();
        let idx = l.params.index_of("obj.w").unwrap();
        let mut t = l.params.tensors();
        t[idx] = Tensor::zeros(t[idx].rows(), t[idx].cols());
        t[idx + 1] = Tensor::zeros(1, t[idx + 1].cols());
        l.params.set_tensors(&t).unwrap();
        l
    }

    #[test]
    fn uniform_listener_literal_loss_is_minus_one_over_n() {
        let (w, arch, _, l) = setup();
        let l = uniform_listener(&l);
        let lang = CanonicalLanguage::new(w.spec());
        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(0);
        let rounds: Vec<Round> = pool[..5]
            .iter()
            .map(|t| Round::sample(t, 9, DistractorMode::Uniform, pool, &mut rng).unwrap())
            .collect();
        let msgs: Vec<Vec<usize>> = rounds.iter().map(|r| lang.describe(&r.target).tokens).collect();
        let m: Vec<&[usize]> = msgs.iter().map(Vec::as_slice).collect();
        for (kind, want) in [
            (ListenerSupLoss::Probability, -0.1),
            (ListenerSupLoss::LogProbability, 10f64.ln()),
        ] {
            let mut tape = Tape::new();
            let v = l.params.on_tape(&mut tape, true);
            let loss = listener_supervised_loss(&arch, &mut tape, &v, &m, &rounds, kind).unwrap();
            assert!((tape.value(loss).item() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let (w, arch, s, l) = setup();
        let lang = CanonicalLanguage::new(w.spec());
        let objs: Vec<&Object> = w.split().train[..6].iter().collect();
        let msgs: Vec<Vec<usize>> = objs.iter().map(|o| lang.describe(o).tokens).collect();
        let m: Vec<&[usize]> = msgs.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let a = s.params.on_tape(&mut tape, false);
        let b = s.params.on_tape(&mut tape, true);
        let kl = speaker_kl(&arch, &mut tape, &a, &b, &objs, &m).unwrap();
        assert!(tape.value(kl).item().abs() < 1e-12);

        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(3);
        let rounds: Vec<Round> = w.split().train[..6]
            .iter()
            .map(|t| Round::sample(t, 3, DistractorMode::Uniform, pool, &mut rng).unwrap())
            .collect();
        let a = l.params.on_tape(&mut tape, false);
        let b = l.params.on_tape(&mut tape, true);
        let kl = listener_kl(&arch, &mut tape, &a, &b, &m, &rounds).unwrap();
        assert!(tape.value(kl).item().abs() < 1e-12);
    }

    #[test]
    fn all_correct_listener_loss_is_mean_neg_log_prob() {
        let (w, arch, s, l) = setup();
        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(4);
        let rounds: Vec<Round> = pool[..8]
            .iter()
            .map(|t| Round::sample(t, 0, DistractorMode::Uniform, pool, &mut rng).unwrap())
            .collect();
        let cfg = LossConfig {
            lambda_hs: 0.0,
            lambda_hl: 0.0,
            lambda_s: 0.0,
            ..LossConfig::default()
        };
        let mut tape = Tape::new();
        let sv = s.params.on_tape(&mut tape, false);
        let lv = l.params.on_tape(&mut tape, true);
        let t = interactive_losses(&arch, &mut tape, &sv, &lv, &rounds, &cfg, &mut rng).unwrap();
        assert_eq!(t.correct, 8);
        // K = 0: log p(t') = 0
        assert!(tape.value(t.listener_loss).item().abs() < 1e-12);
    }

    #[test]
    fn listener_loss_without_regularisers_is_reward_weighted_nll() {
        let (w, arch, s, l) = setup();
        let pool = &w.split().train;
        let mut rng = crate::rng::seeded(5);
        let rounds: Vec<Round> = pool[..10]
            .iter()
            .map(|t| Round::sample(t, 3, DistractorMode::Uniform, pool, &mut rng).unwrap())
            .collect();
        let cfg = LossConfig {
            lambda_hs: 0.0,
            lambda_hl: 0.0,
            lambda_s: 0.0,
            ..LossConfig::default()
        };
        let mut tape = Tape::new();
        let sv = s.params.on_tape(&mut tape, false);
        let lv = l.params.on_tape(&mut tape, true);
        let mut r2 = crate::rng::seeded(6);
        let t = interactive_losses(&arch, &mut tape, &sv, &lv, &rounds, &cfg, &mut r2).unwrap();
        // replay the same draws to recover the messages
        let mut r3 = crate::rng::seeded(6);
        let targets: Vec<Object> = rounds.iter().map(|r| r.target.clone()).collect();
        let msgs = s.speak(&targets, Decode::Sample, &mut r3).unwrap();
        let mut want = 0.0;
        for (b, r) in rounds.iter().enumerate() {
            let p = l.listen(&msgs[b].tokens, &r.candidates).unwrap();
            want -= t.rewards[b] * p[t.picks[b]].ln();
        }
        want /= rounds.len() as f64;
        assert!((tape.value(t.listener_loss).item() - want).abs() < 1e-10);
    }
}
