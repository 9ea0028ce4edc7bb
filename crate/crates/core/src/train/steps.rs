//! Single optimisation steps: supervised grounding, interactive play and
//! the meta-agent updates.

use rand::Rng;

use super::config::{LossConfig, MetaVariant, TrainConfig};
use super::losses::{
    interactive_losses, listener_kl, listener_supervised_loss, speaker_kl, speaker_supervised_loss,
};
use crate::agents::{Agent, Architecture, Listener, Speaker};
use crate::error::{Error, Result};
use crate::game::{sample_rounds, Round};
use crate::grad::{grad_through_update, sgd_step, AdamState, Tape, Tensor, Var};
use crate::world::{DistractorMode, GroundingDataset, Object};

/// A model with its optimiser state.
#[derive(Clone, Debug)]
pub struct Trainable<M> {
    pub model: M,
    pub opt: AdamState,
}

impl<M: Agent> Trainable<M> {
    pub fn new(model: M, lr: f64, clip: Option<f64>) -> Self {
        let opt = AdamState::for_store(model.params(), lr).with_clip_norm(clip);
        Self { model, opt }
    }

    pub fn apply(&mut self, grads: &[Tensor]) -> Result<()> {
        self.opt.step(self.model.params_mut(), grads)
    }
}

/// A partner in an interactive step: updated or frozen.
pub enum Side<'a, M> {
    Train(&'a mut Trainable<M>),
    Frozen(&'a M),
}

impl<M: Agent> Side<'_, M> {
    fn model(&self) -> &M {
        match self {
            Side::Train(t) => &t.model,
            Side::Frozen(m) => m,
        }
    }

    fn trains(&self) -> bool {
        matches!(self, Side::Train(_))
    }
}

/// Losses and batch statistics of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub speaker_loss: f64,
    pub listener_loss: f64,
    pub accuracy: f64,
    pub mean_reward: f64,
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("{what} loss became {v}")))
    }
}

fn draw<'a, R: Rng + ?Sized>(pool: &'a [Object], n: usize, rng: &mut R) -> Result<Vec<Object>> {
    if pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok((0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect())
}

/// Rounds whose targets and distractors both come from `pool`.
pub fn rounds_from<R: Rng + ?Sized>(
    pool: &[Object],
    n: usize,
    k: usize,
    mode: DistractorMode,
    rng: &mut R,
) -> Result<Vec<Round>> {
    let targets = draw(pool, n, rng)?;
    sample_rounds(&targets, k, mode, pool, rng)
}

fn dataset_batch<'a, R: Rng + ?Sized>(
    data: &'a GroundingDataset,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(&'a Object, &'a [usize])>> {
    if data.is_empty() || n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok((0..n)
        .map(|_| {
            let (o, m) = &data.pairs[rng.random_range(0..data.len())];
            (o, m.tokens.as_slice())
        })
        .collect())
}

/// One Adam step on the speaker's teacher-forced cross-entropy.
pub fn supervised_speaker_step<R: Rng + ?Sized>(
    speaker: &mut Trainable<Speaker>,
    data: &GroundingDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    let batch = dataset_batch(data, batch_size, rng)?;
    let objs: Vec<&Object> = batch.iter().map(|(o, _)| *o).collect();
    let msgs: Vec<&[usize]> = batch.iter().map(|(_, m)| *m).collect();
    let mut tape = Tape::new();
    let vars = speaker.model.params.on_tape(&mut tape, true);
    let loss = speaker_supervised_loss(&speaker.model.arch, &mut tape, &vars, &objs, &msgs)?;
    let value = check_finite("supervised speaker", tape.value(loss).item())?;
    let grads = tape.backward(loss, &vars)?;
    speaker.apply(&grads)?;
    Ok(value)
}

/// One Adam step on the listener's grounding loss. Distractors come from `pool`.
#[allow(clippy::too_many_arguments)]
pub fn supervised_listener_step<R: Rng + ?Sized>(
    listener: &mut Trainable<Listener>,
    data: &GroundingDataset,
    pool: &[Object],
    k: usize,
    mode: DistractorMode,
    cfg: &LossConfig,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    let batch = dataset_batch(data, batch_size, rng)?;
    let targets: Vec<Object> = batch.iter().map(|(o, _)| (*o).clone()).collect();
    let msgs: Vec<&[usize]> = batch.iter().map(|(_, m)| *m).collect();
    let rounds = sample_rounds(&targets, k, mode, pool, rng)?;
    let mut tape = Tape::new();
    let vars = listener.model.params.on_tape(&mut tape, true);
    let loss = listener_supervised_loss(
        &listener.model.arch,
        &mut tape,
        &vars,
        &msgs,
        &rounds,
        cfg.listener_sup,
    )?;
    let value = check_finite("supervised listener", tape.value(loss).item())?;
    let grads = tape.backward(loss, &vars)?;
    listener.apply(&grads)?;
    Ok(value)
}

/// Frozen reference policies and reference descriptions for the
/// KL-regularised variant of interactive learning.
pub struct KlAnchor<'a> {
    pub speaker: &'a Speaker,
    pub listener: &'a Listener,
    pub data: &'a GroundingDataset,
    pub weight_int: f64,
}

/// One batch of play; every trainable side takes one Adam step on its loss.
///
/// With an anchor the objectives become `lambda_int * J_int + KL(ref || current)`,
/// with the KL measured on reference descriptions from the dataset.
pub fn interactive_step<R: Rng + ?Sized>(
    mut speaker: Side<'_, Speaker>,
    mut listener: Side<'_, Listener>,
    rounds: &[Round],
    cfg: &LossConfig,
    anchor: Option<&KlAnchor<'_>>,
    rng: &mut R,
) -> Result<StepStats> {
    let arch = speaker.model().arch.clone();
    let mut tape = Tape::new();
    let sv = speaker.model().params.on_tape(&mut tape, speaker.trains());
    let lv = listener.model().params.on_tape(&mut tape, listener.trains());
    let terms = interactive_losses(&arch, &mut tape, &sv, &lv, rounds, cfg, rng)?;
    let mut spk_loss = terms.speaker_loss;
    let mut lis_loss = terms.listener_loss;
    if let Some(a) = anchor {
        let batch = dataset_batch(a.data, rounds.len(), rng)?;
        let objs: Vec<&Object> = batch.iter().map(|(o, _)| *o).collect();
        let msgs: Vec<&[usize]> = batch.iter().map(|(_, m)| *m).collect();
        if speaker.trains() {
            let rv = a.speaker.params.on_tape(&mut tape, false);
            let kl = speaker_kl(&arch, &mut tape, &rv, &sv, &objs, &msgs)?;
            let w = tape.scale(spk_loss, a.weight_int)?;
            spk_loss = tape.add(w, kl)?;
        }
        if listener.trains() {
            let targets: Vec<Object> = objs.iter().map(|o| (*o).clone()).collect();
            let pool: Vec<Object> = rounds.iter().flat_map(|r| r.candidates.clone()).collect();
            let k = rounds[0].candidates.len() - 1;
            let kl_rounds = ground_rounds(&targets, k, &pool, rng)?;
            let rv = a.listener.params.on_tape(&mut tape, false);
            let kl = listener_kl(&arch, &mut tape, &rv, &lv, &msgs, &kl_rounds)?;
            let w = tape.scale(lis_loss, a.weight_int)?;
            lis_loss = tape.add(w, kl)?;
        }
    }
    let stats = StepStats {
        speaker_loss: check_finite("interactive speaker", tape.value(spk_loss).item())?,
        listener_loss: check_finite("interactive listener", tape.value(lis_loss).item())?,
        accuracy: terms.accuracy(),
        mean_reward: terms.rewards.iter().sum::<f64>() / terms.rewards.len() as f64,
    };
    let mut wrt: Vec<Var> = Vec::new();
    let mut total: Option<Var> = None;
    if speaker.trains() {
        wrt.extend(&sv);
        total = Some(spk_loss);
    }
    if listener.trains() {
        wrt.extend(&lv);
        total = Some(match total {
            Some(t) => tape.add(t, lis_loss)?,
            None => lis_loss,
        });
    }
    let Some(total) = total else {
        return Ok(stats);
    };
    // speaker and listener losses share no parameters, so one pass suffices
    let grads = tape.backward(total, &wrt)?;
    let (gs, gl) = grads.split_at(if speaker.trains() { sv.len() } else { 0 });
    if let Side::Train(t) = &mut speaker {
        t.apply(gs)?;
    }
    if let Side::Train(t) = &mut listener {
        t.apply(gl)?;
    }
    Ok(stats)
}

fn ground_rounds<R: Rng + ?Sized>(
    targets: &[Object],
    k: usize,
    pool: &[Object],
    rng: &mut R,
) -> Result<Vec<Round>> {
    let mut pool: Vec<Object> = pool.to_vec();
    pool.sort();
    pool.dedup();
    pool.extend(targets.iter().cloned());
    pool.sort();
    pool.dedup();
    sample_rounds(targets, k, DistractorMode::Uniform, &pool, rng)
}

/// Everything a meta step needs besides the meta-agent and the population.
pub struct MetaContext<'a> {
    pub arch: &'a Architecture,
    pub inner: &'a [Object],
    pub outer: &'a [Object],
    pub k: usize,
    pub distractors: DistractorMode,
    pub batch_size: usize,
    pub loss: &'a LossConfig,
    pub variant: MetaVariant,
    pub alpha: f64,
}

impl<'a> MetaContext<'a> {
    pub fn from_config(
        cfg: &'a TrainConfig,
        arch: &'a Architecture,
        inner: &'a [Object],
        outer: &'a [Object],
    ) -> Self {
        Self {
            arch,
            inner,
            outer,
            k: cfg.world.k,
            distractors: cfg.world.distractors,
            batch_size: cfg.schedule.batch_size,
            loss: &cfg.loss,
            variant: cfg.optim.meta_variant,
            alpha: cfg.optim.inner_lr,
        }
    }
}

/// Meta-gradient (or Reptile pseudo-gradient) with the mean outer loss.
#[derive(Clone, Debug)]
pub struct MetaUpdate {
    pub grads: Vec<Tensor>,
    pub outer_loss: f64,
}

#[derive(Clone, Copy)]
enum Role {
    Speaker,
    Listener,
}

/// Shared machinery of both meta steps. `partners` are frozen parameter
/// stores (listeners for the meta-speaker and vice versa). Every partner
/// sees the same rounds and the same random stream (common random numbers),
/// drawn from `seed`.
fn meta_gradient(
    role: Role,
    params: &[Tensor],
    partners: &[&crate::grad::ParameterStore],
    ctx: &MetaContext<'_>,
    seed: u64,
) -> Result<MetaUpdate> {
    if partners.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if !(ctx.alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "inner step size must be non-negative, got {}",
            ctx.alpha
        )));
    }
    let mut r0 = crate::rng::substream(seed, 0);
    let rounds_in = rounds_from(ctx.inner, ctx.batch_size, ctx.k, ctx.distractors, &mut r0)?;
    let rounds_out = rounds_from(ctx.outer, ctx.batch_size, ctx.k, ctx.distractors, &mut r0)?;

    let task_loss = |tape: &mut Tape,
                     own: &[Var],
                     partner: &crate::grad::ParameterStore,
                     rounds: &[Round],
                     rng: &mut crate::rng::LabRng|
     -> Result<Var> {
        let other = partner.on_tape(tape, false);
        let (sv, lv) = match role {
            Role::Speaker => (own, other.as_slice()),
            Role::Listener => (other.as_slice(), own),
        };
        let t = interactive_losses(ctx.arch, tape, sv, lv, rounds, ctx.loss, rng)?;
        Ok(match role {
            Role::Speaker => t.speaker_loss,
            Role::Listener => t.listener_loss,
        })
    };

    let mut total: Option<Vec<Tensor>> = None;
    let mut outer_sum = 0.0;
    for partner in partners {
        let mut rng_in = crate::rng::substream(seed, 1);
        let mut rng_out = crate::rng::substream(seed, 2);
        let (grads, outer) = match ctx.variant.order() {
            Some(order) => {
                let g = grad_through_update(
                    params,
                    ctx.alpha,
                    order,
                    |tape, p| task_loss(tape, p, partner, &rounds_in, &mut rng_in),
                    |tape, p| task_loss(tape, p, partner, &rounds_out, &mut rng_out),
                )?;
                (g.grads, g.outer_loss)
            }
            None => {
                let (p1, _) = plain_step(params, ctx.alpha, |t, p| {
                    task_loss(t, p, partner, &rounds_in, &mut rng_in)
                })?;
                let (p2, outer) = plain_step(&p1, ctx.alpha, |t, p| {
                    task_loss(t, p, partner, &rounds_out, &mut rng_out)
                })?;
                let n = partners.len() as f64;
                let g = params
                    .iter()
                    .zip(&p2)
                    .map(|(a, b)| a.zip(b, |x, y| (x - y) / n))
                    .collect();
                (g, outer)
            }
        };
        if !outer.is_finite() {
            return Err(Error::Diverged(format!("meta outer loss became {outer}")));
        }
        outer_sum += outer;
        total = Some(match total {
            None => grads,
            Some(acc) => acc
                .iter()
                .zip(&grads)
                .map(|(a, g)| a.zip(g, |x, y| x + y))
                .collect(),
        });
    }
    Ok(MetaUpdate {
        grads: total.expect("non-empty"),
        outer_loss: outer_sum / partners.len() as f64,
    })
}

/// One SGD step on `loss`; returns the new parameters and the loss value.
fn plain_step<F>(params: &[Tensor], alpha: f64, mut loss: F) -> Result<(Vec<Tensor>, f64)>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let l = loss(&mut tape, &leaves)?;
    let value = tape.value(l).item();
    let g = tape.backward(l, &leaves)?;
    Ok((sgd_step(params, &g, alpha), value))
}

/// Gradient of the meta-speaker objective: summed over `listeners` for
/// MAML/FOMAML; for Reptile the mean of `initial - adapted`, where
/// adaptation is one SGD step on the inner batch followed by one on the
/// outer batch.
pub fn meta_speaker_gradient(
    meta: &Speaker,
    listeners: &[&Listener],
    ctx: &MetaContext<'_>,
    seed: u64,
) -> Result<MetaUpdate> {
    let partners: Vec<_> = listeners.iter().map(|l| &l.params).collect();
    meta_gradient(Role::Speaker, &meta.params.tensors(), &partners, ctx, seed)
}

/// Listener counterpart of [`meta_speaker_gradient`]; the buffered speakers
/// sample the messages.
pub fn meta_listener_gradient(
    meta: &Listener,
    speakers: &[&Speaker],
    ctx: &MetaContext<'_>,
    seed: u64,
) -> Result<MetaUpdate> {
    let partners: Vec<_> = speakers.iter().map(|s| &s.params).collect();
    meta_gradient(Role::Listener, &meta.params.tensors(), &partners, ctx, seed)
}

pub fn meta_speaker_step<R: Rng + ?Sized>(
    meta: &mut Trainable<Speaker>,
    listeners: &[&Listener],
    ctx: &MetaContext<'_>,
    rng: &mut R,
) -> Result<f64> {
    let u = meta_speaker_gradient(&meta.model, listeners, ctx, rng.random())?;
    meta.apply(&u.grads)?;
    Ok(u.outer_loss)
}

pub fn meta_listener_step<R: Rng + ?Sized>(
    meta: &mut Trainable<Listener>,
    speakers: &[&Speaker],
    ctx: &MetaContext<'_>,
    rng: &mut R,
) -> Result<f64> {
    let u = meta_listener_gradient(&meta.model, speakers, ctx, rng.random())?;
    meta.apply(&u.grads)?;
    Ok(u.outer_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{World, WorldSpec};

    fn setup() -> (World, TrainConfig, Architecture) {
        let mut cfg = TrainConfig::desk();
        cfg.world.attributes = 2;
        cfg.world.values = 4;
        cfg.world.test_size = 3;
        cfg.world.val_size = 3;
        cfg.world.dataset_size = 6;
        cfg.world.k = 2;
        cfg.model.hidden = 6;
        cfg.model.embed = 4;
        cfg.schedule.batch_size = 8;
        let w = World::new(cfg.world.spec()).unwrap();
        let arch = cfg.architecture();
        (w, cfg, arch)
    }

    fn close(a: &[Tensor], b: &[Tensor], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() <= tol * (1.0 + q.abs()), "{p} vs {q}");
            }
        }
    }

    #[test]
    fn supervised_speaker_memorises() {
        let (w, _, arch) = setup();
        let mut rng = crate::rng::seeded(0);
        let data = GroundingDataset::build(&w, 6, &mut rng).unwrap();
        let mut s = Trainable::new(Speaker::new(arch, &mut rng).unwrap(), 3e-2, None);
        let first = supervised_speaker_step(&mut s, &data, 6, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..600 {
            last = supervised_speaker_step(&mut s, &data, 6, &mut rng).unwrap();
        }
        assert!(last < 0.05 * first, "{first} -> {last}");
    }

    #[test]
    fn empty_dataset_errors() {
        let (w, _, arch) = setup();
        let mut rng = crate::rng::seeded(0);
        let mut data = GroundingDataset::build(&w, 1, &mut rng).unwrap();
        data.pairs.clear();
        let mut s = Trainable::new(Speaker::new(arch, &mut rng).unwrap(), 1e-2, None);
        assert!(matches!(
            supervised_speaker_step(&mut s, &data, 4, &mut rng),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn frozen_partner_is_untouched() {
        let (w, cfg, arch) = setup();
        let mut rng = crate::rng::seeded(1);
        let mut s = Trainable::new(Speaker::new(arch.clone(), &mut rng).unwrap(), 1e-2, None);
        let l = Listener::new(arch, &mut rng).unwrap();
        let before = l.params.content_hash();
        let s_before = s.model.params.content_hash();
        let pool = &w.split().train;
        let rounds = rounds_from(pool, 8, 2, DistractorMode::Uniform, &mut rng).unwrap();
        interactive_step(Side::Train(&mut s), Side::Frozen(&l), &rounds, &cfg.loss, None, &mut rng)
            .unwrap();
        assert_eq!(l.params.content_hash(), before);
        assert_ne!(s.model.params.content_hash(), s_before);
    }

    #[test]
    fn alpha_zero_meta_gradient_is_sum_of_plain_gradients() {
        let (w, mut cfg, arch) = setup();
        cfg.optim.inner_lr = 0.0;
        let mut rng = crate::rng::seeded(2);
        let meta = Speaker::new(arch.clone(), &mut rng).unwrap();
        let l1 = Listener::new(arch.clone(), &mut rng).unwrap();
        let l2 = Listener::new(arch.clone(), &mut rng).unwrap();
        let (oi, oo) = w.split().inner_outer(&mut rng);
        let ctx = MetaContext::from_config(&cfg, &arch, &oi, &oo);
        let meta_g = meta_speaker_gradient(&meta, &[&l1, &l2], &ctx, 7).unwrap();

        let mut plain: Option<Vec<Tensor>> = None;
        for l in [&l1, &l2] {
            let mut r0 = crate::rng::substream(7, 0);
            let _ = rounds_from(&oi, 8, 2, DistractorMode::Uniform, &mut r0).unwrap();
            let rounds = rounds_from(&oo, 8, 2, DistractorMode::Uniform, &mut r0).unwrap();
            let mut tape = Tape::new();
            let sv = meta.params.on_tape(&mut tape, true);
            let lv = l.params.on_tape(&mut tape, false);
            let mut r = crate::rng::substream(7, 2);
            let t = interactive_losses(&arch, &mut tape, &sv, &lv, &rounds, &cfg.loss, &mut r).unwrap();
            let g = tape.backward(t.speaker_loss, &sv).unwrap();
            plain = Some(match plain {
                None => g,
                Some(a) => a.iter().zip(&g).map(|(x, y)| x.zip(y, |p, q| p + q)).collect(),
            });
        }
        close(&meta_g.grads, &plain.unwrap(), 1e-12);
    }

    #[test]
    fn duplicated_partner_doubles_the_gradient() {
        let (w, cfg, arch) = setup();
        let mut rng = crate::rng::seeded(3);
        let meta = Listener::new(arch.clone(), &mut rng).unwrap();
        let s = Speaker::new(arch.clone(), &mut rng).unwrap();
        let (oi, oo) = w.split().inner_outer(&mut rng);
        let ctx = MetaContext::from_config(&cfg, &arch, &oi, &oo);
        let one = meta_listener_gradient(&meta, &[&s], &ctx, 11).unwrap();
        let two = meta_listener_gradient(&meta, &[&s, &s], &ctx, 11).unwrap();
        let doubled: Vec<Tensor> = one.grads.iter().map(|g| g.map(|x| 2.0 * x)).collect();
        close(&two.grads, &doubled, 1e-12);
    }

    #[test]
    fn empty_buffer_errors() {
        let (w, cfg, arch) = setup();
        let mut rng = crate::rng::seeded(4);
        let meta = Speaker::new(arch.clone(), &mut rng).unwrap();
        let (oi, oo) = w.split().inner_outer(&mut rng);
        let ctx = MetaContext::from_config(&cfg, &arch, &oi, &oo);
        assert!(matches!(
            meta_speaker_gradient(&meta, &[], &ctx, 0),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn reptile_direction_follows_its_definition() {
        let (w, mut cfg, arch) = setup();
        cfg.optim.meta_variant = MetaVariant::Reptile;
        cfg.optim.inner_lr = 0.05;
        let mut rng = crate::rng::seeded(5);
        let meta = Speaker::new(arch.clone(), &mut rng).unwrap();
        let l = Listener::new(arch.clone(), &mut rng).unwrap();
        let (oi, oo) = w.split().inner_outer(&mut rng);
        let ctx = MetaContext::from_config(&cfg, &arch, &oi, &oo);
        let u = meta_speaker_gradient(&meta, &[&l, &l], &ctx, 3).unwrap();

        let mut r0 = crate::rng::substream(3, 0);
        let ri = rounds_from(&oi, 8, 2, DistractorMode::Uniform, &mut r0).unwrap();
        let ro = rounds_from(&oo, 8, 2, DistractorMode::Uniform, &mut r0).unwrap();
        let mut p = meta.params.tensors();
        for (rounds, stream) in [(&ri, 1), (&ro, 2)] {
            let mut tape = Tape::new();
            let sv: Vec<Var> = p.iter().map(|t| tape.leaf(t.clone())).collect();
            let lv = l.params.on_tape(&mut tape, false);
            let mut r = crate::rng::substream(3, stream);
            let t = interactive_losses(&arch, &mut tape, &sv, &lv, rounds, &cfg.loss, &mut r).unwrap();
            let g = tape.backward(t.speaker_loss, &sv).unwrap();
            p = sgd_step(&p, &g, 0.05);
        }
        let want: Vec<Tensor> = meta
            .params
            .tensors()
            .iter()
            .zip(&p)
            .map(|(a, b)| a.zip(b, |x, y| x - y))
            .collect();
        close(&u.grads, &want, 1e-12);
    }

    #[test]
    fn kl_anchor_pulls_toward_reference() {
        let (w, mut cfg, arch) = setup();
        cfg.loss.lambda_int = 0.0;
        let mut rng = crate::rng::seeded(6);
        let data = GroundingDataset::build(&w, 6, &mut rng).unwrap();
        let reference = Speaker::new(arch.clone(), &mut rng).unwrap();
        let ref_l = Listener::new(arch.clone(), &mut rng).unwrap();
        let mut s = Trainable::new(Speaker::new(arch.clone(), &mut rng).unwrap(), 1e-2, None);
        let mut l = Trainable::new(Listener::new(arch.clone(), &mut rng).unwrap(), 1e-2, None);
        let anchor = KlAnchor {
            speaker: &reference,
            listener: &ref_l,
            data: &data,
            weight_int: 0.0,
        };
        let pool = &w.split().train;
        let mut losses = Vec::new();
        for _ in 0..60 {
            let rounds = rounds_from(pool, 8, 2, DistractorMode::Uniform, &mut rng).unwrap();
            let st = interactive_step(
                Side::Train(&mut s),
                Side::Train(&mut l),
                &rounds,
                &cfg.loss,
                Some(&anchor),
                &mut rng,
            )
            .unwrap();
            losses.push(st.speaker_loss);
        }
        assert!(losses[59] < 0.5 * losses[0], "{} -> {}", losses[0], losses[59]);
        let _ = WorldSpec::uniform(1, 2, 0);
    }
}
