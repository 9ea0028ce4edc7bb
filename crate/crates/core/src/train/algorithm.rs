//! The dynamic-population training loop, the comparison methods and the
//! ablations, all sharing one orchestrator.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::buffer::PopulationBuffer;
use super::config::TrainConfig;
use super::steps::{
    interactive_step, meta_listener_step, meta_speaker_step, rounds_from, supervised_listener_step,
    supervised_speaker_step, KlAnchor, MetaContext, Side, StepStats, Trainable,
};
use crate::agents::{Architecture, Listener, Speaker};
use crate::error::{Error, Result};
use crate::eval::referential_accuracy;
use crate::game::PlayMode;
use crate::rng::{substream, LabRng};
use crate::world::{GroundingDataset, World};

const STREAM_DATASET: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_VAL: u64 = 3;
const STREAM_INIT_SPEAKER: u64 = 10;
const STREAM_INIT_LISTENER: u64 = 11;
const STREAM_INIT_META_SPEAKER: u64 = 12;
const STREAM_INIT_META_LISTENER: u64 = 13;
const STREAM_STATIC_POPULATION: u64 = 100;

/// Training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Dynamic population with meta-agents.
    Ours,
    /// Speaker and listener trained separately on the dataset, then paired.
    Pretrained,
    /// Self-play from scratch with no supervision.
    Emecom,
    /// Alternating self-play and supervised updates on one pretrained pair.
    S2p,
    /// Meta-learning against a fixed population of self-play pairs.
    L2c,
    /// Dynamic population whose youngest pair is periodically reset to the
    /// pretrained checkpoint.
    Gentrans,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ours,
        Method::Pretrained,
        Method::Emecom,
        Method::S2p,
        Method::L2c,
        Method::Gentrans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Pretrained => "pretrained",
            Method::Emecom => "emecom",
            Method::S2p => "s2p",
            Method::L2c => "l2c",
            Method::Gentrans => "gentrans",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Variants of the dynamic-population method with one ingredient removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// New agents play a random buffer member instead of the meta-agent.
    NoMetaAgents,
    /// Meta-agents restart from their initialisation before every meta phase.
    NoAdaptiveMetaI,
    /// Both of the above.
    NoAdaptiveMetaII,
    /// KL towards the pretrained pair replaces the supervised phase.
    KlGrounding,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoMetaAgents,
        Ablation::NoAdaptiveMetaI,
        Ablation::NoAdaptiveMetaII,
        Ablation::KlGrounding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoMetaAgents => "no_meta_agents",
            Ablation::NoAdaptiveMetaI => "no_adaptive_meta_i",
            Ablation::NoAdaptiveMetaII => "no_adaptive_meta_ii",
            Ablation::KlGrounding => "kl_grounding",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown ablation {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Phase losses and validation accuracy of one outer iteration. Phases a
/// method does not run are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub meta_speaker_loss: Option<f64>,
    pub meta_listener_loss: Option<f64>,
    pub int_speaker_loss: Option<f64>,
    pub int_listener_loss: Option<f64>,
    pub int_accuracy: Option<f64>,
    pub sup_speaker_loss: Option<f64>,
    pub sup_listener_loss: Option<f64>,
    pub val_accuracy: f64,
    pub speaker_buffer: usize,
    pub listener_buffer: usize,
    /// Content hash of the meta-speaker when its meta phase began.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_start_hash: Option<String>,
}

impl IterationRecord {
    fn new(iteration: usize) -> Self {
        Self {
            iteration,
            meta_speaker_loss: None,
            meta_listener_loss: None,
            int_speaker_loss: None,
            int_listener_loss: None,
            int_accuracy: None,
            sup_speaker_loss: None,
            sup_listener_loss: None,
            val_accuracy: 0.0,
            speaker_buffer: 0,
            listener_buffer: 0,
            meta_start_hash: None,
        }
    }
}

/// Every agent ever inserted into the buffers, plus which of them were in
/// the buffers at each iteration.
#[derive(Clone, Debug, Default)]
pub struct Population {
    pub speakers: Vec<Speaker>,
    pub listeners: Vec<Listener>,
    /// Indices into `speakers`, one list per iteration.
    pub speaker_buffers: Vec<Vec<usize>>,
    pub listener_buffers: Vec<Vec<usize>>,
}

impl Population {
    /// Speakers present in the buffer at `iteration` (0-based).
    pub fn speakers_at(&self, iteration: usize) -> Vec<&Speaker> {
        self.speaker_buffers
            .get(iteration)
            .map(|ids| ids.iter().map(|&i| &self.speakers[i]).collect())
            .unwrap_or_default()
    }

    pub fn listeners_at(&self, iteration: usize) -> Vec<&Listener> {
        self.listener_buffers
            .get(iteration)
            .map(|ids| ids.iter().map(|&i| &self.listeners[i]).collect())
            .unwrap_or_default()
    }
}

/// Why the outer loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// Validation accuracy stopped improving.
    Converged,
    /// The iteration cap was reached.
    MaxOuter,
    /// The method has no outer loop.
    NoLoop,
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub method: Method,
    pub ablation: Option<Ablation>,
    pub config_hash: String,
    /// The pair the method is evaluated with.
    pub speaker: Speaker,
    pub listener: Listener,
    /// Separately pretrained pair, when the method builds one.
    pub pretrained: Option<(Speaker, Listener)>,
    pub history: Vec<IterationRecord>,
    pub population: Population,
    pub stop: Stop,
}

/// Snapshot handed to an [`Observer`] after each iteration.
pub struct IterationState<'a> {
    pub record: &'a IterationRecord,
    /// The pair evaluated for this method (meta-agents where they exist).
    pub speaker: &'a Speaker,
    pub listener: &'a Listener,
    /// The newest population members, for methods that grow a population.
    pub lineage: Option<(&'a Speaker, &'a Listener)>,
}

/// Hook called as training progresses.
pub trait Observer {
    fn iteration(&mut self, _state: &IterationState<'_>) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

impl<F: FnMut(&IterationState<'_>) -> Result<()>> Observer for F {
    fn iteration(&mut self, state: &IterationState<'_>) -> Result<()> {
        self(state)
    }
}

/// A configuration together with its world and grounding dataset.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: TrainConfig,
    pub world: World,
    pub data: GroundingDataset,
}

impl Experiment {
    /// Build the world and the dataset. The dataset depends only on the
    /// world seed, so runs that differ in their training seed share it.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let world = World::new(config.world.spec())?;
        let mut rng = substream(config.world.seed, STREAM_DATASET);
        let data = GroundingDataset::build(&world, config.world.dataset_size, &mut rng)?;
        Ok(Self {
            config,
            world,
            data,
        })
    }

    pub fn run(&self, method: Method, ablation: Option<Ablation>) -> Result<RunOutcome> {
        self.run_observed(method, ablation, &mut ())
    }

    pub fn run_observed(
        &self,
        method: Method,
        ablation: Option<Ablation>,
        observer: &mut dyn Observer,
    ) -> Result<RunOutcome> {
        if ablation.is_some() && method != Method::Ours {
            return Err(Error::Config(format!(
                "ablations apply to the {} method only, not {method}",
                Method::Ours
            )));
        }
        let run = Runner::new(self);
        match method {
            Method::Pretrained => run.pretrained(observer),
            Method::Emecom => run.emecom(observer),
            Method::S2p => run.s2p(observer),
            Method::L2c => run.l2c(observer),
            Method::Ours | Method::Gentrans => {
                let flags = Flags::new(method, ablation, self.config.baselines.gen_period);
                run.dynamic(flags, observer)
            }
        }
        .map(|mut out| {
            out.method = method;
            out.ablation = ablation;
            out
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Flags {
    random_partner: bool,
    reset_meta: bool,
    kl: bool,
    gen_period: Option<usize>,
}

impl Flags {
    fn new(method: Method, ablation: Option<Ablation>, gen_period: usize) -> Self {
        let a = ablation;
        Self {
            random_partner: matches!(
                a,
                Some(Ablation::NoMetaAgents) | Some(Ablation::NoAdaptiveMetaII)
            ),
            reset_meta: matches!(
                a,
                Some(Ablation::NoAdaptiveMetaI) | Some(Ablation::NoAdaptiveMetaII)
            ),
            kl: a == Some(Ablation::KlGrounding),
            gen_period: (method == Method::Gentrans).then_some(gen_period),
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Keeps track of validation accuracy and decides when to stop.
struct Patience {
    best: f64,
    since: usize,
    patience: usize,
    min_delta: f64,
}

impl Patience {
    fn observe(&mut self, acc: f64) -> bool {
        if acc > self.best + self.min_delta {
            self.best = acc;
            self.since = 0;
        } else {
            self.since += 1;
        }
        self.since >= self.patience
    }
}

struct Runner<'a> {
    exp: &'a Experiment,
    cfg: &'a TrainConfig,
    arch: Architecture,
    rng: LabRng,
}

impl<'a> Runner<'a> {
    fn new(exp: &'a Experiment) -> Self {
        Self {
            exp,
            cfg: &exp.config,
            arch: exp.config.architecture(),
            rng: substream(exp.config.seed, STREAM_TRAIN),
        }
    }

    fn patience(&self) -> Patience {
        Patience {
            best: f64::NEG_INFINITY,
            since: 0,
            patience: self.cfg.schedule.patience,
            min_delta: self.cfg.schedule.min_delta,
        }
    }

    fn trainable<M: crate::agents::Agent>(&self, model: M, lr: f64) -> Trainable<M> {
        Trainable::new(model, lr, self.cfg.optim.clip())
    }

    fn fresh_speaker(&self, stream: u64) -> Result<Speaker> {
        Speaker::new(self.arch.clone(), &mut substream(self.cfg.seed, stream))
    }

    fn fresh_listener(&self, stream: u64) -> Result<Listener> {
        Listener::new(self.arch.clone(), &mut substream(self.cfg.seed, stream))
    }

    /// Validation accuracy in evaluation mode. The same episode stream is
    /// used at every call so successive numbers are comparable.
    fn validate(&self, s: &Speaker, l: &Listener) -> Result<f64> {
        let mut rng = substream(self.cfg.seed, STREAM_VAL);
        let acc = referential_accuracy(
            s,
            l,
            &self.exp.world.split().val,
            self.cfg.world.k,
            self.cfg.world.distractors,
            self.cfg.schedule.val_episodes,
            PlayMode::EVAL,
            &mut rng,
        )?;
        Ok(acc.value)
    }

    /// `steps` supervised updates of each agent; mean losses.
    fn supervised(
        &mut self,
        s: &mut Trainable<Speaker>,
        l: &mut Trainable<Listener>,
        steps: usize,
    ) -> Result<(Option<f64>, Option<f64>)> {
        let (mut ls, mut ll) = (Vec::new(), Vec::new());
        let cfg = self.cfg;
        let train = &self.exp.world.split().train;
        for _ in 0..steps {
            ls.push(supervised_speaker_step(
                s,
                &self.exp.data,
                cfg.schedule.batch_size,
                &mut self.rng,
            )?);
            ll.push(supervised_listener_step(
                l,
                &self.exp.data,
                train,
                cfg.world.k,
                cfg.world.distractors,
                &cfg.loss,
                cfg.schedule.batch_size,
                &mut self.rng,
            )?);
        }
        Ok((mean(&ls), mean(&ll)))
    }

    /// Speaker and listener pretrained from their initial streams.
    fn pretrain_pair(&mut self) -> Result<(Trainable<Speaker>, Trainable<Listener>)> {
        let lr = self.cfg.optim.lr;
        let mut s = self.trainable(self.fresh_speaker(STREAM_INIT_SPEAKER)?, lr);
        let mut l = self.trainable(self.fresh_listener(STREAM_INIT_LISTENER)?, lr);
        self.supervised(&mut s, &mut l, self.cfg.schedule.n_pretrain)?;
        Ok((s, l))
    }

    fn rounds(&mut self) -> Result<Vec<crate::game::Round>> {
        rounds_from(
            &self.exp.world.split().train,
            self.cfg.schedule.batch_size,
            self.cfg.world.k,
            self.cfg.world.distractors,
            &mut self.rng,
        )
    }

    /// Both agents trained against each other on shared batches.
    fn self_play(
        &mut self,
        s: &mut Trainable<Speaker>,
        l: &mut Trainable<Listener>,
        steps: usize,
    ) -> Result<Vec<StepStats>> {
        let mut stats = Vec::with_capacity(steps);
        for _ in 0..steps {
            let rounds = self.rounds()?;
            stats.push(interactive_step(
                Side::Train(s),
                Side::Train(l),
                &rounds,
                &self.cfg.loss,
                None,
                &mut self.rng,
            )?);
        }
        Ok(stats)
    }

    fn fine_tune(&mut self, s: &Speaker, l: &Listener) -> Result<(Speaker, Listener)> {
        let lr = self.cfg.optim.lr;
        let mut s = self.trainable(s.clone(), lr);
        let mut l = self.trainable(l.clone(), lr);
        self.supervised(&mut s, &mut l, self.cfg.schedule.n_finetune)?;
        Ok((s.model, l.model))
    }

    fn outcome(
        &self,
        speaker: Speaker,
        listener: Listener,
        pretrained: Option<(Speaker, Listener)>,
        history: Vec<IterationRecord>,
        population: Population,
        stop: Stop,
    ) -> RunOutcome {
        RunOutcome {
            method: Method::Ours,
            ablation: None,
            config_hash: self.cfg.hash(),
            speaker,
            listener,
            pretrained,
            history,
            population,
            stop,
        }
    }

    fn pretrained(mut self, observer: &mut dyn Observer) -> Result<RunOutcome> {
        let lr = self.cfg.optim.lr;
        let mut s = self.trainable(self.fresh_speaker(STREAM_INIT_SPEAKER)?, lr);
        let mut l = self.trainable(self.fresh_listener(STREAM_INIT_LISTENER)?, lr);
        let (ls, ll) = self.supervised(&mut s, &mut l, self.cfg.schedule.n_pretrain)?;
        let mut rec = IterationRecord::new(1);
        rec.sup_speaker_loss = ls;
        rec.sup_listener_loss = ll;
        rec.val_accuracy = self.validate(&s.model, &l.model)?;
        observer.iteration(&IterationState {
            record: &rec,
            speaker: &s.model,
            listener: &l.model,
            lineage: None,
        })?;
        let pair = (s.model.clone(), l.model.clone());
        Ok(self.outcome(
            s.model,
            l.model,
            Some(pair),
            vec![rec],
            Population::default(),
            Stop::NoLoop,
        ))
    }

    /// Self-play in chunks until validation accuracy stalls. Grounded pairs
    /// alternate `n_int` self-play and `n_sup` supervised steps; ungrounded
    /// pairs play `selfplay_steps` per chunk.
    fn pair_loop(
        &mut self,
        mut s: Trainable<Speaker>,
        mut l: Trainable<Listener>,
        grounded: bool,
        observer: &mut dyn Observer,
    ) -> Result<(Speaker, Listener, Vec<IterationRecord>, Stop)> {
        let mut history = Vec::new();
        let mut patience = self.patience();
        let mut stop = Stop::MaxOuter;
        for i in 1..=self.cfg.schedule.max_outer {
            let mut rec = IterationRecord::new(i);
            let chunk = if grounded {
                self.cfg.schedule.n_int
            } else {
                self.cfg.baselines.selfplay_steps
            };
            let stats = self.self_play(&mut s, &mut l, chunk)?;
            fill_interactive(&mut rec, &stats);
            if grounded {
                let (a, b) = self.supervised(&mut s, &mut l, self.cfg.schedule.n_sup)?;
                rec.sup_speaker_loss = a;
                rec.sup_listener_loss = b;
            }
            rec.val_accuracy = self.validate(&s.model, &l.model)?;
            observer.iteration(&IterationState {
                record: &rec,
                speaker: &s.model,
                listener: &l.model,
                lineage: None,
            })?;
            let done = patience.observe(rec.val_accuracy);
            history.push(rec);
            if done {
                stop = Stop::Converged;
                break;
            }
        }
        Ok((s.model, l.model, history, stop))
    }

    fn emecom(mut self, observer: &mut dyn Observer) -> Result<RunOutcome> {
        let lr = self.cfg.optim.lr;
        let s = self.trainable(self.fresh_speaker(STREAM_INIT_SPEAKER)?, lr);
        let l = self.trainable(self.fresh_listener(STREAM_INIT_LISTENER)?, lr);
        let (s, l, history, stop) = self.pair_loop(s, l, false, observer)?;
        Ok(self.outcome(s, l, None, history, Population::default(), stop))
    }

    fn s2p(mut self, observer: &mut dyn Observer) -> Result<RunOutcome> {
        let (s, l) = self.pretrain_pair()?;
        let pair = (s.model.clone(), l.model.clone());
        let (s, l, history, stop) = self.pair_loop(s, l, true, observer)?;
        Ok(self.outcome(s, l, Some(pair), history, Population::default(), stop))
    }

    /// `n_meta` interleaved meta-speaker and meta-listener steps against the
    /// given partners. Returns mean outer losses.
    #[allow(clippy::too_many_arguments)]
    fn meta_phase(
        &mut self,
        ms: &mut Trainable<Speaker>,
        ml: &mut Trainable<Listener>,
        population: &Population,
        speaker_ids: &[usize],
        listener_ids: &[usize],
    ) -> Result<(Option<f64>, Option<f64>)> {
        let cfg = self.cfg;
        let (inner, outer) = self.exp.world.split().inner_outer(&mut self.rng);
        let arch = self.arch.clone();
        let ctx = MetaContext::from_config(cfg, &arch, &inner, &outer);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..cfg.schedule.n_meta {
            let lids = self.subsample(listener_ids);
            let listeners: Vec<&Listener> = lids.iter().map(|&i| &population.listeners[i]).collect();
            a.push(meta_speaker_step(ms, &listeners, &ctx, &mut self.rng)?);
            let sids = self.subsample(speaker_ids);
            let speakers: Vec<&Speaker> = sids.iter().map(|&i| &population.speakers[i]).collect();
            b.push(meta_listener_step(ml, &speakers, &ctx, &mut self.rng)?);
        }
        Ok((mean(&a), mean(&b)))
    }

    /// At most `meta_tasks` buffer members (all when 0), in buffer order.
    fn subsample(&mut self, ids: &[usize]) -> Vec<usize> {
        let m = self.cfg.schedule.meta_tasks;
        if m == 0 || m >= ids.len() {
            return ids.to_vec();
        }
        let mut picked = sample(&mut self.rng, ids.len(), m).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| ids[i]).collect()
    }

    fn dynamic(mut self, flags: Flags, observer: &mut dyn Observer) -> Result<RunOutcome> {
        let cfg = self.cfg;
        let (mut s, mut l) = self.pretrain_pair()?;
        let pretrained = (s.model.clone(), l.model.clone());
        let meta_init = (
            self.fresh_speaker(STREAM_INIT_META_SPEAKER)?,
            self.fresh_listener(STREAM_INIT_META_LISTENER)?,
        );
        let outer_lr = cfg.optim.outer_lr;
        let mut ms = self.trainable(meta_init.0.clone(), outer_lr);
        let mut ml = self.trainable(meta_init.1.clone(), outer_lr);

        let mut pop = Population::default();
        let mut bs = PopulationBuffer::new(cfg.schedule.buffer_capacity);
        let mut bl = PopulationBuffer::new(cfg.schedule.buffer_capacity);
        let mut history = Vec::new();
        let mut patience = self.patience();
        let mut stop = Stop::MaxOuter;

        for i in 1..=cfg.schedule.max_outer {
            if let Some(g) = flags.gen_period {
                if i > 1 && (i - 1) % g == 0 {
                    s = self.trainable(pretrained.0.clone(), cfg.optim.lr);
                    l = self.trainable(pretrained.1.clone(), cfg.optim.lr);
                }
            }
            let mut rec = IterationRecord::new(i);

            pop.speakers.push(s.model.clone());
            bs.insert(pop.speakers.len() - 1, &mut self.rng);
            pop.listeners.push(l.model.clone());
            bl.insert(pop.listeners.len() - 1, &mut self.rng);
            let sids: Vec<usize> = bs.items().copied().collect();
            let lids: Vec<usize> = bl.items().copied().collect();
            pop.speaker_buffers.push(sids.clone());
            pop.listener_buffers.push(lids.clone());
            rec.speaker_buffer = sids.len();
            rec.listener_buffer = lids.len();

            if flags.reset_meta {
                ms = self.trainable(meta_init.0.clone(), outer_lr);
                ml = self.trainable(meta_init.1.clone(), outer_lr);
            }
            rec.meta_start_hash = Some(ms.model.params.content_hash());
            let (a, b) = self.meta_phase(&mut ms, &mut ml, &pop, &sids, &lids)?;
            rec.meta_speaker_loss = a;
            rec.meta_listener_loss = b;

            let (partner_s, partner_l) = if flags.random_partner {
                let si = sids[self.rng.random_range(0..sids.len())];
                let li = lids[self.rng.random_range(0..lids.len())];
                (pop.speakers[si].clone(), pop.listeners[li].clone())
            } else {
                (ms.model.clone(), ml.model.clone())
            };
            let anchor = flags.kl.then_some(KlAnchor {
                speaker: &pretrained.0,
                listener: &pretrained.1,
                data: &self.exp.data,
                weight_int: cfg.loss.lambda_int,
            });
            let mut stats = Vec::with_capacity(2 * cfg.schedule.n_int);
            for _ in 0..cfg.schedule.n_int {
                let rounds = self.rounds()?;
                let a = interactive_step(
                    Side::Train(&mut s),
                    Side::Frozen(&partner_l),
                    &rounds,
                    &cfg.loss,
                    anchor.as_ref(),
                    &mut self.rng,
                )?;
                let rounds = self.rounds()?;
                let b = interactive_step(
                    Side::Frozen(&partner_s),
                    Side::Train(&mut l),
                    &rounds,
                    &cfg.loss,
                    anchor.as_ref(),
                    &mut self.rng,
                )?;
                stats.push((a, b));
            }
            if !stats.is_empty() {
                let sl: Vec<f64> = stats.iter().map(|(a, _)| a.speaker_loss).collect();
                let ll: Vec<f64> = stats.iter().map(|(_, b)| b.listener_loss).collect();
                let acc: Vec<f64> = stats
                    .iter()
                    .flat_map(|(a, b)| [a.accuracy, b.accuracy])
                    .collect();
                rec.int_speaker_loss = mean(&sl);
                rec.int_listener_loss = mean(&ll);
                rec.int_accuracy = mean(&acc);
            }

            if !flags.kl {
                let (a, b) = self.supervised(&mut s, &mut l, cfg.schedule.n_sup)?;
                rec.sup_speaker_loss = a;
                rec.sup_listener_loss = b;
            }

            rec.val_accuracy = self.validate(&ms.model, &ml.model)?;
            observer.iteration(&IterationState {
                record: &rec,
                speaker: &ms.model,
                listener: &ml.model,
                lineage: Some((&s.model, &l.model)),
            })?;
            let done = patience.observe(rec.val_accuracy);
            history.push(rec);
            if done {
                stop = Stop::Converged;
                break;
            }
        }

        let (fs, fl) = self.fine_tune(&ms.model, &ml.model)?;
        Ok(self.outcome(fs, fl, Some(pretrained), history, pop, stop))
    }

    fn l2c(mut self, observer: &mut dyn Observer) -> Result<RunOutcome> {
        let cfg = self.cfg;
        let (s, l) = self.pretrain_pair()?;
        let pretrained = (s.model, l.model);

        let mut pop = Population::default();
        for p in 0..cfg.baselines.population as u64 {
            let base = STREAM_STATIC_POPULATION + 2 * p;
            let lr = cfg.optim.lr;
            let mut s = self.trainable(self.fresh_speaker(base)?, lr);
            let mut l = self.trainable(self.fresh_listener(base + 1)?, lr);
            self.supervised(&mut s, &mut l, cfg.schedule.n_pretrain)?;
            self.self_play(&mut s, &mut l, cfg.baselines.selfplay_steps)?;
            pop.speakers.push(s.model);
            pop.listeners.push(l.model);
        }
        let ids: Vec<usize> = (0..pop.speakers.len()).collect();

        let outer_lr = cfg.optim.outer_lr;
        let mut ms = self.trainable(self.fresh_speaker(STREAM_INIT_META_SPEAKER)?, outer_lr);
        let mut ml = self.trainable(self.fresh_listener(STREAM_INIT_META_LISTENER)?, outer_lr);
        let mut history = Vec::new();
        let mut patience = self.patience();
        let mut stop = Stop::MaxOuter;
        for i in 1..=cfg.schedule.max_outer {
            let mut rec = IterationRecord::new(i);
            pop.speaker_buffers.push(ids.clone());
            pop.listener_buffers.push(ids.clone());
            rec.speaker_buffer = ids.len();
            rec.listener_buffer = ids.len();
            rec.meta_start_hash = Some(ms.model.params.content_hash());
            let (a, b) = self.meta_phase(&mut ms, &mut ml, &pop, &ids, &ids)?;
            rec.meta_speaker_loss = a;
            rec.meta_listener_loss = b;
            rec.val_accuracy = self.validate(&ms.model, &ml.model)?;
            observer.iteration(&IterationState {
                record: &rec,
                speaker: &ms.model,
                listener: &ml.model,
                lineage: None,
            })?;
            let done = patience.observe(rec.val_accuracy);
            history.push(rec);
            if done {
                stop = Stop::Converged;
                break;
            }
        }
        let (fs, fl) = self.fine_tune(&ms.model, &ml.model)?;
        Ok(self.outcome(fs, fl, Some(pretrained), history, pop, stop))
    }
}

fn fill_interactive(rec: &mut IterationRecord, stats: &[StepStats]) {
    let sl: Vec<f64> = stats.iter().map(|s| s.speaker_loss).collect();
    let ll: Vec<f64> = stats.iter().map(|s| s.listener_loss).collect();
    let acc: Vec<f64> = stats.iter().map(|s| s.accuracy).collect();
    rec.int_speaker_loss = mean(&sl);
    rec.int_listener_loss = mean(&ll);
    rec.int_accuracy = mean(&acc);
}
