//! Independent oracles shared by the integration tests and the acceptance
//! suite: central finite differences, exact enumeration of a tiny game and
//! a chi-square test of the reservoir buffer.

#![allow(dead_code)]

use dynpop::agents::{Architecture, Listener, Speaker};
use dynpop::game::Round;
use dynpop::grad::{grad_through_update, MetaOrder, ParameterStore, Tape, Tensor, Var};
use dynpop::message::EOS;
use dynpop::rng::{substream, LabRng};
use dynpop::train::{
    interactive_losses, listener_supervised_loss, meta_listener_gradient, meta_speaker_gradient,
    rounds_from, speaker_supervised_loss, ListenerSupLoss, LossConfig, MetaContext, MetaVariant,
    PopulationBuffer,
};
use dynpop::world::{CanonicalLanguage, DistractorMode, Object, WorldSpec};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
pub const FD_EPS: f64 = 1e-6;

/// Central differences of `f` at `x`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + eps;
            let up = f(&p);
            p[i] = x[i] - eps;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max_i |n_i|`: the error relative to the size of
/// the reference gradient.
pub fn rel_error(autodiff: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(autodiff.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    autodiff
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn store_with(base: &ParameterStore, flat: &[f64]) -> ParameterStore {
    let mut s = base.clone();
    s.set_flat(flat).unwrap();
    s
}

fn leaves(tape: &mut Tape, store: &ParameterStore) -> Vec<Var> {
    store.on_tape(tape, true)
}

/// Small world and agents used by the gradient checks.
pub struct GradFixture {
    pub arch: Architecture,
    pub lang: CanonicalLanguage,
    pub objects: Vec<Object>,
    pub inner: Vec<Object>,
    pub outer: Vec<Object>,
    pub loss: LossConfig,
}

impl GradFixture {
    pub fn new() -> Self {
        let spec = WorldSpec::uniform(2, 3, 0);
        let lang = CanonicalLanguage::new(&spec);
        let objects: Vec<Object> = (0..9).map(|i| Object::from_index(i, 2, 3)).collect();
        Self {
            arch: Architecture::for_world(&spec, 5, 3),
            lang,
            inner: objects[..5].to_vec(),
            outer: objects[5..].to_vec(),
            objects,
            loss: LossConfig::default(),
        }
    }

    pub fn agents(&self, point: u64) -> (Speaker, Listener) {
        let s = Speaker::new(self.arch.clone(), &mut substream(1000 + point, 0)).unwrap();
        let l = Listener::new(self.arch.clone(), &mut substream(1000 + point, 1)).unwrap();
        (s, l)
    }

    pub fn ctx(&self, variant: MetaVariant, alpha: f64) -> MetaContext<'_> {
        MetaContext {
            arch: &self.arch,
            inner: &self.inner,
            outer: &self.outer,
            k: 2,
            distractors: DistractorMode::Uniform,
            batch_size: 6,
            loss: &self.loss,
            variant,
            alpha,
        }
    }

    fn rounds(&self, point: u64) -> Vec<Round> {
        rounds_from(&self.objects, 6, 2, DistractorMode::Uniform, &mut substream(point, 7)).unwrap()
    }

    fn speaker_sup(&self, tape: &mut Tape, p: &[Var], point: u64) -> Var {
        let rounds = self.rounds(point);
        let objs: Vec<&Object> = rounds.iter().map(|r| &r.target).collect();
        let msgs: Vec<Vec<usize>> = objs.iter().map(|o| self.lang.describe(o).tokens).collect();
        let refs: Vec<&[usize]> = msgs.iter().map(Vec::as_slice).collect();
        speaker_supervised_loss(&self.arch, tape, p, &objs, &refs).unwrap()
    }

    fn listener_sup(&self, tape: &mut Tape, p: &[Var], point: u64) -> Var {
        let rounds = self.rounds(point);
        let msgs: Vec<Vec<usize>> = rounds.iter().map(|r| self.lang.describe(&r.target).tokens).collect();
        let refs: Vec<&[usize]> = msgs.iter().map(Vec::as_slice).collect();
        listener_supervised_loss(&self.arch, tape, p, &refs, &rounds, ListenerSupLoss::LogProbability)
            .unwrap()
    }
}

/// One row of the gradient report.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub objective: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub points: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

fn value(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

#[derive(Clone, Copy)]
enum Role {
    Speaker,
    Listener,
}

/// Interactive surrogate loss of one side against a frozen partner, with
/// the samples fixed by `rng_seed`. Mirrors the per-partner task loss of the
/// meta objectives.
fn task_loss(
    fx: &GradFixture,
    role: Role,
    own: &ParameterStore,
    partner: &ParameterStore,
    rounds: &[Round],
    rng: &mut LabRng,
) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let mine = leaves(&mut tape, own);
    let other = partner.on_tape(&mut tape, false);
    let (sv, lv) = match role {
        Role::Speaker => (mine.as_slice(), other.as_slice()),
        Role::Listener => (other.as_slice(), mine.as_slice()),
    };
    let t = interactive_losses(&fx.arch, &mut tape, sv, lv, rounds, &fx.loss, rng).unwrap();
    let out = match role {
        Role::Speaker => t.speaker_loss,
        Role::Listener => t.listener_loss,
    };
    let v = value(&tape, out);
    let g = tape.backward(out, &mine).unwrap();
    (v, flatten(&g))
}

fn task_value(
    fx: &GradFixture,
    role: Role,
    own: &ParameterStore,
    partner: &ParameterStore,
    rounds: &[Round],
    seed: u64,
    stream: u64,
) -> f64 {
    task_loss(fx, role, own, partner, rounds, &mut substream(seed, stream)).0
}

/// Autodiff against central differences at `points` random parameter
/// points, for every objective the trainer differentiates.
pub fn gradient_checks(points: usize) -> Vec<GradCheck> {
    let fx = GradFixture::new();
    let alpha = 0.3;
    let mut worst = std::collections::BTreeMap::<&'static str, (f64, f64)>::new();
    let mut record = |name: &'static str, tol: f64, e: f64| {
        let w = worst.entry(name).or_insert((0.0, tol));
        w.0 = w.0.max(e);
    };

    for point in 0..points as u64 {
        let (s, l) = fx.agents(point);
        let sx = s.params.to_flat();
        let lx = l.params.to_flat();

        // supervised grounding losses
        {
            let mut tape = Tape::new();
            let p = leaves(&mut tape, &s.params);
            let loss = fx.speaker_sup(&mut tape, &p, point);
            let ad = flatten(&tape.backward(loss, &p).unwrap());
            let num = fd_gradient(
                |x| {
                    let mut t = Tape::new();
                    let p = leaves(&mut t, &store_with(&s.params, x));
                    let v = fx.speaker_sup(&mut t, &p, point);
                    value(&t, v)
                },
                &sx,
                FD_EPS,
            );
            record("speaker supervised", FIRST_ORDER_TOL, rel_error(&ad, &num));

            let mut tape = Tape::new();
            let p = leaves(&mut tape, &l.params);
            let loss = fx.listener_sup(&mut tape, &p, point);
            let ad = flatten(&tape.backward(loss, &p).unwrap());
            let num = fd_gradient(
                |x| {
                    let mut t = Tape::new();
                    let p = leaves(&mut t, &store_with(&l.params, x));
                    let v = fx.listener_sup(&mut t, &p, point);
                    value(&t, v)
                },
                &lx,
                FD_EPS,
            );
            record("listener supervised", FIRST_ORDER_TOL, rel_error(&ad, &num));
        }

        // interactive surrogates with the samples held fixed
        let rounds = fx.rounds(point);
        for (role, own, partner, x, name) in [
            (Role::Speaker, &s.params, &l.params, &sx, "speaker interactive"),
            (Role::Listener, &l.params, &s.params, &lx, "listener interactive"),
        ] {
            let (_, ad) = task_loss(&fx, role, own, partner, &rounds, &mut substream(point, 9));
            let num = fd_gradient(
                |x| task_value(&fx, role, &store_with(own, x), partner, &rounds, point, 9),
                x,
                FD_EPS,
            );
            record(name, FIRST_ORDER_TOL, rel_error(&ad, &num));
        }

        // meta objectives, through the library entry points
        let seed = 50_000 + point;
        for (role, name_maml, name_fo, name_rep) in [
            (Role::Speaker, "MAML speaker", "FOMAML speaker", "Reptile speaker"),
            (Role::Listener, "MAML listener", "FOMAML listener", "Reptile listener"),
        ] {
            let (own, partner, x) = match role {
                Role::Speaker => (&s.params, &l.params, &sx),
                Role::Listener => (&l.params, &s.params, &lx),
            };
            let meta = |variant: MetaVariant, flat: &[f64]| {
                let ctx = fx.ctx(variant, alpha);
                let store = store_with(own, flat);
                match role {
                    Role::Speaker => meta_speaker_gradient(
                        &Speaker::from_parts(fx.arch.clone(), store).unwrap(),
                        &[&l],
                        &ctx,
                        seed,
                    ),
                    Role::Listener => meta_listener_gradient(
                        &Listener::from_parts(fx.arch.clone(), store).unwrap(),
                        &[&s],
                        &ctx,
                        seed,
                    ),
                }
                .unwrap()
            };

            // second order: differentiate the reported post-adaptation loss
            let ad = flatten(&meta(MetaVariant::Maml, x).grads);
            let num = fd_gradient(|p| meta(MetaVariant::Maml, p).outer_loss, x, FD_EPS);
            record(name_maml, SECOND_ORDER_TOL, rel_error(&ad, &num));

            // first order and Reptile: rebuild the two task losses and
            // take every gradient by finite differences
            let mut r0 = substream(seed, 0);
            let ctx = fx.ctx(MetaVariant::Fomaml, alpha);
            let rin = rounds_from(ctx.inner, ctx.batch_size, ctx.k, ctx.distractors, &mut r0).unwrap();
            let rout = rounds_from(ctx.outer, ctx.batch_size, ctx.k, ctx.distractors, &mut r0).unwrap();
            let g_in = fd_gradient(
                |p| task_value(&fx, role, &store_with(own, p), partner, &rin, seed, 1),
                x,
                FD_EPS,
            );
            let adapted: Vec<f64> = x.iter().zip(&g_in).map(|(p, g)| p - alpha * g).collect();
            let g_out = fd_gradient(
                |p| task_value(&fx, role, &store_with(own, p), partner, &rout, seed, 2),
                &adapted,
                FD_EPS,
            );
            let ad = flatten(&meta(MetaVariant::Fomaml, x).grads);
            record(name_fo, FIRST_ORDER_TOL, rel_error(&ad, &g_out));

            let twice: Vec<f64> = adapted.iter().zip(&g_out).map(|(p, g)| p - alpha * g).collect();
            let reptile: Vec<f64> = x.iter().zip(&twice).map(|(a, b)| a - b).collect();
            let ad = flatten(&meta(MetaVariant::Reptile, x).grads);
            record(name_rep, FIRST_ORDER_TOL, rel_error(&ad, &reptile));
        }
    }
    worst
        .into_iter()
        .map(|(objective, (worst, tolerance))| GradCheck {
            objective,
            worst,
            tolerance,
            points,
        })
        .collect()
}

/// The closed-form check of [`grad_through_update`] on a quadratic, where
/// the second-order gradient is known exactly.
pub fn quadratic_meta_check() -> f64 {
    // inner = 0.5 a x^2, outer = 0.5 b (x - c)^2
    // d/dx outer(x - alpha a x) = b (x (1 - alpha a) - c)(1 - alpha a)
    let (a, b, c, alpha, x) = (1.7, 0.6, 0.4, 0.2, 1.3);
    let g = grad_through_update(
        &[Tensor::scalar(x)],
        alpha,
        MetaOrder::SecondOrder,
        |t, p| {
            let sq = t.mul(p[0], p[0])?;
            t.scale(sq, 0.5 * a)
        },
        |t, p| {
            let d = t.add_scalar(p[0], -c)?;
            let sq = t.mul(d, d)?;
            t.scale(sq, 0.5 * b)
        },
    )
    .unwrap();
    let want = b * (x * (1.0 - alpha * a) - c) * (1.0 - alpha * a);
    (g.grads[0].item() - want).abs()
}

/// Outcome of the REINFORCE unbiasedness check.
#[derive(Debug, Clone)]
pub struct ReinforceCheck {
    pub episodes: usize,
    /// `|mean - exact| / standard error` along the exact gradient and four
    /// random unit directions.
    pub direction_z: Vec<f64>,
    /// Share of parameters whose mean lies within 3 standard errors.
    pub coord_within: f64,
    pub max_coord_z: f64,
    pub exact_norm: f64,
}

impl ReinforceCheck {
    pub fn passed(&self) -> bool {
        self.direction_z.iter().all(|z| *z <= 3.0) && self.coord_within >= 0.95
    }
}

/// Every message a speaker over content tokens {2, 3} with two decoding
/// steps can emit.
fn all_messages() -> Vec<Vec<usize>> {
    let mut out = vec![vec![EOS]];
    for w in [2, 3] {
        out.push(vec![w, EOS]);
        for w2 in [2, 3] {
            out.push(vec![w, w2]);
        }
    }
    out
}

/// Monte-Carlo mean of the speaker's policy-gradient estimate against the
/// exact gradient of the expected length-normalised reward, on the world
/// with one attribute of two values and one distractor.
pub fn reinforce_check(episodes: usize, batch: usize) -> ReinforceCheck {
    let spec = WorldSpec::uniform(1, 2, 0);
    let arch = Architecture::for_world(&spec, 4, 3);
    assert_eq!(arch.vocab, 4);
    assert_eq!(arch.max_len, 2);
    let speaker = Speaker::new(arch.clone(), &mut substream(77, 0)).unwrap();
    let listener = Listener::new(arch.clone(), &mut substream(77, 1)).unwrap();
    let pool = vec![Object::new(vec![0]), Object::new(vec![1])];
    let loss = LossConfig {
        lambda_hs: 0.0,
        reward_baseline: false,
        ..LossConfig::default()
    };

    // exact objective: J = E_t E_order E_m [r / l]
    let orders = [[0usize, 1], [1, 0]];
    let expected = |s: &Speaker| -> f64 {
        let mut j = 0.0;
        for (ti, t) in pool.iter().enumerate() {
            for order in &orders {
                let cands: Vec<Object> = order.iter().map(|&i| pool[i].clone()).collect();
                let target_index = order.iter().position(|&i| i == ti).unwrap();
                for m in all_messages() {
                    let p = s.log_likelihood(t, &m).unwrap().exp();
                    let probs = listener.listen(&m, &cands).unwrap();
                    let r = probs
                        .iter()
                        .enumerate()
                        .map(|(c, q)| q * dynpop::game::reward(c == target_index))
                        .sum::<f64>();
                    j += 0.25 * p * r / m.len() as f64;
                }
            }
        }
        j
    };
    let x = speaker.params.to_flat();
    // the loss is -J, so its expected gradient is -grad J
    let exact: Vec<f64> = fd_gradient(
        |p| expected(&Speaker::from_parts(arch.clone(), store_with(&speaker.params, p)).unwrap()),
        &x,
        1e-6,
    )
    .into_iter()
    .map(|g| -g)
    .collect();

    let n_batches = episodes / batch;
    let mut rng = substream(78, 0);
    let mut batch_means: Vec<Vec<f64>> = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let rounds = rounds_from(&pool, batch, 1, DistractorMode::Uniform, &mut rng).unwrap();
        let mut tape = Tape::new();
        let sv = leaves(&mut tape, &speaker.params);
        let lv = listener.params.on_tape(&mut tape, false);
        let t = interactive_losses(&arch, &mut tape, &sv, &lv, &rounds, &loss, &mut rng).unwrap();
        batch_means.push(flatten(&tape.backward(t.speaker_loss, &sv).unwrap()));
    }

    let dim = x.len();
    let nb = n_batches as f64;
    let project = |u: &[f64]| -> (f64, f64) {
        let vals: Vec<f64> = batch_means.iter().map(|g| dot(g, u)).collect();
        let mean = vals.iter().sum::<f64>() / nb;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        (mean, (var / nb).sqrt())
    };
    let z = |u: &[f64]| -> f64 {
        let (m, se) = project(u);
        let want = dot(&exact, u);
        (m - want).abs() / se.max(1e-300)
    };

    let norm = dot(&exact, &exact).sqrt();
    let mut directions = vec![exact.iter().map(|g| g / norm).collect::<Vec<_>>()];
    let mut dir_rng = substream(79, 0);
    for _ in 0..4 {
        let v: Vec<f64> = (0..dim)
            .map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut dir_rng))
            .collect();
        let n = dot(&v, &v).sqrt();
        directions.push(v.iter().map(|x| x / n).collect());
    }
    let direction_z = directions.iter().map(|u| z(u)).collect();

    let mut within = 0usize;
    let mut counted = 0usize;
    let mut max_coord_z = 0.0f64;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let (m, se) = project(&e);
        if se == 0.0 {
            // parameters the speaker loss cannot reach (e.g. the PAD logit row)
            assert!((m - exact[i]).abs() < 1e-9, "coordinate {i}: {m} vs {}", exact[i]);
            continue;
        }
        counted += 1;
        let zi = (m - exact[i]).abs() / se;
        max_coord_z = max_coord_z.max(zi);
        if zi <= 3.0 {
            within += 1;
        }
    }
    ReinforceCheck {
        episodes: n_batches * batch,
        direction_z,
        coord_within: within as f64 / counted.max(1) as f64,
        max_coord_z,
        exact_norm: norm,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Chi-square test that every stream position is equally likely to be
/// retained. Returns `(statistic, p_value)`.
pub fn reservoir_chi_square(capacity: usize, stream: usize, trials: usize, seed: u64) -> (f64, f64) {
    let mut counts = vec![0usize; stream];
    for trial in 0..trials {
        let mut rng = substream(seed, trial as u64);
        let mut buf = PopulationBuffer::new(capacity);
        for i in 0..stream {
            buf.insert(i, &mut rng);
        }
        for &i in buf.items() {
            counts[i] += 1;
        }
    }
    let expected = trials as f64 * capacity as f64 / stream as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new((stream - 1) as f64).unwrap().cdf(stat);
    (stat, p)
}
