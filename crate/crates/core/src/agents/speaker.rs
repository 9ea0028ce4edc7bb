use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{one_hot, orthogonal_gates, row_entropy, uniform_init, GruVars};
use super::{expect_segments, Architecture};
use crate::error::{Error, Result};
use crate::grad::{ParameterStore, Tape, Tensor, Var};
use crate::message::{Message, EOS, PAD};
use crate::world::Object;

pub(crate) const SEGMENTS: [&str; 9] = [
    "enc.w", "enc.b", "emb", "gru.wx", "gru.wh", "gru.bx", "gru.bh", "out.w", "out.b",
];

/// Logit added to PAD so the speaker never emits it.
const PAD_LOGIT: f64 = -1e9;

/// How the next token is chosen during a free-running rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decode", rename_all = "snake_case")]
pub enum Decode {
    /// Draw from the full step distribution.
    Sample,
    /// Most probable token, lowest id on ties.
    Greedy,
    /// Draw from the `k` most probable tokens, renormalised.
    TopK { k: usize },
}

/// A batch of generated (or teacher-forced) messages with the tape values
/// the training losses need.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// Emitted tokens per example, EOS included when it was produced.
    pub tokens: Vec<Vec<usize>>,
    /// `[B, 1]` sum of log-probabilities of the emitted tokens.
    pub log_prob: Var,
    /// `[B, 1]` sum of step entropies over emitted positions.
    pub entropy: Var,
    /// Step log-distributions `[B, |V|]`, one per decoding step.
    pub step_log_probs: Vec<Var>,
    /// Per step, which rows were still emitting.
    pub step_active: Vec<Vec<bool>>,
}

impl Rollout {
    pub fn batch_size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of emitted tokens (EOS included) for each example.
    pub fn lengths(&self) -> Vec<usize> {
        self.tokens.iter().map(Vec::len).collect()
    }

    /// Plain messages with per-token log-probabilities and step entropies.
    pub fn messages(&self, tape: &Tape) -> Vec<Message> {
        let mut out: Vec<Message> = self.tokens.iter().cloned().map(Message::from_tokens).collect();
        for (step, lp) in self.step_log_probs.iter().enumerate() {
            let dist = tape.value(*lp);
            for (b, m) in out.iter_mut().enumerate() {
                if !self.step_active[step][b] {
                    continue;
                }
                let row = dist.row_slice(b);
                m.log_probs.push(row[m.tokens[step]]);
                m.step_entropies.push(-row.iter().map(|l| l.exp() * l).sum::<f64>());
            }
        }
        out
    }
}

/// Object-conditioned recurrent message generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Speaker {
    pub arch: Architecture,
    pub params: ParameterStore,
}

impl Speaker {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (iw, h, e, v) = (arch.input_width(), arch.hidden, arch.embed, arch.vocab);
        let mut params = ParameterStore::new();
        params.insert("enc.w", uniform_init(iw, h, iw, rng))?;
        params.insert("enc.b", uniform_init(1, h, iw, rng))?;
        params.insert("emb", uniform_init(v, e, e, rng))?;
        params.insert("gru.wx", uniform_init(e, 3 * h, e, rng))?;
        params.insert("gru.wh", orthogonal_gates(h, rng))?;
        params.insert("gru.bx", uniform_init(1, 3 * h, h, rng))?;
        params.insert("gru.bh", uniform_init(1, 3 * h, h, rng))?;
        params.insert("out.w", uniform_init(h, v, h, rng))?;
        params.insert("out.b", uniform_init(1, v, h, rng))?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: ParameterStore) -> Result<Self> {
        arch.validate()?;
        expect_segments(&params, &SEGMENTS, "speaker")?;
        Ok(Self { arch, params })
    }

    /// Generate one message per object without recording gradients.
    pub fn speak<R: Rng + ?Sized>(
        &self,
        objects: &[Object],
        decode: Decode,
        rng: &mut R,
    ) -> Result<Vec<Message>> {
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let refs: Vec<&Object> = objects.iter().collect();
        let r = rollout(&self.arch, &mut tape, &vars, &refs, decode, rng)?;
        Ok(r.messages(&tape))
    }

    /// Log-likelihood of `tokens` (EOS included) given `object`.
    pub fn log_likelihood(&self, object: &Object, tokens: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let r = teacher_force(&self.arch, &mut tape, &vars, &[object], &[tokens])?;
        Ok(tape.value(r.log_prob).item())
    }

    /// Beam search over whole messages, scored by total log-probability.
    /// Returns the best finished beam (or best unfinished one at `max_len`).
    pub fn beam_search(&self, object: &Object, width: usize) -> Result<Message> {
        if width == 0 {
            return Err(Error::InvalidArgument("beam width must be at least 1".into()));
        }
        let arch = &self.arch;
        let mut tape = Tape::new();
        let p = self.params.on_tape(&mut tape, false);
        let x = tape.constant(one_hot(&[object], arch.values));
        let h0 = encode_object(&mut tape, &p, x)?;
        let mask = pad_mask(&mut tape, arch.vocab);

        struct Beam {
            tokens: Vec<usize>,
            log_probs: Vec<f64>,
            score: f64,
            h: usize,
        }
        let h0_row = tape.value(h0).clone();
        let mut beams = vec![Beam {
            tokens: Vec::new(),
            log_probs: Vec::new(),
            score: 0.0,
            h: 0,
        }];
        let mut states = vec![h0_row];
        let mut finished: Vec<(f64, Vec<usize>, Vec<f64>)> = Vec::new();
        for _ in 0..arch.max_len {
            if beams.is_empty() {
                break;
            }
            let mut data = Vec::new();
            for b in &beams {
                data.extend_from_slice(states[b.h].data());
            }
            let h = tape.constant(Tensor::new(beams.len(), arch.hidden, data)?);
            let prev: Vec<usize> = beams.iter().map(|b| *b.tokens.last().unwrap_or(&PAD)).collect();
            let (h_next, logp) = decode_step(&mut tape, &p, arch, h, &prev, mask)?;
            let logp = tape.value(logp).clone();
            let hn = tape.value(h_next).clone();
            let mut cand: Vec<(f64, usize, usize)> = Vec::new();
            for (i, b) in beams.iter().enumerate() {
                for tok in 1..arch.vocab {
                    cand.push((b.score + logp.get(i, tok), i, tok));
                }
            }
            cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::new();
            let mut next_states = Vec::new();
            for (score, i, tok) in cand.into_iter().take(width) {
                let mut tokens = beams[i].tokens.clone();
                tokens.push(tok);
                let mut lps = beams[i].log_probs.clone();
                lps.push(logp.get(i, tok));
                if tok == EOS {
                    finished.push((score, tokens, lps));
                } else {
                    next_states.push(Tensor::row(hn.row_slice(i).to_vec()));
                    next.push(Beam {
                        tokens,
                        log_probs: lps,
                        score,
                        h: next_states.len() - 1,
                    });
                }
            }
            beams = next;
            states = next_states;
        }
        for b in beams {
            finished.push((b.score, b.tokens, b.log_probs));
        }
        let best = finished
            .into_iter()
            .min_by(|a, b| b.0.total_cmp(&a.0))
            .expect("at least one beam");
        Ok(Message {
            tokens: best.1,
            log_probs: best.2,
            step_entropies: Vec::new(),
        })
    }
}

fn encode_object(tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
    let h = tape.matmul(x, p[0])?;
    let h = tape.add_row(h, p[1])?;
    tape.tanh(h)
}

fn pad_mask(tape: &mut Tape, vocab: usize) -> Var {
    let mut row = Tensor::zeros(1, vocab);
    row.data_mut()[PAD] = PAD_LOGIT;
    tape.constant(row)
}

/// One GRU step from the previous tokens; returns the new state and the
/// `[B, |V|]` log-distribution over the next token.
fn decode_step(
    tape: &mut Tape,
    p: &[Var],
    arch: &Architecture,
    h: Var,
    prev: &[usize],
    mask: Var,
) -> Result<(Var, Var)> {
    let gru = GruVars {
        wx: p[3],
        wh: p[4],
        bx: p[5],
        bh: p[6],
        hidden: arch.hidden,
    };
    let x = tape.gather_rows(p[2], prev)?;
    let h = gru.step(tape, x, h)?;
    let logits = tape.matmul(h, p[7])?;
    let logits = tape.add_row(logits, p[8])?;
    let logits = tape.add_row(logits, mask)?;
    let logp = tape.log_softmax(logits)?;
    Ok((h, logp))
}

fn check_vars(vars: &[Var]) -> Result<()> {
    if vars.len() != SEGMENTS.len() {
        return Err(Error::InvalidArgument(format!(
            "speaker expects {} parameter vars, got {}",
            SEGMENTS.len(),
            vars.len()
        )));
    }
    Ok(())
}

fn choose<R: Rng + ?Sized>(row: &[f64], decode: Decode, rng: &mut R) -> usize {
    match decode {
        Decode::Greedy => argmax(row),
        Decode::Sample => {
            let probs: Vec<f64> = row.iter().map(|l| l.exp()).collect();
            crate::rng::categorical(&probs, rng)
        }
        Decode::TopK { k } => {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order.truncate(k.max(1));
            let probs: Vec<f64> = order.iter().map(|&i| row[i].exp()).collect();
            order[crate::rng::categorical(&normalise(probs), rng)]
        }
    }
}

fn normalise(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

enum Source<'a, R: ?Sized> {
    Free(Decode, &'a mut R),
    Forced(&'a [&'a [usize]]),
}

/// Free-running generation for a batch of objects.
pub fn rollout<R: Rng + ?Sized>(
    arch: &Architecture,
    tape: &mut Tape,
    vars: &[Var],
    objects: &[&Object],
    decode: Decode,
    rng: &mut R,
) -> Result<Rollout> {
    run(arch, tape, vars, objects, Source::Free(decode, rng))
}

/// Score given messages under teacher forcing. Each message is read up to
/// and including its first EOS, or up to `max_len` tokens.
pub fn teacher_force(
    arch: &Architecture,
    tape: &mut Tape,
    vars: &[Var],
    objects: &[&Object],
    messages: &[&[usize]],
) -> Result<Rollout> {
    if messages.len() != objects.len() {
        return Err(Error::InvalidArgument(format!(
            "{} messages for {} objects",
            messages.len(),
            objects.len()
        )));
    }
    for m in messages {
        if m.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty message".into()));
        }
        if let Some(&t) = m.iter().find(|&&t| t >= arch.vocab || t == PAD) {
            return Err(Error::InvalidArgument(format!(
                "token {t} cannot be scored by a speaker over {} tokens",
                arch.vocab
            )));
        }
    }
    run(arch, tape, vars, objects, Source::<crate::rng::LabRng>::Forced(messages))
}

fn run<R: Rng + ?Sized>(
    arch: &Architecture,
    tape: &mut Tape,
    vars: &[Var],
    objects: &[&Object],
    mut source: Source<'_, R>,
) -> Result<Rollout> {
    check_vars(vars)?;
    if objects.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let b = objects.len();
    let x = tape.constant(one_hot(objects, arch.values));
    let mut h = encode_object(tape, vars, x)?;
    let mask = pad_mask(tape, arch.vocab);

    let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); b];
    let mut active = vec![true; b];
    let mut prev = vec![PAD; b];
    let mut log_prob: Option<Var> = None;
    let mut entropy: Option<Var> = None;
    let mut step_log_probs = Vec::new();
    let mut step_active = Vec::new();

    for step in 0..arch.max_len {
        let (h_next, logp) = decode_step(tape, vars, arch, h, &prev, mask)?;
        h = h_next;
        let mut picked = vec![EOS; b];
        {
            let dist = tape.value(logp).clone();
            for r in 0..b {
                if !active[r] {
                    continue;
                }
                picked[r] = match &mut source {
                    Source::Free(decode, rng) => choose(dist.row_slice(r), *decode, *rng),
                    Source::Forced(msgs) => msgs[r][step],
                };
            }
        }
        let m = Tensor::column(active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect());
        let m = tape.constant(m);
        let lp = tape.pick_cols(logp, &picked)?;
        let lp = tape.mul(lp, m)?;
        let ent = row_entropy(tape, logp)?;
        let ent = tape.mul(ent, m)?;
        log_prob = Some(match log_prob {
            Some(acc) => tape.add(acc, lp)?,
            None => lp,
        });
        entropy = Some(match entropy {
            Some(acc) => tape.add(acc, ent)?,
            None => ent,
        });
        step_log_probs.push(logp);
        step_active.push(active.clone());

        for r in 0..b {
            if !active[r] {
                continue;
            }
            tokens[r].push(picked[r]);
            let forced_end = match &source {
                Source::Forced(msgs) => step + 1 >= msgs[r].len(),
                Source::Free(..) => false,
            };
            if picked[r] == EOS || forced_end {
                active[r] = false;
            }
        }
        prev = picked;
        if active.iter().all(|a| !a) {
            break;
        }
    }
    Ok(Rollout {
        tokens,
        log_prob: log_prob.expect("max_len >= 1"),
        entropy: entropy.expect("max_len >= 1"),
        step_log_probs,
        step_active,
    })
}
