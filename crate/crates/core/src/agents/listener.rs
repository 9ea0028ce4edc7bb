use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{one_hot, orthogonal_gates, uniform_init, GruVars};
use super::{expect_segments, Architecture};
use crate::error::{Error, Result};
use crate::grad::{ParameterStore, Tape, Tensor, Var};
use crate::message::{EOS, PAD};
use crate::world::Object;

pub(crate) const SEGMENTS: [&str; 7] = [
    "emb", "gru.wx", "gru.wh", "gru.bx", "gru.bh", "obj.w", "obj.b",
];

/// Message encoder plus object encoder, scoring candidates by dot product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Listener {
    pub arch: Architecture,
    pub params: ParameterStore,
}

impl Listener {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let (iw, h, e, v) = (arch.input_width(), arch.hidden, arch.embed, arch.vocab);
        let mut params = ParameterStore::new();
        params.insert("emb", uniform_init(v, e, e, rng))?;
        params.insert("gru.wx", uniform_init(e, 3 * h, e, rng))?;
        params.insert("gru.wh", orthogonal_gates(h, rng))?;
        params.insert("gru.bx", uniform_init(1, 3 * h, h, rng))?;
        params.insert("gru.bh", uniform_init(1, 3 * h, h, rng))?;
        params.insert("obj.w", uniform_init(iw, h, iw, rng))?;
        params.insert("obj.b", uniform_init(1, h, iw, rng))?;
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: ParameterStore) -> Result<Self> {
        arch.validate()?;
        expect_segments(&params, &SEGMENTS, "listener")?;
        Ok(Self { arch, params })
    }

    /// Distribution over `candidates` given a message.
    pub fn listen(&self, tokens: &[usize], candidates: &[Object]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let cands: Vec<&Object> = candidates.iter().collect();
        let lp = listener_log_probs(&self.arch, &mut tape, &vars, &[tokens], &[&cands])?;
        Ok(tape.value(lp).data().iter().map(|l| l.exp()).collect())
    }

    /// Batched [`Listener::listen`]: row `b` is the distribution over `candidates[b]`.
    pub fn listen_batch(
        &self,
        messages: &[&[usize]],
        candidates: &[&[&Object]],
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.on_tape(&mut tape, false);
        let lp = listener_log_probs(&self.arch, &mut tape, &vars, messages, candidates)?;
        let mut t = tape.value(lp).clone();
        t.data_mut().iter_mut().for_each(|l| *l = l.exp());
        Ok(t)
    }
}

/// `[B, n]` log-distribution over each example's `n` candidates.
///
/// Messages are read up to and including the first EOS (at most `max_len`
/// tokens); shorter messages keep their state once finished.
pub fn listener_log_probs(
    arch: &Architecture,
    tape: &mut Tape,
    vars: &[Var],
    messages: &[&[usize]],
    candidates: &[&[&Object]],
) -> Result<Var> {
    if vars.len() != SEGMENTS.len() {
        return Err(Error::InvalidArgument(format!(
            "listener expects {} parameter vars, got {}",
            SEGMENTS.len(),
            vars.len()
        )));
    }
    let b = messages.len();
    if b == 0 {
        return Err(Error::EmptyBatch);
    }
    if candidates.len() != b {
        return Err(Error::InvalidArgument(format!(
            "{b} messages but {} candidate sets",
            candidates.len()
        )));
    }
    let n = candidates[0].len();
    if n == 0 || candidates.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument(
            "every example needs the same non-zero number of candidates".into(),
        ));
    }
    let lens: Vec<usize> = messages
        .iter()
        .map(|m| {
            let cut = m.iter().position(|&t| t == EOS).map_or(m.len(), |p| p + 1);
            cut.min(arch.max_len)
        })
        .collect();
    if let Some(&t) = messages.iter().flat_map(|m| m.iter()).find(|&&t| t >= arch.vocab) {
        return Err(Error::InvalidArgument(format!(
            "token {t} is outside a vocabulary of {}",
            arch.vocab
        )));
    }

    let gru = GruVars {
        wx: vars[1],
        wh: vars[2],
        bx: vars[3],
        bh: vars[4],
        hidden: arch.hidden,
    };
    let mut h = tape.constant(Tensor::zeros(b, arch.hidden));
    let steps = lens.iter().copied().max().unwrap_or(0);
    for step in 0..steps {
        let toks: Vec<usize> = (0..b)
            .map(|r| if step < lens[r] { messages[r][step] } else { PAD })
            .collect();
        let x = tape.gather_rows(vars[0], &toks)?;
        let h_new = gru.step(tape, x, h)?;
        if lens.iter().all(|&l| step < l) {
            h = h_new;
        } else {
            let mut m = Tensor::zeros(b, arch.hidden);
            for r in 0..b {
                if step < lens[r] {
                    m.data_mut()[r * arch.hidden..(r + 1) * arch.hidden].fill(1.0);
                }
            }
            let m = tape.constant(m);
            let d = tape.sub(h_new, h)?;
            let d = tape.mul(d, m)?;
            h = tape.add(h, d)?;
        }
    }

    let flat: Vec<&Object> = candidates.iter().flat_map(|c| c.iter().copied()).collect();
    let x = tape.constant(one_hot(&flat, arch.values));
    let enc = tape.matmul(x, vars[5])?;
    let enc = tape.add_row(enc, vars[6])?;
    let rep: Vec<usize> = (0..b).flat_map(|r| std::iter::repeat_n(r, n)).collect();
    let msg = tape.gather_rows(h, &rep)?;
    let prod = tape.mul(msg, enc)?;
    let scores = tape.sum_cols(prod)?;
    let scores = tape.reshape(scores, b, n)?;
    tape.log_softmax(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldSpec;

    fn listener(seed: u64) -> Listener {
        let arch = Architecture::for_world(&WorldSpec::uniform(2, 3, 0), 8, 4);
        Listener::new(arch, &mut crate::rng::seeded(seed)).unwrap()
    }

    fn cands() -> Vec<Object> {
        vec![
            Object::new(vec![0, 1]),
            Object::new(vec![2, 2]),
            Object::new(vec![1, 0]),
            Object::new(vec![1, 1]),
        ]
    }

    #[test]
    fn normalised() {
        let l = listener(0);
        let p = l.listen(&[3, 7, EOS], &cands()).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_candidates_are_uniform() {
        let l = listener(1);
        let c = vec![Object::new(vec![1, 1]); 5];
        for p in l.listen(&[2, 5, EOS], &c).unwrap() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn single_candidate() {
        let l = listener(2);
        assert_eq!(l.listen(&[4, EOS], &[Object::new(vec![0, 0])]).unwrap(), vec![1.0]);
    }

    #[test]
    fn permutation_equivariant() {
        let l = listener(3);
        let c = cands();
        let p = l.listen(&[3, 6, EOS], &c).unwrap();
        let perm = [2, 0, 3, 1];
        let pc: Vec<Object> = perm.iter().map(|&i| c[i].clone()).collect();
        let q = l.listen(&[3, 6, EOS], &pc).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((q[j] - p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_single_despite_lengths() {
        let l = listener(4);
        let c = cands();
        let refs: Vec<&Object> = c.iter().collect();
        let msgs: [&[usize]; 3] = [&[3, EOS], &[3, 6, 7, EOS], &[EOS]];
        let batch = l.listen_batch(&msgs, &[&refs, &refs, &refs]).unwrap();
        for (r, m) in msgs.iter().enumerate() {
            let single = l.listen(m, &c).unwrap();
            for (a, b) in batch.row_slice(r).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tokens_after_eos_are_ignored() {
        let l = listener(5);
        let a = l.listen(&[3, EOS], &cands()).unwrap();
        let b = l.listen(&[3, EOS, 5, 6], &cands()).unwrap();
        assert_eq!(a, b);
    }
}
