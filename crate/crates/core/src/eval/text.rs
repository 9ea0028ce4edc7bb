use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::agents::{Decode, Speaker};
use crate::error::{Error, Result};
use crate::message::strip_special;
use crate::world::{CanonicalLanguage, Object};

/// Added to every n-gram precision so one empty order does not zero the score.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Corpus BLEU with the number of sentence pairs behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bleu {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub sentences: usize,
}

fn ngrams(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 of `hypotheses` against one reference each. PAD and EOS
/// are stripped first.
pub fn bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<Bleu> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = strip_special(h);
        let r = strip_special(r);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngrams(&h, n);
            let rc = ngrams(&r, n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        precisions[n] = (matches[n] as f64 + BLEU_EPSILON) / (totals[n] as f64 + BLEU_EPSILON);
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    Ok(Bleu {
        score: brevity_penalty * log_mean.exp(),
        precisions,
        brevity_penalty,
        sentences: hypotheses.len(),
    })
}

/// Length and vocabulary statistics of generated messages relative to
/// their references.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Mean of `len(hyp) / len(ref)`.
    pub length_ratio: f64,
    /// Mean of `unique(hyp) / unique(ref)`.
    pub unique_ratio: f64,
    pub sentences: usize,
}

pub fn corpus_stats(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<CorpusStats> {
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (mut len, mut uniq) = (0.0, 0.0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = strip_special(h);
        let r = strip_special(r);
        if r.is_empty() {
            return Err(Error::InvalidArgument("empty reference".into()));
        }
        len += h.len() as f64 / r.len() as f64;
        let hu: HashSet<_> = h.iter().collect();
        let ru: HashSet<_> = r.iter().collect();
        uniq += hu.len() as f64 / ru.len() as f64;
    }
    let n = hypotheses.len() as f64;
    Ok(CorpusStats {
        length_ratio: len / n,
        unique_ratio: uniq / n,
        sentences: hypotheses.len(),
    })
}

/// Greedy descriptions of `objects` and their canonical references.
pub fn describe_all(
    speaker: &Speaker,
    lang: &CanonicalLanguage,
    objects: &[Object],
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let mut rng = crate::rng::seeded(0);
    let hyps = speaker
        .speak(objects, Decode::Greedy, &mut rng)?
        .into_iter()
        .map(|m| m.tokens)
        .collect();
    let refs = objects.iter().map(|o| lang.describe(o).tokens).collect();
    Ok((hyps, refs))
}

/// Corpus BLEU of a speaker's greedy descriptions against the canonical ones.
pub fn speaker_bleu(speaker: &Speaker, lang: &CanonicalLanguage, objects: &[Object]) -> Result<Bleu> {
    let (h, r) = describe_all(speaker, lang, objects)?;
    bleu(&h, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![vec![2, 3, 4, 5, 1], vec![6, 7, 8, 9, 1]];
        let b = bleu(&c, &c).unwrap();
        assert!((b.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_tokens_score_near_zero() {
        let b = bleu(&[vec![2, 3, 4, 5]], &[vec![6, 7, 8, 9]]).unwrap();
        assert!(b.score < 1e-6);
    }

    #[test]
    fn hand_computed_example() {
        // precisions 3/4, 2/3, 1/2, 0 (+eps), equal lengths
        let b = bleu(&[vec![2, 3, 4, 5]], &[vec![2, 3, 4, 6]]).unwrap();
        let want = (0.75f64 * (2.0 / 3.0) * 0.5 * 1e-9).powf(0.25);
        assert!((b.score - want).abs() < 1e-9 * want.max(1e-12) + 1e-12, "{}", b.score);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn short_hypothesis_is_penalised() {
        let b = bleu(&[vec![2, 3]], &[vec![2, 3, 4, 5]]).unwrap();
        assert!((b.brevity_penalty - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn specials_are_ignored() {
        let a = bleu(&[vec![2, 3, 4, 5, 1, 0]], &[vec![2, 3, 4, 5]]).unwrap();
        assert!((a.score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_stats_examples() {
        let same = corpus_stats(&[vec![2, 3, 4, 5]], &[vec![2, 3, 4, 5]]).unwrap();
        assert_eq!((same.length_ratio, same.unique_ratio), (1.0, 1.0));
        let half = corpus_stats(&[vec![2, 3]], &[vec![2, 3, 4, 5]]).unwrap();
        assert_eq!(half.length_ratio, 0.5);
        let rep = corpus_stats(&[vec![2, 2, 2, 2]], &[vec![2, 3, 4, 5]]).unwrap();
        assert_eq!(rep.unique_ratio, 0.25);
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(bleu(&[vec![2]], &[]).is_err());
        assert!(corpus_stats(&[], &[]).is_err());
    }
}
