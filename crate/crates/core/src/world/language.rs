use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Object, WorldSpec};
use crate::error::{Error, Result};
use crate::message::{Message, EOS, FIRST_CONTENT_TOKEN};

/// The compositional reference language: one token per (attribute, value)
/// pair (or `synonyms` interchangeable tokens), emitted in a fixed attribute
/// order and terminated by EOS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalLanguage {
    attributes: usize,
    values: usize,
    synonyms: usize,
    order: Vec<usize>,
}

impl CanonicalLanguage {
    pub fn new(spec: &WorldSpec) -> Self {
        Self {
            attributes: spec.attributes,
            values: spec.values,
            synonyms: spec.synonyms,
            order: (0..spec.attributes).collect(),
        }
    }

    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..self.attributes).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "emission order {order:?} is not a permutation of the attributes"
            )));
        }
        self.order = order;
        Ok(self)
    }

    pub fn vocab_size(&self) -> usize {
        FIRST_CONTENT_TOKEN + self.attributes * self.values * self.synonyms
    }

    pub fn attributes(&self) -> usize {
        self.attributes
    }

    pub fn values(&self) -> usize {
        self.values
    }

    /// Canonical description length, EOS included.
    pub fn description_len(&self) -> usize {
        self.attributes + 1
    }

    pub fn token(&self, attribute: usize, value: usize) -> usize {
        self.synonym_token(attribute, value, 0)
    }

    pub fn synonym_token(&self, attribute: usize, value: usize, synonym: usize) -> usize {
        FIRST_CONTENT_TOKEN + (attribute * self.values + value) * self.synonyms + synonym
    }

    /// Inverse of the token map; `None` for PAD, EOS and out-of-range ids.
    pub fn decode_token(&self, token: usize) -> Option<(usize, usize)> {
        if token < FIRST_CONTENT_TOKEN || token >= self.vocab_size() {
            return None;
        }
        let pair = (token - FIRST_CONTENT_TOKEN) / self.synonyms;
        Some((pair / self.values, pair % self.values))
    }

    /// The reference description of `t`.
    pub fn describe(&self, t: &Object) -> Message {
        let mut tokens: Vec<usize> = self
            .order
            .iter()
            .map(|&a| self.token(a, t.values[a]))
            .collect();
        tokens.push(EOS);
        Message::from_tokens(tokens)
    }

    /// Like [`describe`](Self::describe) but with a random synonym per token.
    pub fn describe_with_synonyms<R: Rng + ?Sized>(&self, t: &Object, rng: &mut R) -> Message {
        let mut tokens: Vec<usize> = self
            .order
            .iter()
            .map(|&a| self.synonym_token(a, t.values[a], rng.random_range(0..self.synonyms)))
            .collect();
        tokens.push(EOS);
        Message::from_tokens(tokens)
    }

    /// Attribute values mentioned by a message; later mentions override
    /// earlier ones, unknown tokens are ignored.
    pub fn parse_partial(&self, tokens: &[usize]) -> Vec<Option<usize>> {
        let mut parsed = vec![None; self.attributes];
        for &tok in tokens {
            if let Some((a, v)) = self.decode_token(tok) {
                parsed[a] = Some(v);
            }
        }
        parsed
    }

    /// Full parse; `None` unless every attribute is mentioned.
    pub fn parse(&self, tokens: &[usize]) -> Option<Object> {
        self.parse_partial(tokens)
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .map(Object::new)
    }

    /// Deterministic stand-in for a human speaker.
    pub fn oracle_speaker(&self, t: &Object) -> Message {
        self.describe(t)
    }

    /// Deterministic stand-in for a human listener: the candidate agreeing
    /// with the most parsed attributes, lowest index on ties.
    pub fn oracle_listener(&self, tokens: &[usize], candidates: &[Object]) -> usize {
        let parsed = self.parse_partial(tokens);
        let mut best = (0, 0usize);
        for (i, c) in candidates.iter().enumerate() {
            let score = parsed
                .iter()
                .zip(&c.values)
                .filter(|(p, v)| **p == Some(**v))
                .count();
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }
}
