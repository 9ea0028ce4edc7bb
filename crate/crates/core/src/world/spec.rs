use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Largest object universe that is enumerated eagerly.
pub const MAX_UNIVERSE: usize = 1 << 22;

/// Shape of a synthetic object world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    /// Number of attributes per object.
    pub attributes: usize,
    /// Number of values each attribute can take.
    pub values: usize,
    /// Per-attribute categorical distribution over values. Drives which
    /// objects end up in each split.
    pub bias: Vec<Vec<f64>>,
    /// Tokens per attribute value; 1 means one description per object.
    #[serde(default = "one")]
    pub synonyms: usize,
    pub test_size: usize,
    pub val_size: usize,
    /// 0 means every object not in the test or validation split.
    #[serde(default)]
    pub train_size: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl WorldSpec {
    pub fn uniform(attributes: usize, values: usize, seed: u64) -> Self {
        Self {
            attributes,
            values,
            bias: vec![vec![1.0 / values as f64; values]; attributes],
            synonyms: 1,
            test_size: 0,
            val_size: 0,
            train_size: 0,
            seed,
        }
    }

    /// Every attribute follows a Zipf law with the given exponent; the value
    /// ranks are rotated per attribute so different attributes favour
    /// different values.
    pub fn zipf(attributes: usize, values: usize, exponent: f64, seed: u64) -> Self {
        let mut spec = Self::uniform(attributes, values, seed);
        for (a, row) in spec.bias.iter_mut().enumerate() {
            let weights: Vec<f64> = (0..values)
                .map(|v| 1.0 / (((v + values - a % values) % values + 1) as f64).powf(exponent))
                .collect();
            let z: f64 = weights.iter().sum();
            *row = weights.iter().map(|w| w / z).collect();
        }
        spec
    }

    pub fn with_splits(mut self, test: usize, val: usize, train: usize) -> Self {
        self.test_size = test;
        self.val_size = val;
        self.train_size = train;
        self
    }

    pub fn universe_size(&self) -> usize {
        self.values.saturating_pow(self.attributes as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes < 1 {
            return Err(Error::World("need at least one attribute".into()));
        }
        if self.values < 2 {
            return Err(Error::World("need at least two values per attribute".into()));
        }
        if self.synonyms < 1 {
            return Err(Error::World("synonyms must be at least 1".into()));
        }
        if self.bias.len() != self.attributes {
            return Err(Error::World(format!(
                "bias has {} rows for {} attributes",
                self.bias.len(),
                self.attributes
            )));
        }
        for (a, row) in self.bias.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != self.values
                || row.iter().any(|&p| !(p >= 0.0))
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::World(format!(
                    "bias row {a} is not a distribution over {} values",
                    self.values
                )));
            }
        }
        let n = self.universe_size();
        if n > MAX_UNIVERSE {
            return Err(Error::World(format!("universe of {n} objects is too large")));
        }
        let train = if self.train_size == 0 {
            n.saturating_sub(self.test_size + self.val_size)
        } else {
            self.train_size
        };
        if self.test_size + self.val_size + train > n || train == 0 {
            return Err(Error::World(format!(
                "splits {}/{}/{} do not fit a universe of {n}",
                train, self.val_size, self.test_size
            )));
        }
        Ok(())
    }

    /// Short stable fingerprint of the full spec.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("world spec serialises");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Fingerprint of what determines the vocabulary and token map.
    pub fn vocab_hash(&self) -> String {
        let key = format!("{}:{}:{}", self.attributes, self.values, self.synonyms);
        let digest = Sha256::digest(key.as_bytes());
        hex::encode(&digest[..8])
    }
}

/// One referent: a value index for every attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Object {
    pub values: Vec<usize>,
}

impl Object {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }

    pub fn attributes(&self) -> usize {
        self.values.len()
    }

    pub fn is_valid_for(&self, spec: &WorldSpec) -> bool {
        self.values.len() == spec.attributes && self.values.iter().all(|&v| v < spec.values)
    }

    /// Mixed-radix index in the universe enumeration.
    pub fn index(&self, values_per_attribute: usize) -> usize {
        self.values
            .iter()
            .rev()
            .fold(0, |acc, &v| acc * values_per_attribute + v)
    }

    pub fn from_index(mut index: usize, attributes: usize, values: usize) -> Self {
        let mut out = Vec::with_capacity(attributes);
        for _ in 0..attributes {
            out.push(index % values);
            index /= values;
        }
        Self { values: out }
    }
}

impl std::fmt::Display for Object {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Disjoint object sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSplit {
    pub train: Vec<Object>,
    pub val: Vec<Object>,
    pub test: Vec<Object>,
}

impl WorldSplit {
    /// Random 50/50 partition of the training objects into the inner-loop
    /// and outer-loop sets.
    pub fn inner_outer<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<Object>, Vec<Object>) {
        let mut train = self.train.clone();
        crate::rng::shuffle(&mut train, rng);
        let half = train.len() / 2;
        let outer = train.split_off(half);
        (train, outer)
    }
}

/// A world: its spec, every object, and the train/validation/test split.
#[derive(Clone, Debug)]
pub struct World {
    spec: WorldSpec,
    split: WorldSplit,
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.universe_size();
        let mut rng = crate::rng::seeded(spec.seed);

        // Weighted sampling without replacement (exponential-key method):
        // each object gets key u^(1/w) and objects are taken by key order.
        let mut keyed: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let obj = Object::from_index(i, spec.attributes, spec.values);
                let w: f64 = obj
                    .values
                    .iter()
                    .enumerate()
                    .map(|(a, &v)| spec.bias[a][v])
                    .product();
                let u: f64 = rng.random::<f64>();
                let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
                (key, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut order = keyed
            .into_iter()
            .map(|(_, i)| Object::from_index(i, spec.attributes, spec.values));

        let test: Vec<Object> = order.by_ref().take(spec.test_size).collect();
        let val: Vec<Object> = order.by_ref().take(spec.val_size).collect();
        let train: Vec<Object> = if spec.train_size == 0 {
            order.collect()
        } else {
            order.take(spec.train_size).collect()
        };
        Ok(Self {
            spec,
            split: WorldSplit { train, val, test },
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn split(&self) -> &WorldSplit {
        &self.split
    }

    pub fn hash(&self) -> String {
        self.spec.hash()
    }

    pub fn universe(&self) -> impl Iterator<Item = Object> + '_ {
        (0..self.spec.universe_size())
            .map(|i| Object::from_index(i, self.spec.attributes, self.spec.values))
    }
}

/// Fraction of attributes on which two objects agree.
pub fn similarity(a: &Object, b: &Object) -> f64 {
    let n = a.values.len().max(1);
    let matches = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    matches as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn similarity_examples() {
        let a = Object::new(vec![0, 1, 2, 3]);
        assert_eq!(similarity(&a, &a), 1.0);
        assert_eq!(similarity(&a, &Object::new(vec![1, 2, 3, 4])), 0.0);
        assert_eq!(similarity(&a, &Object::new(vec![0, 1, 0, 0])), 0.5);
    }

    #[test]
    fn index_round_trip() {
        for i in 0..216 {
            let o = Object::from_index(i, 3, 6);
            assert_eq!(o.index(6), i);
        }
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let w = World::new(WorldSpec::uniform(3, 4, 7).with_splits(10, 6, 0)).unwrap();
        let s = w.split();
        assert_eq!((s.test.len(), s.val.len(), s.train.len()), (10, 6, 48));
        let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 64);
        let mut rng = crate::rng::seeded(1);
        let (inner, outer) = s.inner_outer(&mut rng);
        assert_eq!(inner.len() + outer.len(), s.train.len());
        assert!(inner.iter().all(|o| !outer.contains(o)));
    }

    #[test]
    fn zipf_world_prefers_frequent_values() {
        let spec = WorldSpec::zipf(4, 6, 1.5, 3).with_splits(100, 0, 200);
        let w = World::new(spec.clone()).unwrap();
        for a in 0..4 {
            let fav = (0..6)
                .max_by(|&x, &y| spec.bias[a][x].total_cmp(&spec.bias[a][y]))
                .unwrap();
            let share = w.split().train.iter().filter(|o| o.values[a] == fav).count();
            assert!(share as f64 / 200.0 > 1.0 / 6.0 + 0.1, "attribute {a}: {share}");
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(WorldSpec::uniform(0, 3, 0).validate().is_err());
        assert!(WorldSpec::uniform(2, 1, 0).validate().is_err());
        let mut s = WorldSpec::uniform(2, 3, 0);
        s.bias[0][0] = 0.9;
        assert!(s.validate().is_err());
        assert!(WorldSpec::uniform(2, 3, 0).with_splits(9, 0, 0).validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = WorldSpec::uniform(2, 3, 0);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.vocab_hash(), b.vocab_hash());
    }
}
