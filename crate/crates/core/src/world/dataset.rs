use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::language::CanonicalLanguage;
use super::spec::{Object, World, WorldSpec};
use crate::error::{Error, Result};
use crate::message::Message;

/// (object, reference description) pairs used for supervised grounding.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingDataset {
    pub world: WorldSpec,
    pub pairs: Vec<(Object, Message)>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    world: WorldSpec,
    world_hash: String,
    pairs: Vec<PairRecord>,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    object: Vec<usize>,
    tokens: Vec<usize>,
}

impl GroundingDataset {
    /// `size` distinct training objects with their canonical descriptions.
    /// With synonyms enabled each description draws random synonyms.
    pub fn build<R: Rng + ?Sized>(world: &World, size: usize, rng: &mut R) -> Result<Self> {
        let train = &world.split().train;
        if size > train.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset of {size} pairs requested but the training split has {} objects",
                train.len()
            )));
        }
        let lang = CanonicalLanguage::new(world.spec());
        let mut picks = index::sample(rng, train.len(), size).into_vec();
        picks.sort_unstable();
        let pairs = picks
            .into_iter()
            .map(|i| {
                let t = train[i].clone();
                let m = if world.spec().synonyms > 1 {
                    lang.describe_with_synonyms(&t, rng)
                } else {
                    lang.describe(&t)
                };
                (t, m)
            })
            .collect();
        Ok(Self {
            world: world.spec().clone(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn objects(&self) -> Vec<Object> {
        self.pairs.iter().map(|(o, _)| o.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            world: self.world.clone(),
            world_hash: self.world.hash(),
            pairs: self
                .pairs
                .iter()
                .map(|(o, m)| PairRecord {
                    object: o.values.clone(),
                    tokens: m.tokens.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.world.hash() != file.world_hash {
            return Err(Error::WorldMismatch {
                expected: file.world_hash,
                found: file.world.hash(),
            });
        }
        Ok(Self {
            world: file.world,
            pairs: file
                .pairs
                .into_iter()
                .map(|p| (Object::new(p.object), Message::from_tokens(p.tokens)))
                .collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
