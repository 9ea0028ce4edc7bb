use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{play_batch, ListenerPolicy, PlayMode, SpeakerPolicy};
use crate::world::{DistractorMode, Object};

const CHUNK: usize = 512;

/// Fraction of correct episodes with the number of episodes behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub episodes: usize,
}

impl Accuracy {
    /// Binomial standard error.
    pub fn std_error(&self) -> f64 {
        (self.value * (1.0 - self.value) / self.episodes.max(1) as f64).sqrt()
    }
}

/// Play `episodes` games with targets drawn uniformly (with replacement)
/// from `objects`, distractors from the same set.
#[allow(clippy::too_many_arguments)]
pub fn referential_accuracy<R: Rng>(
    speaker: &dyn SpeakerPolicy,
    listener: &dyn ListenerPolicy,
    objects: &[Object],
    k: usize,
    distractors: DistractorMode,
    episodes: usize,
    mode: PlayMode,
    rng: &mut R,
) -> Result<Accuracy> {
    if objects.is_empty() || episodes == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    let mut done = 0;
    while done < episodes {
        let n = CHUNK.min(episodes - done);
        let targets: Vec<Object> = (0..n)
            .map(|_| objects[rng.random_range(0..objects.len())].clone())
            .collect();
        let batch = play_batch(speaker, listener, &targets, k, distractors, objects, mode, rng)?;
        correct += batch.episodes.iter().filter(|e| e.correct()).count();
        done += n;
    }
    Ok(Accuracy {
        value: correct as f64 / episodes as f64,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{OracleListener, OracleSpeaker, UniformListener};
    use crate::world::{CanonicalLanguage, World, WorldSpec};

    #[test]
    fn oracle_pair_is_perfect() {
        let w = World::new(WorldSpec::uniform(3, 4, 0)).unwrap();
        let lang = CanonicalLanguage::new(w.spec());
        let objs: Vec<Object> = w.universe().collect();
        let acc = referential_accuracy(
            &OracleSpeaker(lang.clone()),
            &OracleListener(lang),
            &objs,
            5,
            DistractorMode::Uniform,
            1000,
            PlayMode::EVAL,
            &mut crate::rng::seeded(0),
        )
        .unwrap();
        assert_eq!(acc.value, 1.0);
        assert_eq!(acc.episodes, 1000);
    }

    #[test]
    fn uniform_listener_is_at_chance() {
        let w = World::new(WorldSpec::uniform(3, 4, 0)).unwrap();
        let lang = CanonicalLanguage::new(w.spec());
        let objs: Vec<Object> = w.universe().collect();
        let acc = referential_accuracy(
            &OracleSpeaker(lang),
            &UniformListener,
            &objs,
            9,
            DistractorMode::Uniform,
            10_000,
            PlayMode::TRAIN,
            &mut crate::rng::seeded(1),
        )
        .unwrap();
        assert!((acc.value - 0.1).abs() < 4.0 * acc.std_error(), "{}", acc.value);
    }
}
