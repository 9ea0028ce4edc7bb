use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::{similarity, Object};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DistractorMode {
    /// Uniform over the pool.
    Uniform,
    /// Uniform over pool objects whose attribute overlap with the target is
    /// at least `threshold`; when there are fewer than K of those, the K
    /// most similar objects (random tie-break).
    Hard { threshold: f64 },
}

impl Default for DistractorMode {
    fn default() -> Self {
        DistractorMode::Uniform
    }
}

/// `k` distinct objects from `pool`, none equal to `target`.
pub fn sample_distractors<R: Rng + ?Sized>(
    target: &Object,
    k: usize,
    mode: DistractorMode,
    pool: &[Object],
    rng: &mut R,
) -> Result<Vec<Object>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let eligible: Vec<&Object> = pool.iter().filter(|o| *o != target).collect();
    if eligible.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need {k} distractors but the pool only has {} objects besides the target",
            eligible.len()
        )));
    }
    match mode {
        DistractorMode::Uniform => Ok(index::sample(rng, eligible.len(), k)
            .into_iter()
            .map(|i| eligible[i].clone())
            .collect()),
        DistractorMode::Hard { threshold } => {
            let close: Vec<&Object> = eligible
                .iter()
                .copied()
                .filter(|o| similarity(target, o) >= threshold)
                .collect();
            if close.len() >= k {
                return Ok(index::sample(rng, close.len(), k)
                    .into_iter()
                    .map(|i| close[i].clone())
                    .collect());
            }
            let mut ranked: Vec<(f64, f64, &Object)> = eligible
                .iter()
                .map(|o| (similarity(target, o), rng.random::<f64>(), *o))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
            Ok(ranked.into_iter().take(k).map(|(_, _, o)| o.clone()).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{World, WorldSpec};

    fn world() -> World {
        World::new(WorldSpec::uniform(4, 6, 11).with_splits(0, 0, 0)).unwrap()
    }

    #[test]
    fn zero_distractors() {
        let w = world();
        let t = &w.split().train[0];
        let mut rng = crate::rng::seeded(0);
        let d = sample_distractors(t, 0, DistractorMode::Uniform, &w.split().train, &mut rng);
        assert!(d.unwrap().is_empty());
    }

    #[test]
    fn uniform_is_reproducible_and_excludes_target() {
        let w = world();
        let pool = &w.split().train;
        let t = &pool[5];
        let a = sample_distractors(t, 9, DistractorMode::Uniform, pool, &mut crate::rng::seeded(3))
            .unwrap();
        let b = sample_distractors(t, 9, DistractorMode::Uniform, pool, &mut crate::rng::seeded(3))
            .unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(t));
        let mut uniq = a.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 9);
    }

    #[test]
    fn hard_mode_shares_three_of_four_attributes() {
        let w = world();
        let pool: Vec<Object> = w.universe().collect();
        let mut rng = crate::rng::seeded(9);
        for t in pool.iter().step_by(37) {
            let d = sample_distractors(t, 4, DistractorMode::Hard { threshold: 0.75 }, &pool, &mut rng)
                .unwrap();
            assert_eq!(d.len(), 4);
            for o in &d {
                assert_ne!(o, t);
                let shared = o.values.iter().zip(&t.values).filter(|(a, b)| a == b).count();
                assert!(shared >= 3);
            }
        }
    }

    #[test]
    fn hard_mode_falls_back_to_most_similar() {
        let pool = vec![
            Object::new(vec![0, 0]),
            Object::new(vec![0, 1]),
            Object::new(vec![1, 1]),
            Object::new(vec![2, 2]),
        ];
        let t = Object::new(vec![0, 0]);
        let d = sample_distractors(
            &t,
            2,
            DistractorMode::Hard { threshold: 0.9 },
            &pool,
            &mut crate::rng::seeded(1),
        )
        .unwrap();
        assert_eq!(d[0], Object::new(vec![0, 1]));
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn pool_too_small() {
        let pool = vec![Object::new(vec![0]), Object::new(vec![1])];
        let r = sample_distractors(
            &pool[0],
            2,
            DistractorMode::Uniform,
            &pool,
            &mut crate::rng::seeded(0),
        );
        assert!(r.is_err());
    }
}
