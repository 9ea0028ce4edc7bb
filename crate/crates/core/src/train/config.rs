use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::Architecture;
use crate::error::{Error, Result};
use crate::grad::MetaOrder;
use crate::world::{DistractorMode, WorldSpec};

/// Per-attribute value distribution of the world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bias {
    Uniform,
    Zipf { exponent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaVariant {
    Maml,
    Fomaml,
    Reptile,
}

impl MetaVariant {
    pub fn order(self) -> Option<MetaOrder> {
        match self {
            MetaVariant::Maml => Some(MetaOrder::SecondOrder),
            MetaVariant::Fomaml => Some(MetaOrder::FirstOrder),
            MetaVariant::Reptile => None,
        }
    }
}

/// Listener grounding loss on the known target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListenerSupLoss {
    /// `-p(target)`.
    Probability,
    /// `-log p(target)`.
    LogProbability,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub attributes: usize,
    pub values: usize,
    pub bias: Bias,
    pub synonyms: usize,
    pub test_size: usize,
    pub val_size: usize,
    /// 0 puts every remaining object in the training split.
    pub train_size: usize,
    pub dataset_size: usize,
    pub k: usize,
    pub distractors: DistractorMode,
    /// Seeds the split and the grounding dataset, shared by all runs on a world.
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            attributes: 4,
            values: 6,
            bias: Bias::Uniform,
            synonyms: 1,
            test_size: 200,
            val_size: 100,
            train_size: 0,
            dataset_size: 300,
            k: 4,
            distractors: DistractorMode::Uniform,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn spec(&self) -> WorldSpec {
        let base = match self.bias {
            Bias::Uniform => WorldSpec::uniform(self.attributes, self.values, self.seed),
            Bias::Zipf { exponent } => {
                WorldSpec::zipf(self.attributes, self.values, exponent, self.seed)
            }
        };
        let mut spec = base.with_splits(self.test_size, self.val_size, self.train_size);
        spec.synonyms = self.synonyms;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_hs: f64,
    pub lambda_hl: f64,
    pub lambda_s: f64,
    pub lambda_int: f64,
    pub listener_sup: ListenerSupLoss,
    /// Subtract the batch-mean reward in the policy-gradient terms.
    pub reward_baseline: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_hs: 0.01,
            lambda_hl: 0.03,
            lambda_s: 0.8,
            lambda_int: 0.1,
            listener_sup: ListenerSupLoss::Probability,
            reward_baseline: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Adam step size for supervised and interactive phases.
    pub lr: f64,
    /// Adam step size for the meta-agents.
    pub outer_lr: f64,
    /// Inner-loop step size.
    pub inner_lr: f64,
    pub meta_variant: MetaVariant,
    /// Global-norm gradient clipping; 0 disables it.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            outer_lr: 3e-3,
            inner_lr: 0.1,
            meta_variant: MetaVariant::Maml,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub n_pretrain: usize,
    pub n_meta: usize,
    pub n_int: usize,
    pub n_sup: usize,
    pub n_finetune: usize,
    /// Buffer members sampled per meta step; 0 uses the whole buffer.
    pub meta_tasks: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub max_outer: usize,
    pub val_episodes: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            buffer_capacity: 32,
            n_pretrain: 300,
            n_meta: 20,
            n_int: 30,
            n_sup: 10,
            n_finetune: 100,
            meta_tasks: 0,
            patience: 5,
            min_delta: 0.005,
            max_outer: 40,
            val_episodes: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Pairs in the static population.
    pub population: usize,
    /// Self-play steps used to train each static-population pair.
    pub selfplay_steps: usize,
    /// Reinitialisation period for generational transmission.
    pub gen_period: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            population: 5,
            selfplay_steps: 300,
            gen_period: 5,
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub schedule: ScheduleConfig,
    pub baselines: BaselineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            schedule: ScheduleConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }

    /// The values used for the large-scale experiments.
    pub fn full_scale() -> Self {
        let mut c = Self::desk();
        c.model = ModelConfig {
            hidden: 512,
            embed: 256,
        };
        c.optim.outer_lr = 1e-4;
        c.optim.inner_lr = 1e-4;
        c.optim.lr = 1e-4;
        c.schedule.batch_size = 1024;
        c.schedule.buffer_capacity = 200;
        c.schedule.n_meta = 60;
        c.schedule.n_sup = 25;
        c.schedule.n_int = 80;
        c
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::for_world(&self.world.spec(), self.model.hidden, self.model.embed)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.loss;
        for (name, v) in [
            ("loss.lambda_hs", l.lambda_hs),
            ("loss.lambda_hl", l.lambda_hl),
            ("loss.lambda_s", l.lambda_s),
            ("loss.lambda_int", l.lambda_int),
            ("optim.inner_lr", self.optim.inner_lr),
            ("optim.clip_norm", self.optim.clip_norm),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("optim.lr", self.optim.lr), ("optim.outer_lr", self.optim.outer_lr)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let s = &self.schedule;
        for (name, v) in [
            ("schedule.batch_size", s.batch_size),
            ("schedule.buffer_capacity", s.buffer_capacity),
            ("schedule.max_outer", s.max_outer),
            ("schedule.patience", s.patience),
            ("schedule.val_episodes", s.val_episodes),
            ("world.dataset_size", self.world.dataset_size),
            ("model.hidden", self.model.hidden),
            ("model.embed", self.model.embed),
            ("baselines.population", self.baselines.population),
            ("baselines.gen_period", self.baselines.gen_period),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(s.min_delta >= 0.0) {
            return Err(Error::Config("schedule.min_delta must be >= 0".into()));
        }
        let spec = self.world.spec();
        spec.validate()?;
        if self.world.k + 1 > self.world.test_size.min(self.world.val_size).max(1) {
            return Err(Error::Config(format!(
                "world.k = {} needs test and validation splits of at least k + 1 objects",
                self.world.k
            )));
        }
        Ok(())
    }

    /// Short stable digest of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Every settable dotted key, for error messages and documentation.
    pub fn keys() -> Vec<String> {
        let value = toml::Value::try_from(Self::desk()).expect("config serialises");
        let mut out = Vec::new();
        collect_keys(&value, "", &mut out);
        out
    }

    /// Apply `section.key=value` overrides; the value is parsed as TOML,
    /// falling back to a bare string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        if !Self::keys().iter().any(|k| k == key || k.starts_with(&format!("{key}."))) {
            return Err(Error::Config(format!(
                "unknown key `{key}`; valid keys: {}",
                Self::keys().join(", ")
            )));
        }
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .map(|mut t| t.remove("v").expect("v"))
            .unwrap_or_else(|_| toml::Value::String(raw.trim().to_owned()));
        let mut root = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .get_mut(*p)
                .ok_or_else(|| Error::Config(format!("unknown section `{p}`")))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` is not inside a section")))?;
        table.insert(parts[parts.len() - 1].to_owned(), parsed);
        let c: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("bad value for `{key}`: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

fn collect_keys(v: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) if !prefix.is_empty() && t.contains_key("mode") => {
            out.push(prefix.to_owned())
        }
        toml::Value::Table(t) if !prefix.is_empty() && t.contains_key("kind") => {
            out.push(prefix.to_owned())
        }
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_keys(v, &key, out);
            }
        }
        _ => out.push(prefix.to_owned()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_values() {
        let c = TrainConfig::full_scale();
        assert_eq!(c.schedule.batch_size, 1024);
        assert_eq!(c.schedule.buffer_capacity, 200);
        assert_eq!((c.schedule.n_meta, c.schedule.n_sup, c.schedule.n_int), (60, 25, 80));
        assert_eq!((c.loss.lambda_hs, c.loss.lambda_hl, c.loss.lambda_s), (0.01, 0.03, 0.8));
        assert_eq!((c.optim.outer_lr, c.optim.inner_lr, c.loss.lambda_int), (1e-4, 1e-4, 0.1));
    }

    #[test]
    fn desk_values() {
        let c = TrainConfig::desk();
        assert_eq!(c.schedule.batch_size, 128);
        assert_eq!(c.schedule.buffer_capacity, 32);
        assert_eq!((c.schedule.n_meta, c.schedule.n_sup, c.schedule.n_int), (20, 10, 30));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::desk();
        let text = c.to_toml().unwrap();
        assert!(text.contains("[schedule]"));
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = TrainConfig::from_toml("seed = 4\n[loss]\nlambda_s = 0.5\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.loss.lambda_s, 0.5);
        assert_eq!(c.schedule, ScheduleConfig::default());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(TrainConfig::from_toml("[loss]\nlambda_q = 1.0\n").is_err());
        let e = TrainConfig::desk().with_override("loss.lambda_q=1").unwrap_err();
        assert!(e.to_string().contains("loss.lambda_s"));
    }

    #[test]
    fn overrides() {
        let c = TrainConfig::desk();
        let c = c.with_override("schedule.n_meta=3").unwrap();
        assert_eq!(c.schedule.n_meta, 3);
        let c = c.with_override("optim.meta_variant=reptile").unwrap();
        assert_eq!(c.optim.meta_variant, MetaVariant::Reptile);
        let c = c
            .with_override("world.distractors={ mode = \"hard\", threshold = 0.75 }")
            .unwrap();
        assert_eq!(c.world.distractors, DistractorMode::Hard { threshold: 0.75 });
        assert!(c.with_override("loss.lambda_s=-1").is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = TrainConfig::desk();
        let b = a.with_override("seed=9").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), TrainConfig::desk().hash());
    }
}
