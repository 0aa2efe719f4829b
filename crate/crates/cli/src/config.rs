//! Experiment configuration files (TOML).

use std::path::Path;

use dpolicy_core::data::AugmentConfig;
use dpolicy_core::envs::{DriftMode, EnvConfig, EnvKind};
use dpolicy_core::nncore::{LrSchedule, OptimConfig};
use dpolicy_core::policy::{ModelConfig, ModelShape, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Seeds at or above this value are reserved for evaluation.
pub const EVAL_SEED_FLOOR: u64 = 1 << 31;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    /// Maze width and height in cells.
    pub size: usize,
    #[serde(default = "drift_none")]
    pub drift: DriftMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default)]
    pub resolution: Option<usize>,
    pub max_steps: usize,
}

fn drift_none() -> DriftMode {
    DriftMode::None
}
fn default_dt() -> f64 {
    0.1
}
fn default_friction() -> f64 {
    0.05
}
fn default_goal_radius() -> f64 {
    0.4
}

impl EnvSection {
    pub fn env_config(&self) -> EnvConfig {
        let mut c = EnvConfig::new(self.kind, self.size, self.max_steps);
        c.drift = self.drift;
        c.dt = self.dt;
        c.friction = self.friction;
        c.goal_radius = self.goal_radius;
        c.resolution = self.resolution;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_betas")]
    pub betas: (f64, f64),
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_schedule")]
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub train_steps: u64,
    pub ema_decay: f64,
    /// Steps between metrics rows (each with a closed-loop evaluation).
    pub eval_period: u64,
    /// Seed for weight initialization and window sampling.
    #[serde(default)]
    pub seed: u64,
}

fn d_lr() -> f64 {
    OptimConfig::default().learning_rate
}
fn d_betas() -> (f64, f64) {
    OptimConfig::default().betas
}
fn d_eps() -> f64 {
    OptimConfig::default().eps
}
fn d_wd() -> f64 {
    OptimConfig::default().weight_decay
}
fn d_schedule() -> LrSchedule {
    OptimConfig::default().lr_schedule
}

impl OptimSection {
    pub fn optimizer(&self) -> OptimConfig {
        OptimConfig {
            learning_rate: self.learning_rate,
            betas: self.betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
            lr_schedule: self.lr_schedule.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Episodes per periodic evaluation during training; 0 disables it.
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default = "default_eval_seed")]
    pub seed: u64,
    /// Step cap of one evaluation episode; defaults to the env's.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Episodes planned together in one sampling batch.
    #[serde(default = "default_group")]
    pub group: usize,
}

fn default_eval_episodes() -> usize {
    10
}
fn default_eval_seed() -> u64 {
    EVAL_SEED_FLOOR
}
fn default_group() -> usize {
    50
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: default_eval_episodes(),
            seed: default_eval_seed(),
            max_steps: None,
            group: default_group(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub data: DataSection,
    pub model: ModelConfig,
    pub optim: OptimSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Validation(vec![format!("config: {}", e.message().trim())]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn env_config(&self) -> EnvConfig {
        self.env.env_config()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.optim.batch_size,
            steps: self.optim.train_steps,
            optim: self.optim.optimizer(),
            ema_decay: self.optim.ema_decay,
            augment: self.data.augment,
        }
    }

    pub fn model_shape(&self) -> ModelShape {
        let env = self.env_config();
        ModelShape {
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
            image_hw: env.resolution.map(|r| [r, r]),
        }
    }

    pub fn eval_max_steps(&self) -> usize {
        self.eval.max_steps.unwrap_or(self.env.max_steps)
    }

    /// Every violated constraint across all sections, prefixed by section.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut add = |section: &str, items: Vec<String>| v.extend(items.into_iter().map(|m| format!("{section}: {m}")));
        add("env", self.env_config().violations());
        let mut data = Vec::new();
        if self.data.episodes == 0 {
            data.push("episodes must be ≥ 1".to_string());
        }
        if self.data.seed >= EVAL_SEED_FLOOR {
            data.push(format!("seed must be below 2^31 (evaluation seeds start there), got {}", self.data.seed));
        }
        if let Some(r) = self.env.resolution {
            if self.data.augment.shift_max >= r {
                data.push(format!("augment.shift_max {} must be below the render width {r}", self.data.augment.shift_max));
            }
        }
        add("data", data);
        let mut model = self.model.violations();
        if self.model.encoder.mode.uses_images() && self.env.resolution.is_none() {
            model.push(format!("{:?} encoder needs env.resolution to be set", self.model.encoder.mode));
        }
        add("model", model);
        let mut optim = self.train_config().violations();
        if self.optim.eval_period == 0 {
            optim.push("eval_period must be ≥ 1".into());
        }
        add("optim", optim);
        let mut eval = Vec::new();
        if self.eval.seed < EVAL_SEED_FLOOR {
            eval.push(format!("seed must be at least 2^31 = {EVAL_SEED_FLOOR}, got {}", self.eval.seed));
        }
        if self.eval.group == 0 {
            eval.push("group must be ≥ 1".into());
        }
        if self.eval.max_steps == Some(0) {
            eval.push("max_steps must be ≥ 1".into());
        }
        add("eval", eval);
        v
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[env]
kind = "grid"
size = 5
max_steps = 40

[data]
episodes = 4
seed = 3

[model.encoder]
mode = "state"
embed_dim = 16
state_hidden = 16

[model.denoiser]
arch = "film_mlp"
hidden = [32, 32]

[model.schedule]
kind = "cosine"
steps = 10
beta_start = 0.0001
beta_end = 0.02

[optim]
learning_rate = 0.001
batch_size = 8
train_steps = 20
ema_decay = 0.9
eval_period = 10

[optim.lr_schedule]
kind = "constant"
"#;

    #[test]
    fn sample_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.model.horizons.pred, 8);
        assert_eq!(cfg.eval.seed, EVAL_SEED_FLOOR);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn every_violation_is_listed() {
        let text = SAMPLE
            .replace("episodes = 4", "episodes = 0")
            .replace("ema_decay = 0.9", "ema_decay = 1.5")
            .replace("max_steps = 40", "max_steps = 40\ndrift = { kind = \"goal_shift\", period = 0 }");
        let Err(CliError::Validation(v)) = ExperimentConfig::from_toml(&text) else {
            panic!("expected a validation error");
        };
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(v.iter().any(|m| m.contains("period")));
    }

    #[test]
    fn malformed_input_is_a_validation_error() {
        for text in ["", "[env]\nkind = 3", "not toml at all ===", &SAMPLE.replace("size = 5", "size = -5")] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(CliError::Validation(_))));
        }
        let unknown = SAMPLE.replace("[data]", "[data]\ncolour = 1");
        let Err(CliError::Validation(v)) = ExperimentConfig::from_toml(&unknown) else { panic!() };
        assert!(v[0].contains("colour"), "{v:?}");
    }

    #[test]
    fn eval_seeds_must_be_disjoint_from_training() {
        let text = format!("{SAMPLE}\n[eval]\nseed = 5\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(CliError::Validation(_))));
    }
}
