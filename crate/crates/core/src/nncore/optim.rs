use serde::{Deserialize, Serialize};

use super::{ParamStore, Scalar};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup to the base rate, then cosine decay to zero at
    /// `total_steps`.
    CosineWithWarmup { warmup_steps: u64, total_steps: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-4,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-6,
            lr_schedule: LrSchedule::CosineWithWarmup {
                warmup_steps: 500,
                total_steps: 10_000,
            },
        }
    }
}

impl OptimConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("betas.0", self.betas.0), ("betas.1", self.betas.1)] {
            if !(0.0..1.0).contains(&b) {
                v.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            v.push(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let LrSchedule::CosineWithWarmup {
            warmup_steps,
            total_steps,
        } = self.lr_schedule
        {
            if warmup_steps > total_steps {
                v.push(format!(
                    "warmup_steps ({warmup_steps}) must not exceed total_steps ({total_steps})"
                ));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// Learning rate for the update that follows `completed` finished steps.
    pub fn lr_at(&self, completed: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::CosineWithWarmup {
                warmup_steps,
                total_steps,
            } => {
                if completed < warmup_steps {
                    return self.learning_rate * (completed + 1) as f64 / warmup_steps as f64;
                }
                let span = total_steps.saturating_sub(warmup_steps);
                let progress = if span == 0 {
                    1.0
                } else {
                    ((completed - warmup_steps) as f64 / span as f64).min(1.0)
                };
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// One AdamW update over every parameter.
///
/// Decay is decoupled and applied first, `value ← value·(1 − lr·wd)`, then
/// the bias-corrected Adam step. Gradients are left untouched.
pub fn adamw_step<F: Scalar>(params: &mut ParamStore<F>, cfg: &OptimConfig) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::State(format!("parameter `{name}` has no gradient")));
    }
    let completed = params.step_count();
    let t = (completed + 1) as i32;
    let lr = cfg.lr_at(completed);
    let (b1, b2) = cfg.betas;
    let bc1 = F::of(1.0 - b1.powi(t));
    let bc2 = F::of(1.0 - b2.powi(t));
    let decay = F::of(1.0 - lr * cfg.weight_decay);
    let (lr, b1, b2, eps) = (F::of(lr), F::of(b1), F::of(b2), F::of(cfg.eps));
    let (one, tiny) = (F::one(), F::min_positive_value());
    // below the smallest normal, moments flush to zero
    let flush = |x: F| if x.abs() < tiny { F::zero() } else { x };
    for (_, p) in params.iter_mut() {
        let grad = p.grad.as_ref().expect("checked above");
        let value = p.value.data_mut();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        for i in 0..value.len() {
            let g = grad.data()[i];
            m[i] = flush(b1 * m[i] + (one - b1) * g);
            v[i] = flush(b2 * v[i] + (one - b2) * g * g);
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] = value[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.set_step_count(completed + 1);
    Ok(())
}
