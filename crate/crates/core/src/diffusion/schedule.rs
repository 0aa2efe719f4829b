use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Cosine schedule offset.
const COSINE_OFFSET: f64 = 0.008;
/// Upper clip for cosine betas.
const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    /// Squared-cosine ᾱ curve; ignores the beta endpoints.
    Cosine,
}

/// Everything needed to rebuild a [`NoiseSchedule`]. Tables are always
/// recomputed from this, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleDescriptor {
    fn default() -> Self {
        ScheduleDescriptor {
            kind: ScheduleKind::Linear,
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleDescriptor {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("schedule steps must be ≥ 1".to_string());
        }
        if self.kind == ScheduleKind::Linear
            && !(0.0 < self.beta_start && self.beta_start <= self.beta_end && self.beta_end < 1.0)
        {
            v.push(format!(
                "linear schedule needs 0 < beta_start ≤ beta_end < 1, got {} and {}",
                self.beta_start, self.beta_end
            ));
        }
        v
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.kind, self.beta_start, self.beta_end)
    }
}

/// Per-step β, α = 1 − β and ᾱ = Π α tables, indexed `0..K`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    descriptor: Option<ScheduleDescriptor>,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(
    steps: usize,
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule> {
    let descriptor = ScheduleDescriptor {
        kind,
        steps,
        beta_start,
        beta_end,
    };
    let v = descriptor.violations();
    if !v.is_empty() {
        return Err(Error::Config(v.join("; ")));
    }
    let betas = match kind {
        ScheduleKind::Linear => {
            if steps == 1 {
                vec![beta_start]
            } else {
                (0..steps)
                    .map(|k| {
                        beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64
                    })
                    .collect()
            }
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (0..steps)
                .map(|k| (1.0 - f(k as f64 + 1.0) / f(k as f64)).min(COSINE_MAX_BETA))
                .collect()
        }
    };
    let mut sched = NoiseSchedule::from_betas(betas)?;
    sched.descriptor = Some(descriptor);
    Ok(sched)
}

impl NoiseSchedule {
    /// Schedule from explicit betas, each in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            descriptor: None,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// Number of diffusion steps K.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `None` for schedules built from explicit betas.
    pub fn descriptor(&self) -> Option<&ScheduleDescriptor> {
        self.descriptor.as_ref()
    }

    pub(crate) fn check_step(&self, k: usize) -> Result<()> {
        if k >= self.steps() {
            return Err(Error::Index {
                what: "diffusion step",
                index: k,
                len: self.steps(),
            });
        }
        Ok(())
    }
}
