use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Observation, prediction and execution horizons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub obs: usize,
    pub pred: usize,
    pub action: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig {
            obs: 2,
            pred: 8,
            action: 1,
        }
    }
}

impl HorizonConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.obs == 0 {
            v.push("observation horizon must be ≥ 1".into());
        }
        if self.pred == 0 {
            v.push("prediction horizon must be ≥ 1".into());
        }
        if self.action == 0 || self.action > self.pred {
            v.push(format!(
                "action horizon must lie in 1..={}, got {}",
                self.pred, self.action
            ));
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
}
