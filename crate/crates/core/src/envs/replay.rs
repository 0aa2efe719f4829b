use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EnvConfig, MazeEnv};
use crate::{Error, Result};

/// One JSON line of a replay log; `state` is the state vector after the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub episode: u64,
    pub t: usize,
    pub state: Vec<f32>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub fn write_replay(w: &mut impl Write, records: &[ReplayRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_replay(r: impl BufRead) -> Result<Vec<ReplayRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            what: "replay log",
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Re-executes logged actions in fresh environments (episode `e` uses
/// [`MazeEnv::for_episode`]) and returns the index of the first record
/// whose state, reward or done flag differs, or `None` on an exact match.
pub fn replay_mismatch(cfg: &EnvConfig, base_seed: u64, records: &[ReplayRecord]) -> Result<Option<usize>> {
    let mut env: Option<MazeEnv> = None;
    for (i, r) in records.iter().enumerate() {
        let fresh = env.as_ref().is_none_or(|e| e.seed() != base_seed ^ r.episode);
        if fresh {
            env = Some(MazeEnv::for_episode(cfg.clone(), base_seed, r.episode)?);
        }
        let e = env.as_mut().expect("environment initialised above");
        if e.t() + 1 != r.t {
            return Ok(Some(i));
        }
        let out = e.step(&r.action)?;
        if out.observation.state != r.state || out.reward != r.reward || out.done != r.done {
            return Ok(Some(i));
        }
    }
    Ok(None)
}
