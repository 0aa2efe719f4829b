use std::path::Path;

use super::{expert_action, DemoStore, PdGains};
use crate::envs::{EnvConfig, MazeEnv};
use crate::nncore::NdArray;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollectStats {
    pub episodes: usize,
    pub steps: usize,
    pub successes: usize,
}

impl CollectStats {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes.max(1) as f64
    }
}

/// Rolls out the scripted expert for `n_episodes`; episode `e` runs in
/// [`MazeEnv::for_episode`]`(cfg, base_seed, e)`. Every episode is kept,
/// successful or not.
pub fn collect(cfg: &EnvConfig, n_episodes: usize, base_seed: u64, gains: &PdGains) -> Result<(DemoStore, CollectStats)> {
    if n_episodes == 0 {
        return Err(Error::Config("at least one episode must be collected".into()));
    }
    cfg.validate()?;
    let (mut images, mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut ends = Vec::with_capacity(n_episodes);
    let mut seeds = Vec::with_capacity(n_episodes);
    let mut image_shape = None;
    let mut successes = 0;
    for e in 0..n_episodes as u64 {
        let mut env = MazeEnv::for_episode(cfg.clone(), base_seed, e)?;
        seeds.push(env.seed());
        let mut obs = env.observe()?;
        loop {
            if let Some(img) = &obs.image {
                image_shape = Some(img.shape().to_vec());
                images.extend_from_slice(img.data());
            }
            states.extend_from_slice(&obs.state);
            let a = expert_action(&env, gains)?;
            actions.extend(a.iter().map(|&v| v as f32));
            let out = env.step(&a)?;
            rewards.push(out.reward as f32);
            obs = out.observation;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
        ends.push(rewards.len() as i64);
    }
    let n = rewards.len();
    let images = match image_shape {
        Some(shape) => Some(NdArray::new([n, shape[0], shape[1], shape[2]], images)?),
        None => None,
    };
    let store = DemoStore {
        images,
        states: NdArray::new([n, cfg.state_dim()], states)?,
        actions: NdArray::new([n, cfg.action_dim()], actions)?,
        rewards: NdArray::new([n], rewards)?,
        episode_ends: ends,
        env_config: cfg.clone(),
        base_seed,
        episode_seeds: seeds,
    };
    store.validate()?;
    let stats = CollectStats {
        episodes: n_episodes,
        steps: n,
        successes,
    };
    Ok((store, stats))
}

/// [`collect`] followed by [`DemoStore::save`].
pub fn collect_to_dir(
    cfg: &EnvConfig,
    n_episodes: usize,
    base_seed: u64,
    gains: &PdGains,
    out_dir: impl AsRef<Path>,
    force: bool,
) -> Result<(DemoStore, CollectStats)> {
    let out_dir = out_dir.as_ref();
    if out_dir.exists() && std::fs::read_dir(out_dir)?.next().is_some() && !force {
        return Err(Error::Config(format!(
            "output directory {} exists and is not empty (use --force)",
            out_dir.display()
        )));
    }
    let (store, stats) = collect(cfg, n_episodes, base_seed, gains)?;
    store.save(out_dir, force)?;
    Ok((store, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvKind, MazeSpec};

    #[test]
    fn zero_episodes_rejected() {
        let cfg = EnvConfig::new(EnvKind::Grid, 5, 50);
        assert!(collect(&cfg, 0, 1, &PdGains::default()).is_err());
    }

    #[test]
    fn one_episode_layout() {
        let cfg = EnvConfig::new(EnvKind::Grid, 7, 100);
        // find a seed whose maze is solvable in exactly two moves
        let seed = (0..10_000u64)
            .find(|s| {
                let env = MazeEnv::new(cfg.clone(), *s).unwrap();
                let m: &MazeSpec = env.spec();
                crate::envs::bfs_path(m, m.start, m.goal).unwrap().len() == 3
            })
            .unwrap();
        let (store, stats) = collect(&cfg, 1, seed, &PdGains::default()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.episode_ends, vec![2]);
        assert_eq!(stats.successes, 1);
        assert_eq!(store.rewards.data(), &[-0.01, 10.0]);
    }

    #[test]
    fn images_recorded_when_rendering() {
        let mut cfg = EnvConfig::new(EnvKind::Point, 5, 200);
        cfg.resolution = Some(10);
        let (store, stats) = collect(&cfg, 2, 3, &PdGains::default()).unwrap();
        assert_eq!(stats.successes, 2);
        assert_eq!(store.images.as_ref().unwrap().shape()[1..], [10, 10, 3]);
    }
}
