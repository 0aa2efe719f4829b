use std::collections::VecDeque;

use super::{HorizonConfig, ObsBatch, PolicyBundle};
use crate::data::{expert_action, PdGains};
use crate::envs::{EnvConfig, MazeEnv, Observation, ReplayRecord};
use crate::nncore::NdArray;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

/// The most recent `T_o` observations of one episode.
#[derive(Clone, Debug)]
pub struct ObsHistory {
    capacity: usize,
    frames: VecDeque<Observation>,
}

impl ObsHistory {
    pub fn new(capacity: usize) -> Self {
        ObsHistory {
            capacity: capacity.max(1),
            frames: VecDeque::new(),
        }
    }

    pub fn push(&mut self, obs: Observation) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Oldest first, left-padded with the oldest held observation.
    pub fn window(&self) -> Result<Vec<&Observation>> {
        let oldest = self
            .frames
            .front()
            .ok_or_else(|| Error::State("cannot plan from an empty observation history".into()))?;
        let pad = self.capacity - self.frames.len();
        Ok(std::iter::repeat_n(oldest, pad).chain(self.frames.iter()).collect())
    }
}

/// Stacks histories into an encoder batch.
pub fn history_batch(histories: &[&ObsHistory], images: bool, states: bool) -> Result<ObsBatch<f32>> {
    let windows = histories.iter().map(|h| h.window()).collect::<Result<Vec<_>>>()?;
    let b = windows.len();
    let t = windows.first().map_or(0, |w| w.len());
    let image_batch = if images {
        let mut data = Vec::new();
        let mut hw = None;
        for obs in windows.iter().flatten() {
            let img = obs
                .image
                .as_ref()
                .ok_or_else(|| Error::Config("the encoder needs images but the environment renders none".into()))?;
            hw = Some([img.shape()[0], img.shape()[1]]);
            data.extend_from_slice(img.data());
        }
        let [h, w] = hw.unwrap_or([0, 0]);
        Some(NdArray::new([b, t, h, w, 3], data)?)
    } else {
        None
    };
    let state_batch = if states {
        let s = windows.first().and_then(|w| w.first()).map_or(0, |o| o.state.len());
        let data = windows.iter().flatten().flat_map(|o| o.state.iter().copied()).collect();
        Some(NdArray::new([b, t, s], data)?)
    } else {
        None
    };
    Ok(ObsBatch {
        images: image_batch,
        states: state_batch,
    })
}

/// Produces denormalized `[T_p, A]` action sequences for a set of episodes.
pub trait Planner {
    fn plan(&self, envs: &[&MazeEnv], histories: &[&ObsHistory], rngs: &mut [Rng]) -> Result<Vec<NdArray<f32>>>;
}

/// Samples plans from a trained policy.
pub struct DiffusionPlanner<'a> {
    pub bundle: &'a PolicyBundle,
}

impl Planner for DiffusionPlanner<'_> {
    fn plan(&self, _envs: &[&MazeEnv], histories: &[&ObsHistory], rngs: &mut [Rng]) -> Result<Vec<NdArray<f32>>> {
        let b = self.bundle;
        let mode = b.model.config().encoder.mode;
        let obs = history_batch(histories, mode.uses_images(), mode.uses_states())?;
        let x = b.model.sample(&b.params, &obs, &b.schedule, rngs)?;
        let [pred, act] = [b.model.horizons().pred, b.model.shape().action_dim];
        let x = b.normalizer.denormalize(&x.reshape([histories.len() * pred, act])?)?;
        x.data()
            .chunks_exact(pred * act)
            .map(|c| NdArray::new([pred, act], c.to_vec()))
            .collect()
    }
}

/// Plans by simulating the scripted expert on a copy of each environment.
pub struct ExpertPlanner {
    pub gains: PdGains,
    pub pred_horizon: usize,
}

impl Planner for ExpertPlanner {
    fn plan(&self, envs: &[&MazeEnv], _histories: &[&ObsHistory], _rngs: &mut [Rng]) -> Result<Vec<NdArray<f32>>> {
        envs.iter()
            .map(|env| {
                let mut sim = (*env).clone();
                let dim = env.config().action_dim();
                let mut data: Vec<f32> = Vec::with_capacity(self.pred_horizon * dim);
                for _ in 0..self.pred_horizon {
                    if sim.is_done() {
                        let last = data[data.len() - dim..].to_vec();
                        data.extend(last);
                        continue;
                    }
                    let a = expert_action(&sim, &self.gains)?;
                    data.extend(a.iter().map(|&v| v as f32));
                    sim.step(&a)?;
                }
                NdArray::new([self.pred_horizon, dim], data)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub total_reward: f64,
    pub steps: usize,
    pub success: bool,
    pub replan_count: usize,
    pub records: Vec<ReplayRecord>,
}

/// Receding-horizon control of several episodes in lockstep: every active
/// episode plans `T_p` actions, executes the first `T_a` (fewer if it ends),
/// records the new observations and replans. Episodes that neither succeed
/// nor end within `max_steps` count as failures. Plans for the active
/// episodes are sampled as one batch, each row drawing from its own
/// generator in `rngs`.
pub fn run_closed_loop_batch(
    planner: &dyn Planner,
    envs: &mut [MazeEnv],
    horizons: &HorizonConfig,
    max_steps: usize,
    rngs: &mut [Rng],
) -> Result<Vec<EpisodeResult>> {
    horizons.validate()?;
    if envs.len() != rngs.len() {
        return Err(Error::dim(
            "run_closed_loop",
            format!("{} environments but {} generators", envs.len(), rngs.len()),
        ));
    }
    let mut histories: Vec<ObsHistory> = Vec::with_capacity(envs.len());
    let mut results = Vec::with_capacity(envs.len());
    for env in envs.iter() {
        let mut h = ObsHistory::new(horizons.obs);
        h.push(env.observe()?);
        histories.push(h);
        results.push(EpisodeResult {
            total_reward: 0.0,
            steps: 0,
            success: false,
            replan_count: 0,
            records: Vec::new(),
        });
    }
    let mut active: Vec<bool> = envs.iter().map(|e| !e.is_done() && max_steps > 0).collect();
    loop {
        let idx: Vec<usize> = (0..envs.len()).filter(|&i| active[i]).collect();
        if idx.is_empty() {
            break;
        }
        let mut sub_rngs: Vec<Rng> = idx.iter().map(|&i| std::mem::replace(&mut rngs[i], rng_from_seed(0))).collect();
        let plans = {
            let env_refs: Vec<&MazeEnv> = idx.iter().map(|&i| &envs[i]).collect();
            let hist_refs: Vec<&ObsHistory> = idx.iter().map(|&i| &histories[i]).collect();
            planner.plan(&env_refs, &hist_refs, &mut sub_rngs)?
        };
        for (&i, r) in idx.iter().zip(sub_rngs) {
            rngs[i] = r;
        }
        if plans.len() != idx.len() {
            return Err(Error::Internal("planner returned the wrong number of plans".into()));
        }
        for (&i, plan) in idx.iter().zip(&plans) {
            let res = &mut results[i];
            res.replan_count += 1;
            for a in plan.data().chunks_exact(plan.row_len()).take(horizons.action) {
                let action: Vec<f64> = a.iter().map(|&v| v as f64).collect();
                let env = &mut envs[i];
                let state = env.state_vector();
                let t = env.t();
                let out = env.step(&action)?;
                res.records.push(ReplayRecord {
                    episode: env.episode(),
                    t,
                    state,
                    action: action.clone(),
                    reward: out.reward,
                    done: out.done,
                });
                res.total_reward += out.reward;
                res.steps += 1;
                histories[i].push(out.observation);
                if out.done || res.steps >= max_steps {
                    res.success = out.success;
                    active[i] = false;
                    break;
                }
            }
        }
    }
    Ok(results)
}

/// Single-episode [`run_closed_loop_batch`].
pub fn run_closed_loop(
    planner: &dyn Planner,
    env: &mut MazeEnv,
    horizons: &HorizonConfig,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<EpisodeResult> {
    let mut out = run_closed_loop_batch(
        planner,
        std::slice::from_mut(env),
        horizons,
        max_steps,
        std::slice::from_mut(rng),
    )?;
    Ok(out.pop().expect("one episode in, one result out"))
}

/// Runs episode `e` of `0..n` in [`MazeEnv::for_episode`]`(cfg, base_seed, e)`
/// with sampling generator `rng_from_seed(base_seed ^ e)`, in lockstep
/// groups of at most `group`.
pub fn evaluate(
    planner: &dyn Planner,
    cfg: &EnvConfig,
    base_seed: u64,
    n: usize,
    horizons: &HorizonConfig,
    max_steps: usize,
    group: usize,
) -> Result<Vec<EpisodeResult>> {
    let mut results = Vec::with_capacity(n);
    let ids: Vec<u64> = (0..n as u64).collect();
    for chunk in ids.chunks(group.max(1)) {
        let mut envs = chunk
            .iter()
            .map(|&e| MazeEnv::for_episode(cfg.clone(), base_seed, e))
            .collect::<Result<Vec<_>>>()?;
        let mut rngs: Vec<Rng> = chunk.iter().map(|&e| rng_from_seed(base_seed ^ e)).collect();
        results.extend(run_closed_loop_batch(planner, &mut envs, horizons, max_steps, &mut rngs)?);
    }
    Ok(results)
}
