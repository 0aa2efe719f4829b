//! One function per subcommand.

mod plot;

pub use plot::{cmd_plot, render_svg};

use std::path::Path;
use std::time::Instant;

use dpolicy_core::data::{collect_to_dir, DemoStore, PdGains};
use dpolicy_core::envs::{EnvConfig, MazeEnv};
use dpolicy_core::nncore::Checkpoint;
use dpolicy_core::policy::{
    evaluate, fit_action_normalizer, DiffusionPlanner, EpisodeResult, ExpertPlanner, HorizonConfig,
    Planner, PolicyBundle, Trainer,
};
use dpolicy_core::rng::rng_from_seed;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::metrics::{write_rows, MetricsRow};
use crate::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.dpck";
pub const EMA_CHECKPOINT_FILE: &str = "checkpoint_ema.dpck";
/// Mixed into the training seed for the window-sampling stream.
const SAMPLER_SALT: u64 = 0x005e_ed0f_da7a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenDataSummary {
    pub episodes: usize,
    pub steps: usize,
    pub expert_success_rate: f64,
}

pub fn cmd_gen_data(config: &Path, out: &Path, force: bool) -> CliResult<GenDataSummary> {
    let cfg = ExperimentConfig::load(config)?;
    let env = cfg.env_config();
    let (_, stats) = collect_to_dir(&env, cfg.data.episodes, cfg.data.seed, &PdGains::default(), out, force)?;
    let summary = GenDataSummary {
        episodes: stats.episodes,
        steps: stats.steps,
        expert_success_rate: stats.success_rate(),
    };
    println!(
        "collected {} episodes, N = {} steps, expert success rate {:.3} -> {}",
        summary.episodes,
        summary.steps,
        summary.expert_success_rate,
        out.display()
    );
    Ok(summary)
}

/// Aggregate statistics of an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_reward: f64,
    pub max_reward: f64,
    /// Population standard deviation over episodes.
    pub reward_std: f64,
    pub mean_steps: f64,
}

impl EvalReport {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let n = results.len().max(1) as f64;
        let rewards: Vec<f64> = results.iter().map(|r| r.total_reward).collect();
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalReport {
            episodes: results.len(),
            success_rate: results.iter().filter(|r| r.success).count() as f64 / n,
            mean_reward: mean,
            max_reward: rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            reward_std: var.sqrt(),
            mean_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        }
    }
}

fn check_compatible(bundle: &PolicyBundle, env: &EnvConfig) -> CliResult<()> {
    let shape = bundle.model.shape();
    if shape.action_dim != env.action_dim() || shape.state_dim != env.state_dim() {
        return Err(CliError::validation(format!(
            "checkpoint acts in {} dimensions over {}-dimensional states, the {:?} environment needs {} and {}",
            shape.action_dim,
            shape.state_dim,
            env.kind,
            env.action_dim(),
            env.state_dim()
        )));
    }
    let mode = bundle.model.config().encoder.mode;
    if mode.uses_images() && env.resolution.map(|r| [r, r]) != shape.image_hw {
        return Err(CliError::validation(format!(
            "checkpoint expects {:?} images, the environment renders {:?}",
            shape.image_hw, env.resolution
        )));
    }
    Ok(())
}

/// Closed-loop evaluation of `bundle` (or of the scripted expert when
/// `bundle` is `None`) on episodes `seed ⊕ i`, `i < n`.
pub fn evaluate_policy(
    bundle: Option<&PolicyBundle>,
    env: &EnvConfig,
    horizons: &HorizonConfig,
    n: usize,
    seed: u64,
    max_steps: usize,
    group: usize,
) -> CliResult<Vec<EpisodeResult>> {
    let expert;
    let diffusion;
    let planner: &dyn Planner = match bundle {
        Some(b) => {
            check_compatible(b, env)?;
            diffusion = DiffusionPlanner { bundle: b };
            &diffusion
        }
        None => {
            expert = ExpertPlanner {
                gains: PdGains::default(),
                pred_horizon: horizons.pred,
            };
            &expert
        }
    };
    Ok(evaluate(planner, env, seed, n, horizons, max_steps, group)?)
}

pub struct EvalOptions<'a> {
    pub checkpoint: Option<&'a Path>,
    pub config: &'a Path,
    pub episodes: usize,
    pub seed: u64,
    /// Per-episode CSV destination.
    pub csv: Option<&'a Path>,
}

pub fn cmd_eval(opts: &EvalOptions) -> CliResult<EvalReport> {
    let cfg = ExperimentConfig::load(opts.config)?;
    if opts.episodes == 0 {
        return Err(CliError::validation("--episodes must be ≥ 1"));
    }
    let env = cfg.env_config();
    let bundle = opts.checkpoint.map(PolicyBundle::load).transpose()?;
    let horizons = bundle.as_ref().map_or(cfg.model.horizons, |b| b.model.horizons());
    let results = evaluate_policy(
        bundle.as_ref(),
        &env,
        &horizons,
        opts.episodes,
        opts.seed,
        cfg.eval_max_steps(),
        cfg.eval.group,
    )?;
    if let Some(path) = opts.csv {
        write_episode_csv(path, &results, opts.seed)?;
    }
    let report = EvalReport::from_results(&results);
    println!(
        "{} episodes: success rate {:.3}, reward mean {:.3} max {:.3} std {:.3}, mean steps {:.1}",
        report.episodes, report.success_rate, report.mean_reward, report.max_reward, report.reward_std, report.mean_steps
    );
    Ok(report)
}

fn write_episode_csv(path: &Path, results: &[EpisodeResult], seed: u64) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e.to_string()));
    w.write_record(["episode", "maze_seed", "total_reward", "steps", "success", "replan_count"])
        .map_err(io)?;
    for (i, r) in results.iter().enumerate() {
        w.write_record([
            i.to_string(),
            (seed ^ i as u64).to_string(),
            r.total_reward.to_string(),
            r.steps.to_string(),
            r.success.to_string(),
            r.replan_count.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub struct TrainOptions<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub out: &'a Path,
    pub resume: Option<&'a Path>,
}

/// Trains on a demonstration store, appending a metrics row (with an EMA
/// evaluation when enabled) every `eval_period` steps and after the last
/// step. Resuming continues the step count, optimizer moments, EMA and
/// sampling stream of the checkpoint.
pub fn cmd_train(opts: &TrainOptions) -> CliResult<Vec<MetricsRow>> {
    let started = Instant::now();
    let cfg = ExperimentConfig::load(opts.config)?;
    let store = DemoStore::open(opts.data)?;
    let env = cfg.env_config();
    if store.env_config.kind != env.kind {
        return Err(CliError::validation(format!(
            "data was collected in a {:?} maze but the config trains for {:?}",
            store.env_config.kind, env.kind
        )));
    }
    let tcfg = cfg.train_config();
    let mut trainer = match opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let t = Trainer::resume(&ck, tcfg)?;
            if t.bundle.model.config() != &cfg.model {
                log::warn!("resuming with the checkpoint's model configuration, which differs from the config file");
            }
            t
        }
        None => {
            let norm = fit_action_normalizer(&store, &tcfg.augment)?;
            let mut rng = rng_from_seed(cfg.optim.seed);
            let bundle = PolicyBundle::init(&cfg.model, cfg.model_shape(), norm, &mut rng)?;
            Trainer::new(bundle, tcfg, cfg.optim.seed ^ SAMPLER_SALT)?
        }
    };
    trainer.check_store(&store)?;
    check_compatible(&trainer.bundle, &env)?;
    std::fs::create_dir_all(opts.out)?;
    let metrics_path = opts.out.join(METRICS_FILE);
    let mut append = opts.resume.is_some() && metrics_path.exists();

    let start = trainer.step_count();
    let end = start + cfg.optim.train_steps;
    let mut rows = Vec::new();
    let (mut acc, mut count) = (0.0, 0u64);
    for step in start + 1..=end {
        acc += trainer.step(&store)?;
        count += 1;
        if (step - start) % cfg.optim.eval_period != 0 && step != end {
            continue;
        }
        let (mut sr, mut mean, mut std) = (None, None, None);
        if cfg.eval.episodes > 0 {
            let ema = trainer.ema_bundle()?;
            let results = evaluate_policy(
                Some(&ema),
                &env,
                &ema.model.horizons(),
                cfg.eval.episodes,
                cfg.eval.seed,
                cfg.eval_max_steps(),
                cfg.eval.group,
            )?;
            let r = EvalReport::from_results(&results);
            (sr, mean, std) = (Some(r.success_rate), Some(r.mean_reward), Some(r.reward_std));
        }
        let row = MetricsRow {
            step,
            train_loss: acc / count as f64,
            eval_success_rate: sr,
            eval_mean_reward: mean,
            eval_reward_std: std,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        log::info!("step {step}: loss {:.5} eval success {:?}", row.train_loss, row.eval_success_rate);
        write_rows(&metrics_path, std::slice::from_ref(&row), append)?;
        append = true;
        rows.push(row);
        (acc, count) = (0.0, 0);
    }
    let extra = serde_json::json!({ "config": cfg.to_toml() });
    trainer.checkpoint(extra.clone())?.save(opts.out.join(CHECKPOINT_FILE))?;
    trainer.ema_bundle()?.save(opts.out.join(EMA_CHECKPOINT_FILE), extra)?;
    println!(
        "trained steps {}..={end}, final loss {:.5} -> {}",
        start + 1,
        rows.last().map_or(f64::NAN, |r| r.train_loss),
        opts.out.display()
    );
    Ok(rows)
}

/// First environment of an evaluation sequence; handy for inspection.
pub fn eval_env(cfg: &ExperimentConfig, episode: u64) -> CliResult<MazeEnv> {
    Ok(MazeEnv::for_episode(cfg.env_config(), cfg.eval.seed, episode)?)
}
