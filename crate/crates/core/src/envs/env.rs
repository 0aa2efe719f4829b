use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    generate_maze, grid_step, point_step, reachable_from, render, Cell, GridState, Marker,
    MazeSpec, Move, Overlay, PointMassState, PointParams, Transition,
};
use crate::nncore::NdArray;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

/// Mixed into the episode seed for the goal-shift generator.
const DRIFT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Radius of the agent disk in the continuous maze, cell units.
pub const AGENT_RADIUS: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Grid,
    Point,
}

impl EnvKind {
    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::Grid => 4,
            EnvKind::Point => 2,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::Grid => 4,
            EnvKind::Point => 6,
        }
    }

    /// Mirrors a state vector under a horizontal flip of the maze.
    pub fn flip_state(self, s: &mut [f32]) {
        match self {
            EnvKind::Grid => {
                s[0] = 1.0 - s[0];
                s[2] = 1.0 - s[2];
            }
            EnvKind::Point => {
                s[0] = 1.0 - s[0];
                s[2] = -s[2];
                s[4] = 1.0 - s[4];
            }
        }
    }

    /// Mirrors an action under a horizontal flip of the maze.
    pub fn flip_action(self, a: &mut [f32]) {
        match self {
            EnvKind::Grid => a.swap(Move::Left.index(), Move::Right.index()),
            EnvKind::Point => a[0] = -a[0],
        }
    }

    /// Mirrors a state vector under a vertical flip of the maze.
    pub fn vflip_state(self, s: &mut [f32]) {
        match self {
            EnvKind::Grid => {
                s[1] = 1.0 - s[1];
                s[3] = 1.0 - s[3];
            }
            EnvKind::Point => {
                s[1] = 1.0 - s[1];
                s[3] = -s[3];
                s[5] = 1.0 - s[5];
            }
        }
    }

    /// Mirrors an action under a vertical flip of the maze.
    pub fn vflip_action(self, a: &mut [f32]) {
        match self {
            EnvKind::Grid => a.swap(Move::Up.index(), Move::Down.index()),
            EnvKind::Point => a[1] = -a[1],
        }
    }

    /// Reflects a state vector about the main diagonal of a square maze.
    pub fn transpose_state(self, s: &mut [f32]) {
        for pair in s.chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
    }

    /// Reflects an action about the main diagonal.
    pub fn transpose_action(self, a: &mut [f32]) {
        match self {
            EnvKind::Grid => {
                a.swap(Move::Up.index(), Move::Left.index());
                a.swap(Move::Down.index(), Move::Right.index());
            }
            EnvKind::Point => a.swap(0, 1),
        }
    }
}

/// How the maze changes over time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftMode {
    None,
    /// A new maze from `seed ⊕ episode` on every reset.
    Regenerate,
    /// Every `period` steps the goal jumps to another reachable open cell.
    GoalShift { period: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_drift")]
    pub drift: DriftMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    /// Square render size; `None` means state observations only.
    #[serde(default)]
    pub resolution: Option<usize>,
    pub max_steps: usize,
}

fn default_drift() -> DriftMode {
    DriftMode::None
}
fn default_dt() -> f64 {
    PointParams::default().dt
}
fn default_friction() -> f64 {
    PointParams::default().friction
}
fn default_goal_radius() -> f64 {
    PointParams::default().goal_radius
}

impl EnvConfig {
    pub fn new(kind: EnvKind, size: usize, max_steps: usize) -> Self {
        EnvConfig {
            kind,
            width: size,
            height: size,
            drift: DriftMode::None,
            dt: default_dt(),
            friction: default_friction(),
            goal_radius: default_goal_radius(),
            resolution: None,
            max_steps,
        }
    }

    pub fn point_params(&self) -> PointParams {
        PointParams {
            dt: self.dt,
            friction: self.friction,
            goal_radius: self.goal_radius,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.width < 3 || self.height < 3 {
            v.push(format!(
                "env size must be at least 3×3, got {}×{}",
                self.width, self.height
            ));
        } else if self.width == 3 && self.height == 3 {
            v.push("a 3×3 maze has only one open cell".into());
        }
        if self.max_steps == 0 {
            v.push("env max_steps must be ≥ 1".into());
        }
        if let DriftMode::GoalShift { period: 0 } = self.drift {
            v.push("goal-shift drift period must be ≥ 1".into());
        }
        if let Some(r) = self.resolution {
            let needed = self.width.max(self.height);
            if r < needed {
                v.push(format!("render resolution {r} is below the maze size {needed}"));
            }
        }
        if self.kind == EnvKind::Point {
            v.extend(self.point_params().violations());
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

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    /// Bound on a per-step penalty, used for reward range checks.
    pub fn step_scale(&self) -> f64 {
        match self.kind {
            EnvKind::Grid => 1.0,
            EnvKind::Point => self.dt,
        }
    }
}

/// What the agent sees after a reset or a step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `[H, W, 3]` when rendering is enabled.
    pub image: Option<NdArray<f32>>,
    /// Normalized low-dimensional state.
    pub state: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Goal reached (as opposed to running out of steps).
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Agent {
    Grid(GridState),
    Point(PointMassState),
}

/// A maze environment instance. Not shareable mid-episode; clone it to
/// simulate ahead.
#[derive(Clone, Debug)]
pub struct MazeEnv {
    cfg: EnvConfig,
    seed: u64,
    episode: u64,
    spec: MazeSpec,
    agent: Agent,
    drift_rng: Rng,
}

impl MazeEnv {
    /// Environment built from `seed` and reset to episode 0.
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = generate_maze(seed, cfg.width, cfg.height)?;
        let agent = initial_agent(&cfg, &spec);
        let mut env = MazeEnv {
            cfg,
            seed,
            episode: 0,
            spec,
            agent,
            drift_rng: rng_from_seed(seed ^ DRIFT_SALT),
        };
        env.reset(0)?;
        Ok(env)
    }

    /// The environment used for episode `e` of a run with `base_seed`:
    /// built from `base_seed ⊕ e`.
    pub fn for_episode(cfg: EnvConfig, base_seed: u64, episode: u64) -> Result<Self> {
        MazeEnv::new(cfg, base_seed ^ episode)
    }

    /// Starts an episode. Only regenerate mode changes the maze.
    pub fn reset(&mut self, episode: u64) -> Result<Observation> {
        if self.cfg.drift == DriftMode::Regenerate {
            self.spec = generate_maze(self.seed ^ episode, self.cfg.width, self.cfg.height)?;
        }
        self.episode = episode;
        self.agent = initial_agent(&self.cfg, &self.spec);
        self.drift_rng = rng_from_seed(self.seed ^ episode ^ DRIFT_SALT);
        self.observe()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn t(&self) -> usize {
        match &self.agent {
            Agent::Grid(s) => s.t,
            Agent::Point(s) => s.t,
        }
    }

    pub fn is_done(&self) -> bool {
        match &self.agent {
            Agent::Grid(s) => s.done,
            Agent::Point(s) => s.done,
        }
    }

    /// Cell containing the agent.
    pub fn agent_cell(&self) -> Cell {
        match &self.agent {
            Agent::Grid(s) => s.pos,
            Agent::Point(s) => self.spec.cell_at(s.pos).unwrap_or(self.spec.start),
        }
    }

    /// Cell containing the current goal.
    pub fn goal_cell(&self) -> Cell {
        match &self.agent {
            Agent::Grid(s) => s.goal,
            Agent::Point(s) => self.spec.cell_at(s.goal).unwrap_or(self.spec.goal),
        }
    }

    pub fn state_vector(&self) -> Vec<f32> {
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let v: Vec<f64> = match &self.agent {
            Agent::Grid(s) => vec![
                (s.pos.x as f64 + 0.5) / w,
                (s.pos.y as f64 + 0.5) / h,
                (s.goal.x as f64 + 0.5) / w,
                (s.goal.y as f64 + 0.5) / h,
            ],
            Agent::Point(s) => vec![
                s.pos[0] / w,
                s.pos[1] / h,
                s.vel[0],
                s.vel[1],
                s.goal[0] / w,
                s.goal[1] / h,
            ],
        };
        v.into_iter().map(|x| x as f32).collect()
    }

    pub fn render(&self, resolution: usize) -> Result<NdArray<f32>> {
        let overlay = match &self.agent {
            Agent::Grid(s) => Overlay {
                goal: Some(Marker::Cell(s.goal)),
                agent: Some(Marker::Cell(s.pos)),
            },
            Agent::Point(s) => Overlay {
                goal: Some(Marker::Disk {
                    center: s.goal,
                    radius: self.cfg.goal_radius,
                }),
                agent: Some(Marker::Disk {
                    center: s.pos,
                    radius: AGENT_RADIUS,
                }),
            },
        };
        render(&self.spec, &overlay, resolution)
    }

    pub fn observe(&self) -> Result<Observation> {
        let image = match self.cfg.resolution {
            Some(r) => Some(self.render(r)?),
            None => None,
        };
        Ok(Observation {
            image,
            state: self.state_vector(),
        })
    }

    /// Advances one step. Grid actions are 4 logits (argmax executes);
    /// point actions are a 2-vector force clipped to [−1, 1]².
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::State("step after the episode ended; call reset".into()));
        }
        let mut tr: Transition = match &mut self.agent {
            Agent::Grid(s) => {
                let (n, tr) = grid_step(s, Move::from_logits(action)?, &self.spec)?;
                *s = n;
                tr
            }
            Agent::Point(s) => {
                if action.len() != 2 {
                    return Err(Error::dim(
                        "point action",
                        format!("expected 2 components, got {}", action.len()),
                    ));
                }
                let (n, tr) = point_step(s, [action[0], action[1]], &self.spec, &self.cfg.point_params())?;
                *s = n;
                tr
            }
        };
        if !tr.done && self.t() >= self.cfg.max_steps {
            tr.done = true;
            self.set_done();
        }
        if let DriftMode::GoalShift { period } = self.cfg.drift {
            if !tr.done && self.t().is_multiple_of(period) {
                self.shift_goal();
            }
        }
        Ok(StepOutcome {
            observation: self.observe()?,
            reward: tr.reward,
            done: tr.done,
            success: tr.success,
        })
    }

    fn set_done(&mut self) {
        match &mut self.agent {
            Agent::Grid(s) => s.done = true,
            Agent::Point(s) => s.done = true,
        }
    }

    /// Moves the goal to a uniformly drawn open cell reachable from the
    /// agent, other than the agent's and the current goal's cells.
    fn shift_goal(&mut self) {
        let (here, goal) = (self.agent_cell(), self.goal_cell());
        let candidates: Vec<Cell> = reachable_from(&self.spec, here)
            .into_iter()
            .filter(|c| *c != here && *c != goal)
            .collect();
        if candidates.is_empty() {
            log::info!("goal shift at t={}: no candidate cell, goal kept", self.t());
            return;
        }
        let next = candidates[self.drift_rng.random_range(0..candidates.len())];
        match &mut self.agent {
            Agent::Grid(s) => s.goal = next,
            Agent::Point(s) => s.goal = next.center(),
        }
    }
}

fn initial_agent(cfg: &EnvConfig, spec: &MazeSpec) -> Agent {
    match cfg.kind {
        EnvKind::Grid => Agent::Grid(GridState {
            pos: spec.start,
            goal: spec.goal,
            t: 0,
            done: false,
        }),
        EnvKind::Point => Agent::Point(PointMassState::at_rest(spec.start.center(), spec.goal.center())),
    }
}
