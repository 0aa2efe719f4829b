//! Procedurally generated mazes with discrete (grid) and continuous
//! (point-mass) dynamics, drift modes, rendering and replay logs.

mod dynamics;
mod env;
mod maze;
mod render;
mod replay;

pub use dynamics::{
    grid_step, point_step, GridState, PointMassState, PointParams, Transition, GOAL_REWARD,
    STEP_PENALTY,
};
pub use env::{
    Agent, DriftMode, EnvConfig, EnvKind, MazeEnv, Observation, StepOutcome, AGENT_RADIUS,
};
pub use maze::{bfs_path, generate_maze, path_moves, reachable_from, Cell, MazeSpec, Move};
pub use render::{render, Marker, Overlay, AGENT_RGB, FLOOR_RGB, GOAL_RGB, WALL_RGB};
pub use replay::{read_replay, replay_mismatch, write_replay, ReplayRecord};
