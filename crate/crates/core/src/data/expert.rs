use serde::{Deserialize, Serialize};

use crate::envs::{bfs_path, path_moves, Agent, Cell, MazeEnv, MazeSpec, Move, PointMassState};
use crate::{Error, Result};

/// Shortest start-to-goal move sequence.
pub fn expert_grid(spec: &MazeSpec) -> Result<Vec<Move>> {
    let path = bfs_path(spec, spec.start, spec.goal)
        .ok_or_else(|| Error::Internal("maze has no path from start to goal".into()))?;
    path_moves(&path)
}

/// First move of a shortest path; `None` when already at the goal.
pub fn grid_move(spec: &MazeSpec, from: Cell, goal: Cell) -> Result<Option<Move>> {
    let path = bfs_path(spec, from, goal)
        .ok_or_else(|| Error::Internal(format!("no path from {from:?} to {goal:?}")))?;
    Ok(path_moves(&path[..path.len().min(2)])?.first().copied())
}

/// Gains of the PD waypoint controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    /// Lateral distance from the corridor axis tolerated before the
    /// controller re-centers in the current cell.
    pub capture_radius: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        PdGains {
            kp: 4.0,
            kd: 2.0,
            capture_radius: 0.3,
        }
    }
}

/// PD force toward the next waypoint of a BFS cell path.
///
/// Waypoints are the cells where the path turns plus the goal; the target is
/// the first one, so straight corridors are crossed without stopping. When
/// the agent is off the corridor axis by more than the capture radius it
/// first steers to the center of its own cell.
pub fn expert_point(spec: &MazeSpec, state: &PointMassState, gains: &PdGains) -> [f64; 2] {
    let here = spec.cell_at(state.pos).unwrap_or(spec.start);
    let goal_cell = spec.cell_at(state.goal).unwrap_or(spec.goal);
    let target = match bfs_path(spec, here, goal_cell) {
        Some(path) if path.len() > 1 => {
            let moves = path_moves(&path).unwrap_or_default();
            let run = moves.iter().take_while(|m| **m == moves[0]).count();
            let (dx, dy) = moves[0].delta();
            let center = here.center();
            let lateral = if dx != 0 {
                (state.pos[1] - center[1]).abs()
            } else {
                (state.pos[0] - center[0]).abs()
            };
            let behind = (state.pos[0] - center[0]) * dx as f64 + (state.pos[1] - center[1]) * dy as f64;
            if lateral > gains.capture_radius && behind < 0.0 {
                center
            } else if run == moves.len() {
                state.goal
            } else {
                path[run].center()
            }
        }
        _ => state.goal,
    };
    let mut a = [0.0; 2];
    for i in 0..2 {
        a[i] = (gains.kp * (target[i] - state.pos[i]) - gains.kd * state.vel[i]).clamp(-1.0, 1.0);
    }
    a
}

/// The scripted expert's action for the environment's current state:
/// a one-hot move on grids, a PD force on point mazes.
pub fn expert_action(env: &MazeEnv, gains: &PdGains) -> Result<Vec<f64>> {
    match env.agent() {
        Agent::Grid(s) => {
            let m = grid_move(env.spec(), s.pos, s.goal)?.unwrap_or(Move::Up);
            Ok(m.one_hot().to_vec())
        }
        Agent::Point(s) => Ok(expert_point(env.spec(), s, gains).to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvKind};

    #[test]
    fn corridor_moves() {
        let m = MazeSpec::from_ascii(&["S..G"]).unwrap();
        assert_eq!(expert_grid(&m).unwrap(), vec![Move::Right; 3]);
        let m = MazeSpec::from_ascii(&["SG"]).unwrap();
        assert_eq!(expert_grid(&m).unwrap(), vec![Move::Right]);
    }

    #[test]
    fn at_goal_at_rest_is_still() {
        let m = MazeSpec::from_ascii(&["S.G"]).unwrap();
        let s = PointMassState::at_rest(m.goal.center(), m.goal.center());
        assert_eq!(expert_point(&m, &s, &PdGains::default()), [0.0, 0.0]);
    }

    #[test]
    fn due_east_waypoint_has_no_vertical_force() {
        let m = MazeSpec::from_ascii(&["S..G"]).unwrap();
        let s = PointMassState::at_rest(m.start.center(), m.goal.center());
        let gains = PdGains {
            kp: 1.0,
            ..PdGains::default()
        };
        let a = expert_point(&m, &s, &gains);
        assert_eq!(a, [1.0, 0.0]);
        let near = PointMassState::at_rest([2.9, 0.5], m.goal.center());
        let a = expert_point(&m, &near, &gains);
        assert!((a[0] - 0.6).abs() < 1e-12 && a[1] == 0.0);
    }

    #[test]
    fn point_expert_solves_most_mazes() {
        let cfg = EnvConfig::new(EnvKind::Point, 7, 400);
        let gains = PdGains::default();
        let mut ok = 0;
        for seed in 0..100 {
            let mut env = MazeEnv::new(cfg.clone(), seed).unwrap();
            while !env.is_done() {
                let a = expert_action(&env, &gains).unwrap();
                if env.step(&a).unwrap().success {
                    ok += 1;
                }
            }
        }
        assert!(ok >= 95, "{ok}/100");
    }
}
