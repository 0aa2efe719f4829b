use serde::{Deserialize, Serialize};

use super::{Cell, MazeSpec, Move};
use crate::{Error, Result};

/// Reward on reaching the goal.
pub const GOAL_REWARD: f64 = 10.0;
/// Per-step penalty (scaled by `dt` in the continuous maze).
pub const STEP_PENALTY: f64 = 0.01;

/// Reward and termination of one transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridState {
    pub pos: Cell,
    pub goal: Cell,
    pub t: usize,
    pub done: bool,
}

/// One discrete move; blocked moves leave the agent in place.
pub fn grid_step(state: &GridState, action: Move, spec: &MazeSpec) -> Result<(GridState, Transition)> {
    if state.done {
        return Err(Error::State("step after the episode ended; call reset".into()));
    }
    let pos = spec.neighbor(state.pos, action).unwrap_or(state.pos);
    let success = pos == state.goal;
    let next = GridState {
        pos,
        goal: state.goal,
        t: state.t + 1,
        done: success,
    };
    let reward = if success { GOAL_REWARD } else { -STEP_PENALTY };
    Ok((
        next,
        Transition {
            reward,
            done: success,
            success,
        },
    ))
}

/// Continuous-maze constants, in cell units and seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub dt: f64,
    pub friction: f64,
    pub goal_radius: f64,
}

impl Default for PointParams {
    fn default() -> Self {
        PointParams {
            dt: 0.1,
            friction: 0.05,
            goal_radius: 0.4,
        }
    }
}

impl PointParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..1.0).contains(&self.friction) {
            v.push(format!("friction must lie in [0, 1), got {}", self.friction));
        }
        if !(self.goal_radius > 0.0 && self.goal_radius.is_finite()) {
            v.push(format!("goal_radius must be positive, got {}", self.goal_radius));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMassState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
    pub t: usize,
    pub done: bool,
}

impl PointMassState {
    pub fn at_rest(pos: [f64; 2], goal: [f64; 2]) -> Self {
        PointMassState {
            pos,
            vel: [0.0; 2],
            goal,
            t: 0,
            done: false,
        }
    }
}

/// Largest displacement per collision sub-step, well under one cell.
const MAX_SUBSTEP: f64 = 0.25;

/// Semi-implicit Euler with friction, then an axis-separated move: an axis
/// whose motion would enter a wall cell is cancelled and its velocity
/// component zeroed, so the agent slides along walls.
pub fn point_step(
    state: &PointMassState,
    action: [f64; 2],
    spec: &MazeSpec,
    params: &PointParams,
) -> Result<(PointMassState, Transition)> {
    if state.done {
        return Err(Error::State("step after the episode ended; call reset".into()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Input(format!("non-finite point action {action:?}")));
    }
    let a = action.map(|v| v.clamp(-1.0, 1.0));
    let damp = 1.0 - params.friction;
    let mut vel = [
        (state.vel[0] + a[0] * params.dt) * damp,
        (state.vel[1] + a[1] * params.dt) * damp,
    ];
    let delta = [vel[0] * params.dt, vel[1] * params.dt];
    let substeps = (delta[0].abs().max(delta[1].abs()) / MAX_SUBSTEP).ceil().max(1.0) as usize;
    let mut pos = state.pos;
    let mut blocked = [false; 2];
    for _ in 0..substeps {
        for axis in 0..2 {
            if blocked[axis] {
                continue;
            }
            let mut trial = pos;
            trial[axis] += delta[axis] / substeps as f64;
            if spec.point_is_open(trial) {
                pos = trial;
            } else {
                blocked[axis] = true;
                vel[axis] = 0.0;
            }
        }
    }
    let dist = ((pos[0] - state.goal[0]).powi(2) + (pos[1] - state.goal[1]).powi(2)).sqrt();
    let success = dist < params.goal_radius;
    let reward = if success {
        GOAL_REWARD
    } else {
        -STEP_PENALTY * params.dt
    };
    let next = PointMassState {
        pos,
        vel,
        goal: state.goal,
        t: state.t + 1,
        done: success,
    };
    Ok((
        next,
        Transition {
            reward,
            done: success,
            success,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{bfs_path, generate_maze, path_moves};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn open_field() -> MazeSpec {
        MazeSpec::from_ascii(&["S....", ".....", "....G"]).unwrap()
    }

    #[test]
    fn grid_goal_and_wall() {
        let m = MazeSpec::from_ascii(&["###", "SG#", "###"]).unwrap();
        let s = GridState {
            pos: m.start,
            goal: m.goal,
            t: 0,
            done: false,
        };
        let (blocked, tr) = grid_step(&s, Move::Up, &m).unwrap();
        assert_eq!(blocked.pos, m.start);
        assert_eq!(tr.reward, -0.01);
        let (end, tr) = grid_step(&s, Move::Right, &m).unwrap();
        assert!(tr.done && tr.success && end.done);
        assert_eq!(tr.reward, 10.0);
        assert!(matches!(grid_step(&end, Move::Left, &m), Err(Error::State(_))));
    }

    #[test]
    fn expert_path_rollout_reaches_goal() {
        for seed in 0..50 {
            let m = generate_maze(seed, 9, 9).unwrap();
            let moves = path_moves(&bfs_path(&m, m.start, m.goal).unwrap()).unwrap();
            let mut s = GridState {
                pos: m.start,
                goal: m.goal,
                t: 0,
                done: false,
            };
            for (i, mv) in moves.iter().enumerate() {
                let (n, tr) = grid_step(&s, *mv, &m).unwrap();
                assert_eq!(tr.done, i + 1 == moves.len());
                s = n;
            }
            assert!(s.done && s.pos == m.goal && s.t == moves.len());
        }
    }

    #[test]
    fn point_hand_integration() {
        let m = open_field();
        let p = PointParams {
            dt: 0.1,
            friction: 0.0,
            goal_radius: 0.4,
        };
        let s = PointMassState::at_rest([0.0, 0.0], [4.5, 2.5]);
        let (n, tr) = point_step(&s, [1.0, 0.0], &m, &p).unwrap();
        assert!((n.vel[0] - 0.1).abs() < 1e-15 && n.vel[1] == 0.0);
        assert!((n.pos[0] - 0.01).abs() < 1e-15 && n.pos[1] == 0.0);
        assert!((tr.reward + 0.001).abs() < 1e-15);
        let (still, _) = point_step(&s, [0.0, 0.0], &m, &p).unwrap();
        assert_eq!(still.pos, s.pos);
        assert_eq!(still.vel, s.vel);
        assert_eq!(still.t, 1);
    }

    #[test]
    fn wall_zeroes_normal_velocity_only() {
        let m = MazeSpec::from_ascii(&["S.#", "..G"]).unwrap();
        let p = PointParams {
            dt: 0.1,
            friction: 0.0,
            goal_radius: 0.1,
        };
        let mut s = PointMassState::at_rest([1.99, 0.5], [2.5, 1.5]);
        s.vel = [2.0, 0.5];
        let (n, _) = point_step(&s, [0.0, 0.0], &m, &p).unwrap();
        assert_eq!(n.vel[0], 0.0);
        assert!((n.vel[1] - 0.5).abs() < 1e-15);
        assert_eq!(n.pos[0], 1.99);
        assert!((n.pos[1] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn non_finite_action_rejected() {
        let m = open_field();
        let s = PointMassState::at_rest([0.5, 0.5], [4.5, 2.5]);
        let err = point_step(&s, [f64::NAN, 0.0], &m, &PointParams::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn random_fuzz_never_enters_walls() {
        let m = generate_maze(17, 9, 9).unwrap();
        let params = PointParams {
            goal_radius: 1e-9,
            ..PointParams::default()
        };
        let mut rng = rng_from_seed(0);
        let mut s = PointMassState::at_rest(m.start.center(), [-100.0, -100.0]);
        for _ in 0..10_000 {
            let a = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
            s = point_step(&s, a, &m, &params).unwrap().0;
            assert!(m.point_is_open(s.pos), "{:?}", s.pos);
        }
    }
}
