use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Integer cell coordinate; `y` grows downward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Continuous coordinate of the cell center.
    pub fn center(self) -> [f64; 2] {
        [self.x as f64 + 0.5, self.y as f64 + 0.5]
    }
}

/// Discrete move. The index order is fixed and shared with one-hot action
/// vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Move::Up => (0, -1),
            Move::Down => (0, 1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
        }
    }

    /// Mirror image under a horizontal flip.
    pub fn flipped(self) -> Move {
        match self {
            Move::Left => Move::Right,
            Move::Right => Move::Left,
            other => other,
        }
    }

    /// Mirror image under a vertical flip.
    pub fn flipped_vertical(self) -> Move {
        match self {
            Move::Up => Move::Down,
            Move::Down => Move::Up,
            other => other,
        }
    }

    /// Image under reflection about the main diagonal.
    pub fn transposed(self) -> Move {
        match self {
            Move::Up => Move::Left,
            Move::Left => Move::Up,
            Move::Down => Move::Right,
            Move::Right => Move::Down,
        }
    }

    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }

    /// Index of the largest logit; ties go to the lowest index.
    pub fn from_logits(logits: &[f64]) -> Result<Move> {
        if logits.len() != 4 {
            return Err(Error::dim(
                "grid action",
                format!("expected 4 logits, got {}", logits.len()),
            ));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite grid action logit".into()));
        }
        let mut best = 0;
        for i in 1..4 {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        Ok(Move::ALL[best])
    }
}

/// A rectangular maze with a start and a goal cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` = blocked.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
    pub seed: u64,
}

impl MazeSpec {
    /// Builds a spec from explicit walls and checks every invariant.
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: Cell,
        goal: Cell,
        seed: u64,
    ) -> Result<Self> {
        if walls.len() != width * height {
            return Err(Error::Config(format!(
                "wall grid has {} cells, expected {width}×{height}",
                walls.len()
            )));
        }
        let spec = MazeSpec {
            width,
            height,
            walls,
            start,
            goal,
            seed,
        };
        for (what, c) in [("start", start), ("goal", goal)] {
            if !spec.in_bounds(c) || !spec.is_open(c) {
                return Err(Error::Config(format!("{what} cell {c:?} is not an open cell")));
            }
        }
        if bfs_path(&spec, start, goal).is_none() {
            return Err(Error::Config("goal is unreachable from start".into()));
        }
        Ok(spec)
    }

    /// Parses rows of `#` (wall), `.` (open), `S` (start) and `G` (goal).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut walls = Vec::with_capacity(width * height);
        let (mut start, mut goal) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Config(format!("row {y} has a different width")));
            }
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        start = Some(Cell::new(x, y));
                        walls.push(false);
                    }
                    'G' => {
                        goal = Some(Cell::new(x, y));
                        walls.push(false);
                    }
                    other => {
                        return Err(Error::Config(format!("unexpected maze character {other:?}")))
                    }
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("maze has no start `S`".into()))?;
        let goal = goal.ok_or_else(|| Error::Config("maze has no goal `G`".into()))?;
        MazeSpec::new(width, height, walls, start, goal, 0)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_open(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.walls[c.y * self.width + c.x]
    }

    /// Open test on signed coordinates; anything outside the grid is wall.
    pub fn is_open_at(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && self.is_open(Cell::new(x as usize, y as usize))
    }

    /// The cell containing a continuous point, if it lies on the grid.
    pub fn cell_at(&self, p: [f64; 2]) -> Option<Cell> {
        let (x, y) = (p[0].floor(), p[1].floor());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some(Cell::new(x as usize, y as usize))
    }

    pub fn point_is_open(&self, p: [f64; 2]) -> bool {
        self.cell_at(p).is_some_and(|c| self.is_open(c))
    }

    /// Neighbor reached by `m`, if it is open.
    pub fn neighbor(&self, c: Cell, m: Move) -> Option<Cell> {
        let (dx, dy) = m.delta();
        let (x, y) = (c.x as isize + dx, c.y as isize + dy);
        self.is_open_at(x, y).then(|| Cell::new(x as usize, y as usize))
    }

    /// Open cells in row-major order.
    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Cell::new(x, y)))
            .filter(|c| self.is_open(*c))
            .collect()
    }

    /// Mirror image about the vertical center line.
    pub fn flipped(&self) -> MazeSpec {
        let w = self.width;
        let mut walls = self.walls.clone();
        for row in walls.chunks_exact_mut(w) {
            row.reverse();
        }
        let flip = |c: Cell| Cell::new(w - 1 - c.x, c.y);
        MazeSpec {
            width: w,
            height: self.height,
            walls,
            start: flip(self.start),
            goal: flip(self.goal),
            seed: self.seed,
        }
    }

    /// Mirror image about the horizontal center line.
    pub fn flipped_vertical(&self) -> MazeSpec {
        let (w, h) = (self.width, self.height);
        let walls = self.walls.chunks_exact(w).rev().flatten().copied().collect();
        let flip = |c: Cell| Cell::new(c.x, h - 1 - c.y);
        MazeSpec {
            width: w,
            height: h,
            walls,
            start: flip(self.start),
            goal: flip(self.goal),
            seed: self.seed,
        }
    }

    /// Reflection about the main diagonal; width and height swap.
    pub fn transposed(&self) -> MazeSpec {
        let (w, h) = (self.width, self.height);
        let walls = (0..w)
            .flat_map(|x| (0..h).map(move |y| y * w + x))
            .map(|i| self.walls[i])
            .collect();
        let t = |c: Cell| Cell::new(c.y, c.x);
        MazeSpec {
            width: h,
            height: w,
            walls,
            start: t(self.start),
            goal: t(self.goal),
            seed: self.seed,
        }
    }
}

/// Randomized depth-first perfect maze on the odd-coordinate lattice.
///
/// Rooms sit at odd `(x, y)` with `x ≤ width − 2`, `y ≤ height − 2`; the
/// rest of the border and lattice starts as wall. Start and goal are two
/// distinct open cells drawn uniformly.
pub fn generate_maze(seed: u64, width: usize, height: usize) -> Result<MazeSpec> {
    if width < 3 || height < 3 {
        return Err(Error::Config(format!(
            "maze must be at least 3×3, got {width}×{height}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let (rooms_x, rooms_y) = ((width - 1) / 2, (height - 1) / 2);
    let mut walls = vec![true; width * height];
    let mut visited = vec![false; rooms_x * rooms_y];
    let open = |walls: &mut Vec<bool>, x: usize, y: usize| walls[y * width + x] = false;

    let first = rng.random_range(0..rooms_x * rooms_y);
    let mut stack = vec![(first % rooms_x, first / rooms_x)];
    visited[first] = true;
    open(&mut walls, 2 * (first % rooms_x) + 1, 2 * (first / rooms_x) + 1);
    while let Some(&(rx, ry)) = stack.last() {
        let mut next: Vec<(usize, usize)> = Vec::with_capacity(4);
        if ry > 0 {
            next.push((rx, ry - 1));
        }
        if ry + 1 < rooms_y {
            next.push((rx, ry + 1));
        }
        if rx > 0 {
            next.push((rx - 1, ry));
        }
        if rx + 1 < rooms_x {
            next.push((rx + 1, ry));
        }
        next.retain(|&(x, y)| !visited[y * rooms_x + x]);
        if next.is_empty() {
            stack.pop();
            continue;
        }
        next.shuffle(&mut rng);
        let (nx, ny) = next[0];
        visited[ny * rooms_x + nx] = true;
        open(&mut walls, rx + nx + 1, ry + ny + 1);
        open(&mut walls, 2 * nx + 1, 2 * ny + 1);
        stack.push((nx, ny));
    }

    let cells: Vec<Cell> = (0..height)
        .flat_map(|y| (0..width).map(move |x| Cell::new(x, y)))
        .filter(|c| !walls[c.y * width + c.x])
        .collect();
    if cells.len() < 2 {
        return Err(Error::Config(format!(
            "a {width}×{height} maze has fewer than two open cells"
        )));
    }
    let picks = rand::seq::index::sample(&mut rng, cells.len(), 2);
    let (start, goal) = (cells[picks.index(0)], cells[picks.index(1)]);
    let spec = MazeSpec::new(width, height, walls, start, goal, seed);
    spec.map_err(|e| Error::Internal(format!("generated maze failed validation: {e}")))
}

/// Shortest open path from `from` to `to`, both endpoints included.
pub fn bfs_path(spec: &MazeSpec, from: Cell, to: Cell) -> Option<Vec<Cell>> {
    if !spec.is_open(from) || !spec.is_open(to) {
        return None;
    }
    let idx = |c: Cell| c.y * spec.width + c.x;
    let mut parent: Vec<Option<Cell>> = vec![None; spec.walls.len()];
    let mut seen = vec![false; spec.walls.len()];
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    while let Some(c) = queue.pop_front() {
        if c == to {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(p) = parent[idx(cur)] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for m in Move::ALL {
            if let Some(n) = spec.neighbor(c, m) {
                if !seen[idx(n)] {
                    seen[idx(n)] = true;
                    parent[idx(n)] = Some(c);
                    queue.push_back(n);
                }
            }
        }
    }
    None
}

/// Open cells reachable from `from`, in BFS order.
pub fn reachable_from(spec: &MazeSpec, from: Cell) -> Vec<Cell> {
    if !spec.is_open(from) {
        return Vec::new();
    }
    let mut seen = vec![false; spec.walls.len()];
    let mut order = vec![from];
    seen[from.y * spec.width + from.x] = true;
    let mut head = 0;
    while head < order.len() {
        let c = order[head];
        head += 1;
        for m in Move::ALL {
            if let Some(n) = spec.neighbor(c, m) {
                if !seen[n.y * spec.width + n.x] {
                    seen[n.y * spec.width + n.x] = true;
                    order.push(n);
                }
            }
        }
    }
    order
}

/// Moves along a cell path.
pub fn path_moves(path: &[Cell]) -> Result<Vec<Move>> {
    path.windows(2)
        .map(|w| {
            let (dx, dy) = (
                w[1].x as isize - w[0].x as isize,
                w[1].y as isize - w[0].y as isize,
            );
            Move::ALL
                .into_iter()
                .find(|m| m.delta() == (dx, dy))
                .ok_or_else(|| Error::Internal(format!("cells {:?} and {:?} are not adjacent", w[0], w[1])))
        })
        .collect()
}
