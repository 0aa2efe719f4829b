use super::{Cell, MazeSpec};
use crate::nncore::NdArray;
use crate::{Error, Result};

pub const WALL_RGB: [f32; 3] = [0.1, 0.1, 0.1];
pub const FLOOR_RGB: [f32; 3] = [0.9, 0.9, 0.9];
pub const GOAL_RGB: [f32; 3] = [0.1, 0.8, 0.2];
pub const AGENT_RGB: [f32; 3] = [0.9, 0.1, 0.1];

/// Something drawn on top of the maze.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marker {
    /// Fills a whole cell.
    Cell(Cell),
    /// Filled disk in continuous cell coordinates.
    Disk { center: [f64; 2], radius: f64 },
}

impl Marker {
    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            Marker::Cell(c) => x.floor() as usize == c.x && y.floor() as usize == c.y,
            Marker::Disk { center, radius } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) <= radius * radius
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overlay {
    pub goal: Option<Marker>,
    pub agent: Option<Marker>,
}

/// RGB image `[resolution, resolution, 3]` in [0, 1]. Each pixel samples
/// the maze at its center (nearest neighbor); the agent is drawn over the
/// goal.
pub fn render(spec: &MazeSpec, overlay: &Overlay, resolution: usize) -> Result<NdArray<f32>> {
    let needed = spec.width.max(spec.height);
    if resolution < needed {
        return Err(Error::Config(format!(
            "render resolution {resolution} is below the maze size {needed}"
        )));
    }
    let mut data = Vec::with_capacity(resolution * resolution * 3);
    let scale_x = spec.width as f64 / resolution as f64;
    let scale_y = spec.height as f64 / resolution as f64;
    for i in 0..resolution {
        let y = (i as f64 + 0.5) * scale_y;
        for j in 0..resolution {
            let x = (j as f64 + 0.5) * scale_x;
            let cell = Cell::new(x.floor() as usize, y.floor() as usize);
            let rgb = if overlay.agent.is_some_and(|m| m.covers(x, y)) {
                AGENT_RGB
            } else if overlay.goal.is_some_and(|m| m.covers(x, y)) {
                GOAL_RGB
            } else if spec.is_open(cell) {
                FLOOR_RGB
            } else {
                WALL_RGB
            };
            data.extend_from_slice(&rgb);
        }
    }
    NdArray::new([resolution, resolution, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::generate_maze;

    #[test]
    fn requested_resolution_shape() {
        let m = generate_maze(1, 9, 9).unwrap();
        let img = render(&m, &Overlay::default(), 64).unwrap();
        assert_eq!(img.shape(), &[64, 64, 3]);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_open_cell_is_uniform() {
        let m = MazeSpec::new(1, 1, vec![false], Cell::new(0, 0), Cell::new(0, 0), 0).unwrap();
        let img = render(&m, &Overlay::default(), 4).unwrap();
        for px in img.data().chunks_exact(3) {
            assert_eq!(px, FLOOR_RGB);
        }
    }

    #[test]
    fn too_small_resolution_rejected() {
        let m = generate_maze(1, 9, 9).unwrap();
        assert!(matches!(render(&m, &Overlay::default(), 8), Err(Error::Config(_))));
    }

    #[test]
    fn identical_state_identical_pixels() {
        let m = generate_maze(4, 7, 7).unwrap();
        let o = Overlay {
            goal: Some(Marker::Cell(m.goal)),
            agent: Some(Marker::Disk {
                center: m.start.center(),
                radius: 0.4,
            }),
        };
        assert_eq!(render(&m, &o, 14).unwrap(), render(&m, &o, 14).unwrap());
    }

    #[test]
    fn markers_colour_their_cells() {
        let m = MazeSpec::from_ascii(&["S.G"]).unwrap();
        let o = Overlay {
            goal: Some(Marker::Cell(m.goal)),
            agent: Some(Marker::Cell(m.start)),
        };
        let img = render(&m, &o, 3).unwrap();
        // row 1 of a 3×3 image samples the only maze row
        let row = &img.data()[9..18];
        assert_eq!(&row[0..3], AGENT_RGB);
        assert_eq!(&row[3..6], FLOOR_RGB);
        assert_eq!(&row[6..9], GOAL_RGB);
    }
}
