//! Uniform one-dimensional finite-volume grids and time-stamped fields.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};

/// Uniform grid of `n` cells covering `[0, length]`; unknowns live at cell
/// centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    n: usize,
    length: f64,
}

impl Grid1D {
    /// A grid needs at least four cells so that interior stencils exist.
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::config(format!("grid needs at least 4 cells, got {n}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config(format!("grid length must be positive, got {length}")));
        }
        Ok(Grid1D { n, length })
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Domain length.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Center of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    /// All cell centers, left to right.
    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }
}

/// One snapshot of cell averages at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    /// Snapshot time.
    pub t: f64,
    /// Cell averages, one per grid cell.
    pub values: Vec<f64>,
}

/// A time-ordered sequence of snapshots on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// The grid all snapshots share.
    pub grid: Grid1D,
    /// Snapshots in increasing time order; the first is the initial state.
    pub fields: Vec<Field>,
}

impl Trajectory {
    /// Total mass `h * sum(u_i)` of each snapshot.
    pub fn mass(&self) -> Vec<f64> {
        let h = self.grid.h();
        self.fields.iter().map(|f| h * f.values.iter().sum::<f64>()).collect()
    }

    /// Snapshot values at time `t` (exact match on the stamp).
    pub fn at_time(&self, t: f64) -> Option<&Field> {
        self.fields.iter().find(|f| f.t == t)
    }

    /// Final snapshot.
    pub fn last(&self) -> &Field {
        self.fields.last().expect("trajectory holds at least the initial state")
    }

    /// Writes the trajectory in long form with header `t,x,u`, one row per
    /// cell per snapshot. Plain `{}` float formatting keeps the output
    /// byte-stable across runs.
    pub fn to_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for field in &self.fields {
            for (i, u) in field.values.iter().enumerate() {
                writeln!(w, "{},{},{}", field.t, self.grid.center(i), u)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_tile_the_domain() {
        let g = Grid1D::new(8, 2.0).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.center(0), 0.125);
        assert_eq!(g.center(7), 1.875);
        let c = g.centers();
        assert_eq!(c.len(), 8);
        // Midpoints are symmetric about the domain center.
        for i in 0..8 {
            assert!((c[i] + c[7 - i] - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn small_or_degenerate_grids_are_rejected() {
        assert!(Grid1D::new(3, 1.0).is_err());
        assert!(Grid1D::new(8, 0.0).is_err());
        assert!(Grid1D::new(8, f64::INFINITY).is_err());
    }

    #[test]
    fn mass_is_cell_width_times_sum() {
        let grid = Grid1D::new(4, 2.0).unwrap();
        let traj = Trajectory {
            grid,
            fields: vec![
                Field { t: 0.0, values: vec![1.0, 2.0, 3.0, 4.0] },
                Field { t: 1.0, values: vec![2.5, 2.5, 2.5, 2.5] },
            ],
        };
        let mass = traj.mass();
        assert_eq!(mass, vec![5.0, 5.0]);
        assert_eq!(traj.at_time(1.0).unwrap().values[0], 2.5);
        assert!(traj.at_time(0.5).is_none());
    }

    #[test]
    fn csv_round_trips_the_stamps() {
        let grid = Grid1D::new(4, 1.0).unwrap();
        let traj = Trajectory {
            grid,
            fields: vec![Field { t: 0.25, values: vec![0.1, 0.2, 0.3, 0.4] }],
        };
        let mut buf = Vec::new();
        traj.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x,u"));
        assert_eq!(lines.next(), Some("0.25,0.125,0.1"));
        assert_eq!(text.lines().count(), 5);
    }
}
