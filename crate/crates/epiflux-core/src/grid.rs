//! Uniform time grid shared by the solvers.

use crate::error::LlnError;

/// `n + 1` nodes `0, dt, ..., n*dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self, LlnError> {
        if !(dt > 0.0) || !(horizon > 0.0) {
            return Err(LlnError::Parameter(format!(
                "horizon {horizon} and dt {dt} must be positive"
            )));
        }
        let n = (horizon / dt).round() as usize;
        if n == 0 || (n as f64 * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(LlnError::Parameter(format!(
                "dt {dt} does not divide the horizon {horizon}"
            )));
        }
        Ok(TimeGrid { dt, n })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of cells.
    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n
    }

    /// Number of nodes (`n_steps + 1`).
    #[inline]
    pub fn len(&self) -> usize {
        self.n + 1
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.time(self.n)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Cell index and interpolation weight for `t`: returns `(i, w)` with
    /// `t = (1-w)*time(i) + w*time(i+1)`, clamped to the horizon.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), LlnError> {
        if t < -1e-12 || t > self.horizon() + 1e-9 {
            return Err(LlnError::Grid {
                t,
                horizon: self.horizon(),
            });
        }
        let x = (t / self.dt).clamp(0.0, self.n as f64);
        let i = (x.floor() as usize).min(self.n - 1);
        Ok((i, x - i as f64))
    }

    /// Coarsen by dropping every other node. Requires an even step count.
    pub fn coarsen(&self) -> Option<TimeGrid> {
        if self.n % 2 == 0 && self.n >= 2 {
            Some(TimeGrid {
                dt: 2.0 * self.dt,
                n: self.n / 2,
            })
        } else {
            None
        }
    }
}

/// Linear interpolation of grid values at time `t`.
pub fn interp(grid: &TimeGrid, values: &[f64], t: f64) -> Result<f64, LlnError> {
    let (i, w) = grid.locate(t)?;
    Ok(values[i] * (1.0 - w) + values[i + 1] * w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = TimeGrid::new(8.0, 0.05).unwrap();
        assert_eq!(g.n_steps(), 160);
        assert!((g.horizon() - 8.0).abs() < 1e-12);
        assert!(TimeGrid::new(8.0, 0.3).is_err());
    }

    #[test]
    fn interpolation() {
        let g = TimeGrid::new(1.0, 0.5).unwrap();
        let v = vec![0.0, 1.0, 4.0];
        assert!((interp(&g, &v, 0.25).unwrap() - 0.5).abs() < 1e-12);
        assert!((interp(&g, &v, 1.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(interp(&g, &v, 1.5).is_err());
    }

    #[test]
    fn coarsen_halves() {
        let g = TimeGrid::new(8.0, 0.05).unwrap();
        let c = g.coarsen().unwrap();
        assert_eq!(c.n_steps(), 80);
        assert!((c.dt() - 0.1).abs() < 1e-15);
    }
}
