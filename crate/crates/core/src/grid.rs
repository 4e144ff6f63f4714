//! Space and time discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `nx x ny` partition of a rectangle into equal cells observed at
/// `lags + steps + 1` equally spaced time points `t_{-L} < ... < t_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Δ_t
    pub time_step: f64,
    /// L, number of lagged frames feeding the network term.
    pub lags: usize,
    /// M, number of modeled transitions.
    pub steps: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Invalid("grid must have at least one cell per axis".into()));
        }
        if !(self.x_range.0 < self.x_range.1) || !(self.y_range.0 < self.y_range.1) {
            return Err(Error::Invalid("grid ranges must be increasing".into()));
        }
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return Err(Error::Invalid("time step must be positive".into()));
        }
        if self.lags == 0 {
            return Err(Error::Invalid("need at least one lag".into()));
        }
        if self.steps == 0 {
            return Err(Error::Invalid("need at least one modeled step".into()));
        }
        Ok(())
    }

    /// D
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// Frames in a full recording, history included.
    pub fn n_frames(&self) -> usize {
        self.steps + self.lags + 1
    }

    pub fn dx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / self.ny as f64
    }

    /// Δ_s
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn x_centers(&self) -> Vec<f64> {
        centers(self.x_range.0, self.dx(), self.nx)
    }

    pub fn y_centers(&self) -> Vec<f64> {
        centers(self.y_range.0, self.dy(), self.ny)
    }

    pub fn x_cells(&self) -> Vec<(f64, f64)> {
        cells(self.x_range, self.nx)
    }

    pub fn y_cells(&self) -> Vec<(f64, f64)> {
        cells(self.y_range, self.ny)
    }

    /// τ = L Δ_t
    pub fn lag_window(&self) -> f64 {
        self.lags as f64 * self.time_step
    }

    /// t_k for k = 0..M-1, the times at which the drift is evaluated.
    pub fn model_times(&self) -> Vec<f64> {
        (0..self.steps).map(|k| k as f64 * self.time_step).collect()
    }

    /// t_M
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.time_step
    }

    /// `[t_l, t_{l+1}]` for l = -L..-1, oldest first.
    pub fn lag_intervals(&self) -> Vec<(f64, f64)> {
        let dt = self.time_step;
        (0..self.lags)
            .map(|r| {
                let l = r as f64 - self.lags as f64;
                (l * dt, (l + 1.0) * dt)
            })
            .collect()
    }

    /// Left endpoints t_l of the lag intervals, oldest first.
    pub fn lag_nodes(&self) -> Vec<f64> {
        self.lag_intervals().into_iter().map(|(a, _)| a).collect()
    }
}

fn centers(lo: f64, h: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + h * (i as f64 + 0.5)).collect()
}

fn cells((lo, hi): (f64, f64), n: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            let a = lo + h * i as f64;
            let b = if i + 1 == n { hi } else { lo + h * (i + 1) as f64 };
            (a, b)
        })
        .collect()
}
