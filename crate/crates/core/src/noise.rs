//! Spatially correlated Gaussian noise on the grid.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Stationary covariance function c(u, v) of the driving Wiener field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceFn {
    /// c(0, 0) = variance, zero elsewhere.
    White { variance: f64 },
    /// variance * exp(-(u^2 + v^2) / (2 l^2))
    Gaussian { variance: f64, length_scale: f64 },
    /// variance * exp(-sqrt(u^2 + v^2) / l)
    Exponential { variance: f64, length_scale: f64 },
}

impl CovarianceFn {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match *self {
            CovarianceFn::White { variance } => {
                if u == 0.0 && v == 0.0 {
                    variance
                } else {
                    0.0
                }
            }
            CovarianceFn::Gaussian { variance, length_scale } => {
                variance * (-(u * u + v * v) / (2.0 * length_scale * length_scale)).exp()
            }
            CovarianceFn::Exponential { variance, length_scale } => {
                variance * (-(u * u + v * v).sqrt() / length_scale).exp()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (var, len) = match *self {
            CovarianceFn::White { variance } => (variance, 1.0),
            CovarianceFn::Gaussian { variance, length_scale } => (variance, length_scale),
            CovarianceFn::Exponential { variance, length_scale } => (variance, length_scale),
        };
        if !(var >= 0.0) || !var.is_finite() || !(len > 0.0) || !len.is_finite() {
            return Err(Error::InvalidCovariance(format!("bad parameters in {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    /// D x D, entry ([m,n], [i,j]) = c(x_m - x_i, y_n - y_j) Δ_s^2.
    pub c_tilde: DMatrix<f64>,
    /// PSD part of `c_tilde` (negative eigenvalues clipped); the noise
    /// increment is `factor * z * sqrt(Δ_t)`.
    pub factor: DMatrix<f64>,
}

impl NoiseModel {
    pub fn is_zero(&self) -> bool {
        self.factor.iter().all(|v| *v == 0.0)
    }

    /// Covariance of one noise increment: C̃ᵀC̃ Δ_t.
    pub fn increment_covariance(&self, dt: f64) -> DMatrix<f64> {
        self.c_tilde.tr_mul(&self.c_tilde) * dt
    }
}

impl CovarianceFn {
    pub fn noise_model(&self, grid: &Grid) -> Result<NoiseModel> {
        self.validate()?;
        build_noise_covariance(|u, v| self.eval(u, v), grid)
    }
}

/// Grid covariance of an arbitrary stationary, symmetric `c`.
pub fn build_noise_covariance(c: impl Fn(f64, f64) -> f64, grid: &Grid) -> Result<NoiseModel> {
    let xs = grid.x_centers();
    let ys = grid.y_centers();
    let area2 = grid.cell_area().powi(2);
    let d = grid.n_pixels();
    let nx = grid.nx;
    let mut c_tilde = DMatrix::zeros(d, d);
    for a in 0..d {
        let (m, n) = (a % nx, a / nx);
        for b in a..d {
            let (i, j) = (b % nx, b / nx);
            let v = c(xs[m] - xs[i], ys[n] - ys[j]) * area2;
            c_tilde[(a, b)] = v;
            c_tilde[(b, a)] = v;
        }
    }
    let trace = c_tilde.trace();
    let eig = SymmetricEigen::new(c_tilde.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig < -1e-6 * trace.abs() {
        return Err(Error::InvalidCovariance(format!(
            "grid covariance has eigenvalue {min_eig:e} (trace {trace:e})"
        )));
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let q = &eig.eigenvectors;
    let mut factor = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    symmetrize(&mut factor);
    Ok(NoiseModel { c_tilde, factor })
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
