//! Marginal bases for the tensor-product expansions of the drift components.
//!
//! Every drift function is a sum of products of univariate B-splines:
//!
//! ```text
//! s(x, y, t)          = sum alpha[j1,j2,j3]       phi_x(x) phi_y(y) phi_t(t)
//! w(x, y, x', y', r)  = sum beta[j1,j2,j3,j4,j5]  phi_x(x) phi_y(y) phi_x(x') phi_y(y') phi_l(r)
//! h(x, y)             = sum gamma[j1,j2]          phi_x(x) phi_y(y)
//! ```
//!
//! `BasisSet` holds the marginal specs together with their evaluations on
//! the grid and their integrals over grid cells and lag intervals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::{eval_bspline_basis, integrate_bspline_basis, BSplineSpec};
use crate::coeffs::{BasisDims, DriftCoefficients};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rho::rho_chain;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub px: usize,
    pub py: usize,
    pub pt: usize,
    pub pl: usize,
    pub spatial_degree: usize,
    pub temporal_degree: usize,
    pub lag_degree: usize,
    /// Start of the stimulus basis support; the temporal basis is zero
    /// before it.
    pub stimulus_onset: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            px: 8,
            py: 8,
            pt: 27,
            pl: 11,
            spatial_degree: 2,
            temporal_degree: 3,
            lag_degree: 3,
            stimulus_onset: 0.0,
        }
    }
}

impl BasisConfig {
    pub fn dims(&self) -> BasisDims {
        BasisDims { px: self.px, py: self.py, pt: self.pt, pl: self.pl }
    }
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    pub grid: Grid,
    pub spec_x: BSplineSpec,
    pub spec_y: BSplineSpec,
    pub spec_t: BSplineSpec,
    pub spec_l: BSplineSpec,
    /// N_x x p_x, values at cell centers.
    pub phi_x: DMatrix<f64>,
    /// N_y x p_y
    pub phi_y: DMatrix<f64>,
    /// M x p_t, values at t_0..t_{M-1}; zero rows before the onset.
    pub phi_t: DMatrix<f64>,
    /// N_x x p_x, integrals over the cells.
    pub int_x: DMatrix<f64>,
    /// N_y x p_y
    pub int_y: DMatrix<f64>,
    /// L x p_l, integrals over the lag intervals, oldest lag first.
    pub int_l: DMatrix<f64>,
}

impl BasisSet {
    pub fn build(grid: &Grid, cfg: &BasisConfig) -> Result<Self> {
        grid.validate()?;
        let spec_x = BSplineSpec::clamped_uniform(grid.x_range.0, grid.x_range.1, cfg.px, cfg.spatial_degree)?;
        let spec_y = BSplineSpec::clamped_uniform(grid.y_range.0, grid.y_range.1, cfg.py, cfg.spatial_degree)?;
        let horizon = grid.horizon();
        if !(cfg.stimulus_onset < horizon) || cfg.stimulus_onset < 0.0 {
            return Err(Error::Invalid(format!(
                "stimulus onset {} must lie in [0, {horizon})",
                cfg.stimulus_onset
            )));
        }
        let spec_t = BSplineSpec::clamped_uniform(cfg.stimulus_onset, horizon, cfg.pt, cfg.temporal_degree)?;
        let spec_l = BSplineSpec::clamped_uniform(-grid.lag_window(), 0.0, cfg.pl, cfg.lag_degree)?;

        let phi_x = eval_bspline_basis(&spec_x, &grid.x_centers())?;
        let phi_y = eval_bspline_basis(&spec_y, &grid.y_centers())?;
        let phi_t = eval_supported(&spec_t, &grid.model_times())?;
        let int_x = integrate_bspline_basis(&spec_x, &grid.x_cells())?;
        let int_y = integrate_bspline_basis(&spec_y, &grid.y_cells())?;
        let int_l = integrate_bspline_basis(&spec_l, &grid.lag_intervals())?;
        Ok(Self { grid: grid.clone(), spec_x, spec_y, spec_t, spec_l, phi_x, phi_y, phi_t, int_x, int_y, int_l })
    }

    pub fn dims(&self) -> BasisDims {
        BasisDims {
            px: self.spec_x.n_basis(),
            py: self.spec_y.n_basis(),
            pt: self.spec_t.n_basis(),
            pl: self.spec_l.n_basis(),
        }
    }

    /// Temporal stimulus basis row; zero before the onset.
    pub fn temporal_row(&self, t: f64) -> Result<Vec<f64>> {
        let (onset, _) = self.spec_t.domain();
        if t < onset && !self.spec_t.contains(t) {
            return Ok(vec![0.0; self.spec_t.n_basis()]);
        }
        self.spec_t.eval_row(t)
    }

    /// Lag basis evaluated at the lag nodes t_l, L x p_l.
    pub fn phi_l_nodes(&self) -> Result<DMatrix<f64>> {
        eval_bspline_basis(&self.spec_l, &self.grid.lag_nodes())
    }
}

/// Rows for points before the spline domain are zero.
fn eval_supported(spec: &BSplineSpec, points: &[f64]) -> Result<DMatrix<f64>> {
    let (lo, _) = spec.domain();
    let mut m = DMatrix::zeros(points.len(), spec.n_basis());
    for (i, &t) in points.iter().enumerate() {
        if t < lo && !spec.contains(t) {
            continue;
        }
        let row = spec.eval_row(t)?;
        for (q, v) in row.into_iter().enumerate() {
            m[(i, q)] = v;
        }
    }
    Ok(m)
}

fn row_matrix(row: Vec<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, row.len(), &row)
}

/// s(x, y, t)
pub fn stimulus_value(coeffs: &DriftCoefficients, basis: &BasisSet, x: f64, y: f64, t: f64) -> Result<f64> {
    let alpha = coeffs.stimulus.assemble();
    let fx = row_matrix(basis.spec_x.eval_row(x)?);
    let fy = row_matrix(basis.spec_y.eval_row(y)?);
    let ft = row_matrix(basis.temporal_row(t)?);
    Ok(rho_chain(&[&fx, &fy, &ft], &alpha)?.data()[0])
}

/// w(x, y, x', y', r) with r in [-τ, 0].
pub fn network_value(
    coeffs: &DriftCoefficients,
    basis: &BasisSet,
    target: (f64, f64),
    source: (f64, f64),
    lag: f64,
) -> Result<f64> {
    let f1 = row_matrix(basis.spec_x.eval_row(target.0)?);
    let f2 = row_matrix(basis.spec_y.eval_row(target.1)?);
    let f3 = row_matrix(basis.spec_x.eval_row(source.0)?);
    let f4 = row_matrix(basis.spec_y.eval_row(source.1)?);
    let f5 = row_matrix(basis.spec_l.eval_row(lag)?);
    Ok(rho_chain(&[&f1, &f2, &f3, &f4, &f5], &coeffs.network)?.data()[0])
}

/// h(x, y)
pub fn memory_value(coeffs: &DriftCoefficients, basis: &BasisSet, x: f64, y: f64) -> Result<f64> {
    let fx = row_matrix(basis.spec_x.eval_row(x)?);
    let fy = row_matrix(basis.spec_y.eval_row(y)?);
    Ok(rho_chain(&[&fx, &fy], &coeffs.memory)?.data()[0])
}

/// Query point for [`eval_drift_functions`].
#[derive(Debug, Clone, Copy)]
pub enum DriftQuery {
    Stimulus { x: f64, y: f64, t: f64 },
    Network { target: (f64, f64), source: (f64, f64), lag: f64 },
    Memory { x: f64, y: f64 },
}

/// Evaluate the tensor-product expansions at a batch of query points.
pub fn eval_drift_functions(coeffs: &DriftCoefficients, basis: &BasisSet, queries: &[DriftQuery]) -> Result<Vec<f64>> {
    coeffs.check(&basis.dims())?;
    queries
        .iter()
        .map(|q| match *q {
            DriftQuery::Stimulus { x, y, t } => stimulus_value(coeffs, basis, x, y, t),
            DriftQuery::Network { target, source, lag } => network_value(coeffs, basis, target, source, lag),
            DriftQuery::Memory { x, y } => memory_value(coeffs, basis, x, y),
        })
        .collect()
}
