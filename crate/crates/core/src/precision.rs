//! Sparse precision estimation by the graphical lasso.
//!
//! Minimizes `tr(S Ω) - log det Ω + ν Σ_{i≠j} |Ω_ij|` by block coordinate
//! descent on the dual (covariance) variable, one row/column at a time.
//! The diagonal is not penalized.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::soft_threshold;
use crate::noise::symmetrize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlassoOptions {
    /// Stop once the duality gap falls below this...
    pub tol: f64,
    /// ...and the stationarity residual (see [`glasso_kkt`]) below this.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
    /// Convergence of the inner lasso coordinate descent.
    pub inner_tol: f64,
    pub max_inner: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self { tol: 1e-6, kkt_tol: 1e-6, max_sweeps: 500, inner_tol: 1e-12, max_inner: 10_000 }
    }
}

#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub omega: DMatrix<f64>,
    /// Covariance estimate, the dual variable.
    pub sigma: DMatrix<f64>,
    pub converged: bool,
    pub duality_gap: f64,
    pub sweeps: usize,
    /// Primal objective after each sweep.
    pub objective_trace: Vec<f64>,
    /// Ridge added to the diagonal of S before fitting.
    pub ridge: f64,
}

impl PrecisionEstimate {
    /// Non-zero off-diagonal entries, each pair counted once.
    pub fn edges(&self) -> usize {
        let n = self.omega.nrows();
        (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).filter(|&(i, j)| self.omega[(i, j)] != 0.0).count()
    }
}

/// `tr(S Ω) - log det Ω + ν ‖Ω‖_{1,off}`; infinite when Ω is not positive
/// definite.
pub fn glasso_objective(s: &DMatrix<f64>, omega: &DMatrix<f64>, nu: f64) -> f64 {
    let Some(ch) = omega.clone().cholesky() else {
        return f64::INFINITY;
    };
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    (s.component_mul(omega)).sum() - logdet + nu * off_diagonal_l1(omega)
}

fn off_diagonal_l1(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                total += m[(i, j)].abs();
            }
        }
    }
    total
}

/// Largest violation of the stationarity conditions
/// `S - Ω⁻¹ + ν Γ = 0`, `Γ ∈ ∂‖Ω‖_{1,off}`.
pub fn glasso_kkt(s: &DMatrix<f64>, omega: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let inv = omega.clone().try_inverse().ok_or_else(|| Error::InvalidCovariance("precision matrix is singular".into()))?;
    let n = s.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            let g = s[(i, j)] - inv[(i, j)];
            let v = if i == j {
                g.abs()
            } else if omega[(i, j)] != 0.0 {
                (g + nu * omega[(i, j)].signum()).abs()
            } else {
                (g.abs() - nu).max(0.0)
            };
            worst = worst.max(v);
        }
    }
    Ok(worst)
}

fn check_covariance(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(Error::Shape("covariance must be a non-empty square matrix".into()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite entries".into()));
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Shape("covariance must be symmetric".into()));
    }
    Ok(())
}

/// Graphical lasso with off-diagonal penalty `nu`.
///
/// A singular `s` is repaired with the smallest ridge that makes its
/// smallest eigenvalue at least `1e-8 tr(S) / D`.
pub fn graphical_lasso(s: &DMatrix<f64>, nu: f64, opts: &GlassoOptions) -> Result<PrecisionEstimate> {
    check_covariance(s)?;
    if !(nu >= 0.0) {
        return Err(Error::Invalid("ν must be non-negative".into()));
    }
    let n = s.nrows();
    let mut s = s.clone();
    symmetrize(&mut s);
    let min_eig = SymmetricEigen::new(s.clone()).eigenvalues.min();
    let floor = 1e-8 * s.trace() / n as f64;
    if !(floor > 0.0) {
        return Err(Error::InvalidCovariance("trace must be positive".into()));
    }
    let ridge = (floor - min_eig).max(0.0);
    for i in 0..n {
        s[(i, i)] += ridge;
    }

    let mut w = s.clone();
    // column j holds the regression coefficients of variable j on the rest
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut omega = s.clone().try_inverse().ok_or_else(|| Error::InvalidCovariance("singular after ridge repair".into()))?;
    let mut trace = Vec::new();
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;
    if n == 1 {
        omega[(0, 0)] = 1.0 / s[(0, 0)];
        return Ok(PrecisionEstimate {
            objective_trace: vec![glasso_objective(&s, &omega, nu)],
            omega,
            sigma: w,
            converged: true,
            duality_gap: 0.0,
            sweeps: 0,
            ridge,
        });
    }
    for sweep in 1..=opts.max_sweeps {
        sweeps = sweep;
        for j in 0..n {
            update_column(&mut w, &mut b, &s, j, nu, opts);
        }
        omega = precision_from(&w, &b);
        let primal = glasso_objective(&s, &omega, nu);
        trace.push(primal);
        let dual = match w.clone().cholesky() {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() + n as f64,
            None => f64::NEG_INFINITY,
        };
        gap = primal - dual;
        if !gap.is_finite() && sweep > 5 {
            return Err(Error::SolverDiverged(format!("graphical lasso lost positive definiteness at sweep {sweep}")));
        }
        // a small gap can still leave single entries off by far more
        if gap <= opts.tol && glasso_kkt(&s, &omega, nu).is_ok_and(|k| k <= opts.kkt_tol) {
            converged = true;
            break;
        }
    }
    Ok(PrecisionEstimate { omega, sigma: w, converged, duality_gap: gap, sweeps, objective_trace: trace, ridge })
}

/// Lasso coordinate descent for column `j`: minimize
/// `½ βᵀ W₁₁ β - βᵀ s₁₂ + ν ‖β‖₁`, then set `w₁₂ = W₁₁ β`.
fn update_column(w: &mut DMatrix<f64>, b: &mut DMatrix<f64>, s: &DMatrix<f64>, j: usize, nu: f64, opts: &GlassoOptions) {
    let n = w.nrows();
    let rest: Vec<usize> = (0..n).filter(|&i| i != j).collect();
    let mut beta: Vec<f64> = rest.iter().map(|&i| b[(i, j)]).collect();
    // wb = W₁₁ β, kept up to date
    let mut wb: Vec<f64> = rest.iter().map(|&r| rest.iter().zip(&beta).map(|(&c, bc)| w[(r, c)] * bc).sum()).collect();
    for _ in 0..opts.max_inner {
        let mut delta = 0.0f64;
        for (a, &ia) in rest.iter().enumerate() {
            let waa = w[(ia, ia)];
            let partial = s[(ia, j)] - (wb[a] - waa * beta[a]);
            let new = soft_threshold(partial, nu) / waa;
            let d = new - beta[a];
            if d != 0.0 {
                for (c, &ic) in rest.iter().enumerate() {
                    wb[c] += w[(ic, ia)] * d;
                }
                beta[a] = new;
                delta = delta.max(d.abs());
            }
        }
        if delta < opts.inner_tol {
            break;
        }
    }
    for (a, &ia) in rest.iter().enumerate() {
        b[(ia, j)] = beta[a];
        w[(ia, j)] = wb[a];
        w[(j, ia)] = wb[a];
    }
}

fn precision_from(w: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut omega = DMatrix::zeros(n, n);
    for j in 0..n {
        let wb: f64 = (0..n).filter(|&i| i != j).map(|i| w[(i, j)] * b[(i, j)]).sum();
        let ojj = 1.0 / (w[(j, j)] - wb);
        omega[(j, j)] = ojj;
        for i in (0..n).filter(|&i| i != j) {
            omega[(i, j)] = -b[(i, j)] * ojj;
        }
    }
    symmetrize(&mut omega);
    omega
}
