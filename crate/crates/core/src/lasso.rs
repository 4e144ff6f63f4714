//! Weighted lasso by monotone FISTA with backtracking.
//!
//! Minimizes `½ Σ_k ‖Ω^{1/2}(y - A θ)_k‖² + λ Σ_j w_j |θ_j|` for any linear
//! operator `A` that can be applied and transposed; the stacked design is
//! never materialized.

use serde::{Deserialize, Serialize};

use crate::design::{weighted_loss, weighted_residual, FrameWeight};
use crate::error::{Error, Result};

/// Matrix-free linear map from coefficients to stacked observations.
pub trait LinearOperator {
    fn n_coefs(&self) -> usize;
    fn n_obs(&self) -> usize;
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>>;
}

/// Dense operator, mostly for tests and small problems.
impl LinearOperator for nalgebra::DMatrix<f64> {
    fn n_coefs(&self) -> usize {
        self.ncols()
    }

    fn n_obs(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.ncols() {
            return Err(Error::Shape(format!("{} coefficients for {} columns", theta.len(), self.ncols())));
        }
        Ok((self * nalgebra::DVector::from_column_slice(theta)).data.into())
    }

    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.nrows() {
            return Err(Error::Shape(format!("{} residuals for {} rows", r.len(), self.nrows())));
        }
        Ok(self.tr_mul(&nalgebra::DVector::from_column_slice(r)).data.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoOptions {
    /// Relative objective change that triggers the optimality check.
    pub tol: f64,
    pub max_iter: usize,
    /// Allowed KKT violation, relative to λ.
    pub kkt_tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 5000, kkt_tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    /// Objective at the start and after every iteration; never increases.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Final step-size constant; a good start for a nearby problem.
    pub lipschitz: f64,
}

impl LassoFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace starts with the initial objective")
    }
}

/// One weighted lasso problem.
pub struct LassoProblem<'a, Op: LinearOperator + ?Sized> {
    pub op: &'a Op,
    pub response: &'a [f64],
    pub weight: Option<&'a FrameWeight>,
    /// Per-coefficient penalty weights; zero leaves a coefficient free.
    pub penalty: &'a [f64],
    pub lambda: f64,
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

impl<Op: LinearOperator + ?Sized> LassoProblem<'_, Op> {
    fn check(&self) -> Result<()> {
        if self.response.len() != self.op.n_obs() {
            return Err(Error::Shape(format!("response has {} entries, operator {}", self.response.len(), self.op.n_obs())));
        }
        if self.penalty.len() != self.op.n_coefs() {
            return Err(Error::Shape(format!("{} penalty weights for {} coefficients", self.penalty.len(), self.op.n_coefs())));
        }
        if let Some(w) = self.weight {
            if self.response.len() % w.dim() != 0 {
                return Err(Error::Shape("weight dimension does not divide the response".into()));
            }
        }
        if !(self.lambda >= 0.0) || self.penalty.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Invalid("λ and penalty weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn residual(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let fit = self.op.apply(theta)?;
        Ok(self.response.iter().zip(&fit).map(|(y, f)| y - f).collect())
    }

    pub fn penalty_value(&self, theta: &[f64]) -> f64 {
        self.lambda * theta.iter().zip(self.penalty).map(|(t, w)| w * t.abs()).sum::<f64>()
    }

    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        Ok(weighted_loss(&self.residual(theta)?, self.weight) + self.penalty_value(theta))
    }

    /// Gradient of the smooth part, `-Aᵀ Ω (y - A θ)`.
    pub fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let r = self.residual(theta)?;
        self.gradient_at_residual(&r)
    }

    fn gradient_at_residual(&self, r: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.op.adjoint(&weighted_residual(r, self.weight))?;
        g.iter_mut().for_each(|v| *v = -*v);
        Ok(g)
    }

    /// Largest KKT violation divided by λ (absolute when λ = 0).
    pub fn kkt_residual(&self, theta: &[f64]) -> Result<f64> {
        let g = self.gradient(theta)?;
        Ok(kkt_violation(&g, theta, self.penalty, self.lambda))
    }

    /// Smallest λ at which θ = 0 is optimal.
    pub fn lambda_max(&self) -> Result<f64> {
        let g = self.gradient_at_residual(self.response)?;
        Ok(lambda_max_from_gradient(&g, self.penalty))
    }

    /// Upper bound on the Lipschitz constant of the smooth gradient.
    pub fn lipschitz_estimate(&self) -> Result<f64> {
        operator_norm_sq(self.op, self.weight)
    }

    /// Solve from `start` (zeros when `None`).
    pub fn solve(&self, start: Option<&[f64]>, lipschitz: Option<f64>, opts: &LassoOptions) -> Result<LassoFit> {
        self.check()?;
        let n = self.op.n_coefs();
        let mut x: Vec<f64> = match start {
            Some(s) if s.len() == n => s.to_vec(),
            Some(s) => return Err(Error::Shape(format!("warm start has {} entries, expected {n}", s.len()))),
            None => vec![0.0; n],
        };
        let mut big_l = match lipschitz {
            Some(l) if l > 0.0 && l.is_finite() => l,
            _ => self.lipschitz_estimate()?,
        };
        let mut fx = self.objective(&x)?;
        if !fx.is_finite() {
            return Err(Error::SolverDiverged("non-finite objective at the starting point".into()));
        }
        let mut trace = vec![fx];
        if n == 0 {
            return Ok(LassoFit { coef: x, objective_trace: trace, iterations: 0, converged: true, kkt_residual: 0.0, lipschitz: big_l });
        }

        let mut y = x.clone();
        let mut t = 1.0f64;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        let mut iterations = 0;
        for it in 1..=opts.max_iter {
            iterations = it;
            let ry = self.residual(&y)?;
            let fy = weighted_loss(&ry, self.weight);
            let gy = self.gradient_at_residual(&ry)?;
            let (z, fz_smooth) = loop {
                let z: Vec<f64> = y
                    .iter()
                    .zip(&gy)
                    .zip(self.penalty)
                    .map(|((yi, gi), w)| soft_threshold(yi - gi / big_l, self.lambda * w / big_l))
                    .collect();
                let fz = weighted_loss(&self.residual(&z)?, self.weight);
                let (mut lin, mut quad) = (0.0, 0.0);
                for i in 0..n {
                    let d = z[i] - y[i];
                    lin += gy[i] * d;
                    quad += d * d;
                }
                if !fz.is_finite() {
                    return Err(Error::SolverDiverged(format!("non-finite loss at iteration {it}")));
                }
                if fz <= fy + lin + 0.5 * big_l * quad + 1e-12 * fy.abs() {
                    break (z, fz);
                }
                big_l *= 2.0;
                if !big_l.is_finite() {
                    return Err(Error::SolverDiverged("step size underflow in backtracking".into()));
                }
            };
            let fz = fz_smooth + self.penalty_value(&z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let accepted = fz <= fx;
            let x_prev = std::mem::take(&mut x);
            x = if accepted { z.clone() } else { x_prev.clone() };
            for i in 0..n {
                y[i] = x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
            }
            t = t_next;
            let f_prev = fx;
            if accepted {
                fx = fz;
            }
            trace.push(fx);
            if !accepted {
                continue;
            }
            let rel = (f_prev - fx) / fx.abs().max(f64::MIN_POSITIVE);
            if rel < opts.tol {
                kkt = self.kkt_residual(&x)?;
                let optimal = if self.lambda > 0.0 { kkt <= opts.kkt_tol } else { true };
                if optimal {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            kkt = self.kkt_residual(&x)?;
        }
        Ok(LassoFit { coef: x, objective_trace: trace, iterations, converged, kkt_residual: kkt, lipschitz: big_l })
    }
}

/// Slight over-estimate of the largest eigenvalue of `Aᵀ Ω A` by power
/// iteration.
pub fn operator_norm_sq<Op: LinearOperator + ?Sized>(op: &Op, weight: Option<&FrameWeight>) -> Result<f64> {
    let n = op.n_coefs();
    if n == 0 {
        return Ok(1.0);
    }
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut est = 0.0;
    for _ in 0..30 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let av = op.apply(&v)?;
        v = op.adjoint(&weighted_residual(&av, weight))?;
        est = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    // power iteration approaches from below
    Ok((1.05 * est).max(1e-12))
}

/// Largest subgradient-optimality violation of θ divided by λ.
pub fn kkt_violation(grad: &[f64], theta: &[f64], penalty: &[f64], lambda: f64) -> f64 {
    let scale = if lambda > 0.0 { lambda } else { 1.0 };
    grad.iter()
        .zip(theta)
        .zip(penalty)
        .map(|((g, t), w)| {
            let bound = lambda * w;
            if *t != 0.0 {
                (g + bound * t.signum()).abs()
            } else {
                (g.abs() - bound).max(0.0)
            }
        })
        .fold(0.0f64, f64::max)
        / scale
}

/// `max_j |g_j| / w_j` over penalized coefficients.
pub fn lambda_max_from_gradient(grad: &[f64], penalty: &[f64]) -> f64 {
    grad.iter()
        .zip(penalty)
        .filter(|(_, w)| **w > 0.0)
        .map(|(g, w)| g.abs() / w)
        .fold(0.0, f64::max)
}
