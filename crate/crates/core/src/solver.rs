//! Penalized fit of the drift coefficients by block relaxation.
//!
//! The stimulus is fitted as a rank-one array `alpha = zeta ⊗ eta` by
//! alternating two lasso problems; network and memory coefficients are plain
//! weighted lasso blocks. Blocks are updated Gauss–Seidel style on partial
//! residuals, and a decreasing λ sequence is traced with warm starts.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::coeffs::{BasisDims, DriftCoefficients, Stimulus};
use crate::design::{weighted_loss, weighted_residual, FrameWeight, ImplicitDesign};
use crate::error::{Error, Result};
use crate::lasso::{kkt_violation, lambda_max_from_gradient, operator_norm_sq, LassoFit, LassoOptions, LassoProblem, LinearOperator};
use crate::rho::{rho_chain, rho_transposed_chain};
use crate::tensor::TensorD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_inner: f64,
    pub max_inner: usize,
    pub kkt_tol: f64,
    pub tol_rr: f64,
    pub max_rr: usize,
    pub tol_outer: f64,
    pub max_sweeps: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Fit every λ from zero in parallel instead of warm-starting.
    pub parallel_path: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_inner: 1e-7,
            max_inner: 5000,
            kkt_tol: 1e-4,
            tol_rr: 1e-6,
            max_rr: 50,
            tol_outer: 1e-5,
            max_sweeps: 20,
            n_lambda: 10,
            lambda_min_ratio: 1e-3,
            parallel_path: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.tol_inner, self.kkt_tol, self.tol_rr, self.tol_outer];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Invalid("solver tolerances must be positive".into()));
        }
        if self.max_inner == 0 || self.max_rr == 0 || self.max_sweeps == 0 || self.n_lambda == 0 {
            return Err(Error::Invalid("iteration limits and path length must be positive".into()));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio <= 1.0) {
            return Err(Error::Invalid("lambda_min_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn lasso(&self) -> LassoOptions {
        LassoOptions { tol: self.tol_inner, max_iter: self.max_inner, kkt_tol: self.kkt_tol }
    }
}

/// Per-coefficient penalty weights, shaped like the coefficient arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub stimulus: TensorD,
    pub network: TensorD,
    pub memory: TensorD,
}

impl PenaltyWeights {
    pub fn uniform(dims: &BasisDims) -> Self {
        Self {
            stimulus: TensorD::filled(&dims.stimulus_shape(), 1.0),
            network: TensorD::filled(&dims.network_shape(), 1.0),
            memory: TensorD::filled(&dims.memory_shape(), 1.0),
        }
    }

    /// Multiply the weight of every stimulus coefficient whose temporal
    /// basis function overlaps `[e, e + window]` for some event time `e`.
    pub fn downweight_after_events(&mut self, basis: &BasisSet, events: &[f64], window: f64, factor: f64) -> Result<()> {
        if !(factor >= 0.0) || !(window >= 0.0) {
            return Err(Error::Invalid("down-weight factor and window must be non-negative".into()));
        }
        let knots = basis.spec_t.knots();
        let k = basis.spec_t.degree();
        let [px, py, pt] = basis.dims().stimulus_shape();
        for q in 0..pt {
            let (lo, hi) = (knots[q], knots[q + k + 1]);
            if events.iter().any(|&e| lo < e + window && e < hi) {
                for j in 0..py {
                    for i in 0..px {
                        let idx = i + px * (j + py * q);
                        self.stimulus.data_mut()[idx] *= factor;
                    }
                }
            }
        }
        Ok(())
    }

    fn check(&self, dims: &BasisDims) -> Result<()> {
        let ok = self.stimulus.shape() == dims.stimulus_shape()
            && self.network.shape() == dims.network_shape()
            && self.memory.shape() == dims.memory_shape();
        if !ok {
            return Err(Error::Shape("penalty weights do not match the basis dimensions".into()));
        }
        if [&self.stimulus, &self.network, &self.memory].iter().any(|t| t.data().iter().any(|w| !(*w >= 0.0))) {
            return Err(Error::Invalid("penalty weights must be non-negative".into()));
        }
        Ok(())
    }

    fn stimulus_value(&self, zeta: &[f64], eta: &TensorD) -> f64 {
        let pxy = eta.len();
        let w = self.stimulus.data();
        let mut total = 0.0;
        for (q, z) in zeta.iter().enumerate() {
            if *z == 0.0 {
                continue;
            }
            for (c, e) in eta.data().iter().enumerate() {
                total += w[c + pxy * q] * (z * e).abs();
            }
        }
        total
    }

    fn value(&self, coeffs: &DriftCoefficients) -> f64 {
        let l1 = |w: &TensorD, t: &TensorD| w.data().iter().zip(t.data()).map(|(w, t)| w * t.abs()).sum::<f64>();
        let stim = match &coeffs.stimulus {
            Stimulus::RankOne { temporal, spatial } => self.stimulus_value(temporal, spatial),
            Stimulus::Full(a) => l1(&self.stimulus, a),
        };
        stim + l1(&self.network, &coeffs.network) + l1(&self.memory, &coeffs.memory)
    }
}

struct NetworkOp<'a>(&'a ImplicitDesign);
struct MemoryOp<'a>(&'a ImplicitDesign);
struct SpatialOp<'a>(&'a ImplicitDesign, &'a [f64]);
struct TemporalOp<'a>(&'a ImplicitDesign, &'a TensorD);
/// `eta -> vec(phi_x eta phi_yᵀ)`, a single frame.
struct PatternOp<'a>(&'a BasisSet);

fn frame_tensor(design: &ImplicitDesign, r: &[f64]) -> Result<TensorD> {
    TensorD::new(design.frame_shape().to_vec(), r.to_vec())
}

impl LinearOperator for NetworkOp<'_> {
    fn n_coefs(&self) -> usize {
        self.0.dims().n_network()
    }
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let beta = TensorD::new(self.0.dims().network_shape().to_vec(), theta.to_vec())?;
        Ok(self.0.network_forward(&beta)?.into_data())
    }
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.network_adjoint(&frame_tensor(self.0, r)?)?.into_data())
    }
}

impl LinearOperator for MemoryOp<'_> {
    fn n_coefs(&self) -> usize {
        self.0.dims().n_memory()
    }
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let gamma = TensorD::new(self.0.dims().memory_shape().to_vec(), theta.to_vec())?;
        Ok(self.0.memory_forward(&gamma)?.into_data())
    }
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.memory_adjoint(&frame_tensor(self.0, r)?)?.into_data())
    }
}

impl LinearOperator for SpatialOp<'_> {
    fn n_coefs(&self) -> usize {
        self.0.dims().n_memory()
    }
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let eta = TensorD::new(self.0.dims().memory_shape().to_vec(), theta.to_vec())?;
        Ok(self.0.spatial_forward(self.1, &eta)?.into_data())
    }
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.spatial_adjoint(self.1, &frame_tensor(self.0, r)?)?.into_data())
    }
}

impl LinearOperator for TemporalOp<'_> {
    fn n_coefs(&self) -> usize {
        self.0.dims().pt
    }
    fn n_obs(&self) -> usize {
        self.0.n_obs()
    }
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.temporal_forward(self.1, theta)?.into_data())
    }
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.0.temporal_adjoint(self.1, &frame_tensor(self.0, r)?)
    }
}

impl LinearOperator for PatternOp<'_> {
    fn n_coefs(&self) -> usize {
        self.0.dims().n_memory()
    }
    fn n_obs(&self) -> usize {
        self.0.grid.n_pixels()
    }
    fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.0.dims();
        let eta = TensorD::new(vec![d.px, d.py], theta.to_vec())?;
        Ok(rho_chain(&[&self.0.phi_x, &self.0.phi_y], &eta)?.into_data())
    }
    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        let g = &self.0.grid;
        let frame = TensorD::new(vec![g.nx, g.ny], r.to_vec())?;
        Ok(rho_transposed_chain(&[&self.0.phi_x, &self.0.phi_y], &frame)?.into_data())
    }
}

/// Step-size constants that stay fixed for a given design and weight.
#[derive(Debug, Clone, Copy)]
struct Lipschitz {
    network: f64,
    memory: f64,
    /// largest eigenvalue of Φᵀ Ω Φ for the spatial pattern map Φ
    pattern: f64,
    /// largest squared singular value of the scaled temporal basis
    temporal: f64,
}

impl Lipschitz {
    fn new(design: &ImplicitDesign, weight: Option<&FrameWeight>) -> Result<Self> {
        let network = operator_norm_sq(&NetworkOp(design), weight)?;
        let memory = operator_norm_sq(&MemoryOp(design), weight)?;
        let pattern = operator_norm_sq(&PatternOp(&design.basis), weight)?;
        let sv = design.stim_t.clone().svd(false, false).singular_values;
        let temporal = sv.iter().fold(0.0f64, |m, v| m.max(*v)).powi(2);
        Ok(Self { network, memory, pattern, temporal })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stimulus_spatial: f64,
    pub stimulus_temporal: f64,
    pub network: f64,
    pub memory: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stimulus_spatial.max(self.stimulus_temporal).max(self.network).max(self.memory)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonzeroCounts {
    pub stimulus_temporal: usize,
    pub stimulus_spatial: usize,
    pub network: usize,
    pub memory: usize,
}

#[derive(Debug, Clone)]
pub struct LambdaFit {
    pub lambda: f64,
    /// Stimulus is always [`Stimulus::RankOne`].
    pub coefficients: DriftCoefficients,
    /// Full objective at the start and after every block update.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub inner_iterations: usize,
    /// The rank-one stimulus fit shrank to zero.
    pub stimulus_collapsed: bool,
    pub kkt: KktReport,
    pub nonzeros: NonzeroCounts,
}

impl LambdaFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct PathFit {
    pub lambda_max: f64,
    pub lambdas: Vec<f64>,
    pub fits: Vec<LambdaFit>,
}

/// Smallest λ at which every penalized coefficient is zero at the optimum.
///
/// With unpenalized (zero-weight) coefficients present, the gradient is
/// taken at the fit of those coefficients alone rather than at zero.
pub fn lambda_max(design: &ImplicitDesign, penalty: &PenaltyWeights, weight: Option<&FrameWeight>) -> Result<f64> {
    penalty.check(&design.dims())?;
    check_weight(design, weight)?;
    let has_free = [&penalty.stimulus, &penalty.network, &penalty.memory].iter().any(|t| t.data().iter().any(|w| *w == 0.0));
    let residual = if has_free {
        // tight: an inexact free fit leaks into the gradient
        let cfg = SolverConfig { tol_inner: 1e-13, kkt_tol: 1e-9, tol_outer: 1e-13, max_inner: 50_000, ..SolverConfig::default() };
        let lips = Lipschitz::new(design, weight)?;
        // any penalized coefficient is thresholded to zero at this level
        let ctx = Ctx { design, penalty, weight, lambda: 1e300, cfg: &cfg, lips };
        let free = ctx.fit(&zero_coefficients(&design.dims()))?;
        residuals(design, &free.coefficients)?.into_data()
    } else {
        design.response.data().to_vec()
    };
    let wy = TensorD::new(design.frame_shape().to_vec(), weighted_residual(&residual, weight))?;
    let gs = design.stimulus_adjoint(&wy)?;
    let gn = design.network_adjoint(&wy)?;
    let gm = design.memory_adjoint(&wy)?;
    Ok(lambda_max_from_gradient(gs.data(), penalty.stimulus.data())
        .max(lambda_max_from_gradient(gn.data(), penalty.network.data()))
        .max(lambda_max_from_gradient(gm.data(), penalty.memory.data())))
}

/// Log-spaced sequence from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_sequence(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    (0..n).map(|k| lambda_max * ratio.powf(k as f64 / (n - 1) as f64)).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// Rank-one stimulus fit against the partial response `target`.
/// Result of the reduced-rank stimulus subproblem.
#[derive(Debug, Clone)]
pub struct StimulusFit {
    pub zeta: Vec<f64>,
    pub eta: TensorD,
    /// Inner lasso iterations over all alternations.
    pub iterations: usize,
    /// Shrunk to zero.
    pub collapsed: bool,
}

struct Ctx<'a> {
    design: &'a ImplicitDesign,
    penalty: &'a PenaltyWeights,
    weight: Option<&'a FrameWeight>,
    lambda: f64,
    cfg: &'a SolverConfig,
    lips: Lipschitz,
}

impl Ctx<'_> {
    fn spatial_weights(&self, zeta: &[f64]) -> Vec<f64> {
        let pxy = self.design.dims().n_memory();
        let w = self.penalty.stimulus.data();
        (0..pxy).map(|c| zeta.iter().enumerate().map(|(q, z)| w[c + pxy * q] * z.abs()).sum()).collect()
    }

    fn temporal_weights(&self, eta: &TensorD) -> Vec<f64> {
        let pxy = eta.len();
        let w = self.penalty.stimulus.data();
        (0..self.design.dims().pt)
            .map(|q| eta.data().iter().enumerate().map(|(c, e)| w[c + pxy * q] * e.abs()).sum())
            .collect()
    }

    fn spatial_step(&self, target: &[f64], zeta: &[f64], eta: &TensorD) -> Result<LassoFit> {
        let pen = self.spatial_weights(zeta);
        let u_norm = (&self.design.stim_t * nalgebra::DVector::from_column_slice(zeta)).norm_squared();
        let op = SpatialOp(self.design, zeta);
        let prob = LassoProblem { op: &op, response: target, weight: self.weight, penalty: &pen, lambda: self.lambda };
        prob.solve(Some(eta.data()), Some(u_norm * self.lips.pattern), &self.cfg.lasso())
    }

    fn temporal_step(&self, target: &[f64], zeta: &[f64], eta: &TensorD) -> Result<LassoFit> {
        let pen = self.temporal_weights(eta);
        let pattern = PatternOp(&self.design.basis).apply(eta.data())?;
        let p_norm: f64 = pattern.iter().zip(weighted_residual(&pattern, self.weight)).map(|(a, b)| a * b).sum();
        let op = TemporalOp(self.design, eta);
        let prob = LassoProblem { op: &op, response: target, weight: self.weight, penalty: &pen, lambda: self.lambda };
        prob.solve(Some(zeta), Some(1.05 * p_norm * self.lips.temporal), &self.cfg.lasso())
    }

    fn stimulus_objective(&self, target: &[f64], zeta: &[f64], eta: &TensorD) -> Result<f64> {
        let pred = self.design.spatial_forward(zeta, eta)?;
        Ok(weighted_loss(&sub(target, pred.data()), self.weight) + self.lambda * self.penalty.stimulus_value(zeta, eta))
    }

    /// Leading right singular vector of the stimulus gradient at zero,
    /// arranged as a `(px py) x pt` matrix.
    fn initial_temporal(&self, target: &[f64]) -> Result<Option<Vec<f64>>> {
        let wr = TensorD::new(self.design.frame_shape().to_vec(), weighted_residual(target, self.weight))?;
        let g = self.design.stimulus_adjoint(&wr)?;
        if g.max_abs() == 0.0 {
            return Ok(None);
        }
        let m = g.as_matrix(2).into_owned();
        let gram = m.tr_mul(&m);
        let mut v = nalgebra::DVector::from_fn(gram.nrows(), |i, _| 1.0 + 0.01 * i as f64);
        for _ in 0..200 {
            let next = &gram * &v;
            let n = next.norm();
            if n == 0.0 {
                return Ok(None);
            }
            v = next / n;
        }
        Ok(Some(v.data.into()))
    }

    /// Unit temporal vector at the time index of the largest weighted
    /// stimulus gradient entry.
    fn initial_coordinate(&self, target: &[f64]) -> Result<Option<Vec<f64>>> {
        let wr = TensorD::new(self.design.frame_shape().to_vec(), weighted_residual(target, self.weight))?;
        let g = self.design.stimulus_adjoint(&wr)?;
        let pxy = self.design.dims().n_memory();
        let best = g
            .data()
            .iter()
            .zip(self.penalty.stimulus.data())
            .enumerate()
            .filter(|(_, (v, _))| **v != 0.0)
            .map(|(i, (v, w))| (i, if *w == 0.0 { f64::INFINITY } else { v.abs() / w }))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        Ok(best.map(|(i, _)| {
            let mut z = vec![0.0; self.design.dims().pt];
            z[i / pxy] = 1.0;
            z
        }))
    }

    fn fit_stimulus(&self, target: &[f64], zeta: &[f64], eta: &TensorD) -> Result<StimulusFit> {
        let dims = self.design.dims();
        let zero = || StimulusFit {
            zeta: vec![0.0; dims.pt],
            eta: TensorD::zeros(&dims.memory_shape()),
            iterations: 0,
            collapsed: true,
        };
        let from_zero = is_zero(zeta) || is_zero(eta.data());
        let (mut zeta, mut eta) = if from_zero {
            match self.initial_temporal(target)? {
                Some(z) => (z, TensorD::zeros(&dims.memory_shape())),
                None => return Ok(zero()),
            }
        } else {
            (zeta.to_vec(), eta.clone())
        };
        let mut iterations = 0;
        if from_zero {
            // the singular direction can stay at zero below λ_max; a unit
            // vector on the largest weighted gradient entry cannot
            let fit = self.spatial_step(target, &zeta, &eta)?;
            iterations += fit.iterations;
            if is_zero(&fit.coef) {
                zeta = match self.initial_coordinate(target)? {
                    Some(z) => z,
                    None => return Ok(StimulusFit { iterations, ..zero() }),
                };
            } else {
                eta = TensorD::new(dims.memory_shape().to_vec(), fit.coef)?;
            }
        }
        let mut prev = self.stimulus_objective(target, &zeta, &eta)?;
        for _ in 0..self.cfg.max_rr {
            let fit = self.spatial_step(target, &zeta, &eta)?;
            iterations += fit.iterations;
            eta = TensorD::new(dims.memory_shape().to_vec(), fit.coef)?;
            if is_zero(eta.data()) {
                return Ok(StimulusFit { iterations, ..zero() });
            }
            let fit = self.temporal_step(target, &zeta, &eta)?;
            iterations += fit.iterations;
            let obj = fit.objective();
            zeta = fit.coef;
            if is_zero(&zeta) {
                return Ok(StimulusFit { iterations, ..zero() });
            }
            // balance the factor norms; the product is unchanged
            let nz = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ne = eta.norm_sq().sqrt();
            let c = (ne / nz).sqrt();
            zeta.iter_mut().for_each(|v| *v *= c);
            eta.scale(1.0 / c);
            let rel = (prev - obj) / obj.abs().max(f64::MIN_POSITIVE);
            prev = obj;
            if rel < self.cfg.tol_rr {
                break;
            }
        }
        Ok(StimulusFit { zeta, eta, iterations, collapsed: false })
    }

    fn block_lasso<Op: LinearOperator>(&self, op: &Op, target: &[f64], pen: &TensorD, warm: &TensorD, lips: f64) -> Result<LassoFit> {
        let prob = LassoProblem { op, response: target, weight: self.weight, penalty: pen.data(), lambda: self.lambda };
        prob.solve(Some(warm.data()), Some(lips), &self.cfg.lasso())
    }

    fn full_objective(&self, coeffs: &DriftCoefficients, preds: &[&TensorD; 3]) -> f64 {
        let y = self.design.response.data();
        let r: Vec<f64> = (0..y.len()).map(|i| y[i] - preds[0].data()[i] - preds[1].data()[i] - preds[2].data()[i]).collect();
        weighted_loss(&r, self.weight) + self.lambda * self.penalty.value(coeffs)
    }

    fn kkt(&self, coeffs: &DriftCoefficients) -> Result<KktReport> {
        let (zeta, eta) = match &coeffs.stimulus {
            Stimulus::RankOne { temporal, spatial } => (temporal.as_slice(), spatial),
            Stimulus::Full(_) => return Err(Error::Invalid("expected a rank-one stimulus".into())),
        };
        let pred = crate::design::linear_predictor(coeffs, self.design)?;
        let r = sub(self.design.response.data(), pred.data());
        let wr = weighted_residual(&r, self.weight);
        let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
        let g_net = neg(NetworkOp(self.design).adjoint(&wr)?);
        let g_mem = neg(MemoryOp(self.design).adjoint(&wr)?);
        let mut report = KktReport {
            network: kkt_violation(&g_net, coeffs.network.data(), self.penalty.network.data(), self.lambda),
            memory: kkt_violation(&g_mem, coeffs.memory.data(), self.penalty.memory.data(), self.lambda),
            ..Default::default()
        };
        if !is_zero(zeta) && !is_zero(eta.data()) {
            let g_sp = neg(SpatialOp(self.design, zeta).adjoint(&wr)?);
            let g_tm = neg(TemporalOp(self.design, eta).adjoint(&wr)?);
            report.stimulus_spatial = kkt_violation(&g_sp, eta.data(), &self.spatial_weights(zeta), self.lambda);
            report.stimulus_temporal = kkt_violation(&g_tm, zeta, &self.temporal_weights(eta), self.lambda);
        }
        Ok(report)
    }

    fn fit(&self, warm: &DriftCoefficients) -> Result<LambdaFit> {
        let design = self.design;
        let dims = design.dims();
        warm.check(&dims)?;
        let (mut zeta, mut eta) = match &warm.stimulus {
            Stimulus::RankOne { temporal, spatial } => (temporal.clone(), spatial.clone()),
            Stimulus::Full(_) => return Err(Error::Invalid("warm start must carry a rank-one stimulus".into())),
        };
        let mut beta = warm.network.clone();
        let mut gamma = warm.memory.clone();
        let mut p_s = design.spatial_forward(&zeta, &eta)?;
        let mut p_n = design.network_forward(&beta)?;
        let mut p_m = design.memory_forward(&gamma)?;
        let y = design.response.data();
        let assemble = |z: &[f64], e: &TensorD, b: &TensorD, g: &TensorD| DriftCoefficients {
            stimulus: Stimulus::RankOne { temporal: z.to_vec(), spatial: e.clone() },
            network: b.clone(),
            memory: g.clone(),
        };
        let mut trace = vec![self.full_objective(&assemble(&zeta, &eta, &beta, &gamma), &[&p_s, &p_n, &p_m])];
        let mut inner = 0;
        let mut collapsed = false;
        let mut converged = false;
        let mut sweeps = 0;
        for sweep in 1..=self.cfg.max_sweeps {
            sweeps = sweep;
            let start = *trace.last().unwrap();

            let target: Vec<f64> = (0..y.len()).map(|i| y[i] - p_n.data()[i] - p_m.data()[i]).collect();
            let sf = self.fit_stimulus(&target, &zeta, &eta)?;
            inner += sf.iterations;
            collapsed = sf.collapsed;
            zeta = sf.zeta;
            eta = sf.eta;
            p_s = design.spatial_forward(&zeta, &eta)?;
            trace.push(self.full_objective(&assemble(&zeta, &eta, &beta, &gamma), &[&p_s, &p_n, &p_m]));

            let target: Vec<f64> = (0..y.len()).map(|i| y[i] - p_s.data()[i] - p_m.data()[i]).collect();
            let fit = self.block_lasso(&NetworkOp(design), &target, &self.penalty.network, &beta, self.lips.network)?;
            inner += fit.iterations;
            beta = TensorD::new(dims.network_shape().to_vec(), fit.coef)?;
            p_n = design.network_forward(&beta)?;
            trace.push(self.full_objective(&assemble(&zeta, &eta, &beta, &gamma), &[&p_s, &p_n, &p_m]));

            let target: Vec<f64> = (0..y.len()).map(|i| y[i] - p_s.data()[i] - p_n.data()[i]).collect();
            let fit = self.block_lasso(&MemoryOp(design), &target, &self.penalty.memory, &gamma, self.lips.memory)?;
            inner += fit.iterations;
            gamma = TensorD::new(dims.memory_shape().to_vec(), fit.coef)?;
            p_m = design.memory_forward(&gamma)?;
            let end = self.full_objective(&assemble(&zeta, &eta, &beta, &gamma), &[&p_s, &p_n, &p_m]);
            trace.push(end);

            if !end.is_finite() {
                return Err(Error::SolverDiverged(format!("non-finite objective in sweep {sweep}")));
            }
            // a stalled objective alone can hide a block that is still off
            // its optimum given the others
            if (start - end) / end.abs().max(f64::MIN_POSITIVE) < self.cfg.tol_outer
                && (self.lambda == 0.0 || self.kkt(&assemble(&zeta, &eta, &beta, &gamma))?.max() <= self.cfg.kkt_tol)
            {
                converged = true;
                break;
            }
        }
        let coefficients = assemble(&zeta, &eta, &beta, &gamma);
        let kkt = self.kkt(&coefficients)?;
        let nonzeros = NonzeroCounts {
            stimulus_temporal: zeta.iter().filter(|v| **v != 0.0).count(),
            stimulus_spatial: eta.count_nonzero(),
            network: beta.count_nonzero(),
            memory: gamma.count_nonzero(),
        };
        Ok(LambdaFit {
            lambda: self.lambda,
            coefficients,
            objective_trace: trace,
            sweeps,
            converged,
            inner_iterations: inner,
            stimulus_collapsed: collapsed,
            kkt,
            nonzeros,
        })
    }
}

/// Zero coefficients with a rank-one stimulus.
pub fn zero_coefficients(dims: &BasisDims) -> DriftCoefficients {
    DriftCoefficients {
        stimulus: Stimulus::RankOne { temporal: vec![0.0; dims.pt], spatial: TensorD::zeros(&dims.memory_shape()) },
        network: TensorD::zeros(&dims.network_shape()),
        memory: TensorD::zeros(&dims.memory_shape()),
    }
}

/// Rank-one stimulus fit `zeta ⊗ eta` to `target` (an N_x x N_y x M
/// array), starting from `warm` or from zero.
pub fn fit_reduced_rank_stimulus(
    design: &ImplicitDesign,
    target: &TensorD,
    penalty: &PenaltyWeights,
    weight: Option<&FrameWeight>,
    lambda: f64,
    warm: Option<(&[f64], &TensorD)>,
    cfg: &SolverConfig,
) -> Result<StimulusFit> {
    cfg.validate()?;
    penalty.check(&design.dims())?;
    check_weight(design, weight)?;
    if target.shape() != design.frame_shape() {
        return Err(Error::Shape(format!("target is {:?}, design frames are {:?}", target.shape(), design.frame_shape())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("λ must be non-negative".into()));
    }
    let dims = design.dims();
    let zeta0 = vec![0.0; dims.pt];
    let eta0 = TensorD::zeros(&dims.memory_shape());
    let (zeta, eta) = warm.unwrap_or((&zeta0, &eta0));
    if zeta.len() != dims.pt || eta.shape() != dims.memory_shape() {
        return Err(Error::Shape("warm stimulus factors do not match the basis".into()));
    }
    let lips = Lipschitz::new(design, weight)?;
    let ctx = Ctx { design, penalty, weight, lambda, cfg, lips };
    ctx.fit_stimulus(target.data(), zeta, eta)
}

/// Block-relaxation fit at a single λ.
pub fn fit_block_relaxation(
    design: &ImplicitDesign,
    penalty: &PenaltyWeights,
    weight: Option<&FrameWeight>,
    lambda: f64,
    warm: Option<&DriftCoefficients>,
    cfg: &SolverConfig,
) -> Result<LambdaFit> {
    cfg.validate()?;
    penalty.check(&design.dims())?;
    check_weight(design, weight)?;
    if !(lambda >= 0.0) {
        return Err(Error::Invalid("λ must be non-negative".into()));
    }
    let lips = Lipschitz::new(design, weight)?;
    let ctx = Ctx { design, penalty, weight, lambda, cfg, lips };
    let zeros = zero_coefficients(&design.dims());
    ctx.fit(warm.unwrap_or(&zeros))
}

fn check_weight(design: &ImplicitDesign, weight: Option<&FrameWeight>) -> Result<()> {
    match weight {
        Some(w) if w.dim() != design.basis.grid.n_pixels() => {
            Err(Error::Shape(format!("weight is {0}x{0}, grid has {1} pixels", w.dim(), design.basis.grid.n_pixels())))
        }
        _ => Ok(()),
    }
}

/// Trace the λ path from `lambda_max` downwards, or along `lambdas` when
/// given (sorted into decreasing order).
pub fn fit_path(
    design: &ImplicitDesign,
    penalty: &PenaltyWeights,
    weight: Option<&FrameWeight>,
    lambdas: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<PathFit> {
    cfg.validate()?;
    penalty.check(&design.dims())?;
    check_weight(design, weight)?;
    let lmax = lambda_max(design, penalty, weight)?;
    let lambdas = match lambdas {
        Some(l) => {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Invalid("λ values must be non-negative and non-empty".into()));
            }
            let mut l = l.to_vec();
            l.sort_by(|a, b| b.total_cmp(a));
            l
        }
        None => lambda_sequence(lmax, cfg.n_lambda, cfg.lambda_min_ratio),
    };
    let lips = Lipschitz::new(design, weight)?;
    let ctx = |lambda| Ctx { design, penalty, weight, lambda, cfg, lips };
    let zeros = zero_coefficients(&design.dims());
    let fits = if cfg.parallel_path {
        lambdas.par_iter().map(|&l| ctx(l).fit(&zeros)).collect::<Result<Vec<_>>>()?
    } else {
        let mut fits: Vec<LambdaFit> = Vec::with_capacity(lambdas.len());
        for &l in &lambdas {
            let warm = fits.last().map_or(&zeros, |f| &f.coefficients);
            let fit = ctx(l).fit(warm)?;
            fits.push(fit);
        }
        fits
    };
    Ok(PathFit { lambda_max: lmax, lambdas, fits })
}

/// Residual array `y - X θ` for a fitted coefficient set.
pub fn residuals(design: &ImplicitDesign, coeffs: &DriftCoefficients) -> Result<TensorD> {
    let pred = crate::design::linear_predictor(coeffs, design)?;
    design.response.sub(&pred)
}

/// Concatenation `[zeta, eta, beta, gamma]` used for coefficient files.
pub fn flatten_coefficients(coeffs: &DriftCoefficients) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.dims().n_parameters());
    match &coeffs.stimulus {
        Stimulus::RankOne { temporal, spatial } => {
            out.extend_from_slice(temporal);
            out.extend_from_slice(spatial.data());
        }
        Stimulus::Full(a) => out.extend_from_slice(a.data()),
    }
    out.extend_from_slice(coeffs.network.data());
    out.extend_from_slice(coeffs.memory.data());
    out
}

/// Sample covariance `R Rᵀ / M` of the residual frames.
pub fn residual_covariance(residual: &TensorD) -> Result<DMatrix<f64>> {
    if residual.ndim() != 3 {
        return Err(Error::Shape("residual must be N_x x N_y x M".into()));
    }
    let m = residual.shape()[2];
    let r = residual.as_matrix(2);
    Ok(&r * r.transpose() / m as f64)
}
