//! Residual-covariance reweighting: fit, estimate a sparse precision from
//! the residuals, refit with the frame-wise weight `Ω^{1/2}`.

use nalgebra::DMatrix;

use crate::design::{FrameWeight, ImplicitDesign};
use crate::error::{Error, Result};
use crate::precision::{graphical_lasso, GlassoOptions, PrecisionEstimate};
use crate::solver::{fit_path, residual_covariance, residuals, PathFit, PenaltyWeights, SolverConfig};
use crate::tensor::TensorD;

#[derive(Debug, Clone)]
pub struct MrceFit {
    pub first: PathFit,
    /// Path index whose residuals gave the covariance estimate.
    pub lambda_index: usize,
    pub residual_covariance: DMatrix<f64>,
    pub precision: PrecisionEstimate,
    pub weighted: PathFit,
}

/// Default choice of λ index for the covariance step: the middle of the
/// path.
pub fn default_lambda_index(n_lambda: usize) -> usize {
    n_lambda / 2
}

/// Negative Gaussian log-likelihood (up to constants) of residual frames
/// under precision `omega`: `-(M/2) log det Ω + ½ Σ_k r_kᵀ Ω r_k`.
pub fn negative_log_likelihood(residual: &TensorD, omega: &DMatrix<f64>) -> Result<f64> {
    let ch = omega.clone().cholesky().ok_or_else(|| Error::InvalidCovariance("precision is not positive definite".into()))?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let m = residual.shape()[2] as f64;
    let r = residual.as_matrix(2);
    let quad = (omega * r).component_mul(&r).sum();
    Ok(-0.5 * m * logdet + 0.5 * quad)
}

pub fn fit_mrce(
    design: &ImplicitDesign,
    penalty: &PenaltyWeights,
    nu: f64,
    lambdas: Option<&[f64]>,
    lambda_index: Option<usize>,
    cfg: &SolverConfig,
    glasso: &GlassoOptions,
) -> Result<MrceFit> {
    let first = fit_path(design, penalty, None, lambdas, cfg)?;
    let idx = lambda_index.unwrap_or_else(|| default_lambda_index(first.fits.len()));
    let fit = first
        .fits
        .get(idx)
        .ok_or_else(|| Error::Invalid(format!("λ index {idx} outside a path of {}", first.fits.len())))?;
    let r = residuals(design, &fit.coefficients)?;
    let sigma = residual_covariance(&r)?;
    let precision = graphical_lasso(&sigma, nu, glasso)?;
    let weight = FrameWeight::from_precision(&precision.omega)?;
    let weighted = fit_path(design, penalty, Some(&weight), lambdas, cfg)?;
    Ok(MrceFit { first, lambda_index: idx, residual_covariance: sigma, precision, weighted })
}
