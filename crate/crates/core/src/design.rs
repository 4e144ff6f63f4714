//! Matrix-free linear array model.
//!
//! The stacked autoregression `y = X θ + e` has a design that splits by
//! drift component into
//!
//! ```text
//! X θ = vec( rho(phi_t, rho(phi_y, rho(phi_x, alpha)))
//!          + rho(conv,  rho(int_y, rho(int_x, beta)))
//!          + V_lag ⊙ C(gamma) )
//! ```
//!
//! where `conv` is the `M x (px py pl)` convolution tensor of the observed
//! field with the spatial bases and the lag integrals. Only these small
//! factors are stored; `X` itself is never formed.
//!
//! Time-step and cell-area constants of the Euler scheme are folded into the
//! stored factors, so coefficients estimated here live on the same scale as
//! the ones fed to [`crate::simulate::simulate_euler`].

use nalgebra::{DMatrix, DMatrixView, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::coeffs::{BasisDims, DriftCoefficients, Stimulus};
use crate::error::{Error, Result};
use crate::rho::{rho, rho_chain, rho_transposed_chain};
use crate::tensor::{hadamard, TensorD};

/// How the current state enters the response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseConvention {
    /// `y_k = V_{k+1}` with the Euler term `+V_k` folded in as a known
    /// offset, so the fitted quantity is the drift increment.
    #[default]
    Offset,
    /// `y_k = V_{k+1}` with no offset; the memory block then has to absorb
    /// the identity as well as `h`.
    Level,
}

/// Convolution tensor: row `k` is the vectorized `px x py x pl` array
/// `sum_l sum_{i,j} V_{i,j,k+l} phi_x(x_i) phi_y(y_j) int_l(l)`.
pub fn compute_convolution_tensor(data: &TensorD, basis: &BasisSet) -> Result<DMatrix<f64>> {
    let grid = &basis.grid;
    let (steps, lags) = (grid.steps, grid.lags);
    if data.ndim() != 3 || data.shape()[0] != grid.nx || data.shape()[1] != grid.ny {
        return Err(Error::Shape(format!(
            "data {:?} does not match a {}x{} grid",
            data.shape(),
            grid.nx,
            grid.ny
        )));
    }
    let frames = data.shape()[2];
    if frames < steps + lags {
        return Err(Error::Length { needed: steps + lags, got: frames });
    }
    let dims = basis.dims();
    let pxy = dims.px * dims.py;
    // T x px x py: spatial projection of every frame
    let projected = rho(&basis.phi_y.transpose(), &rho(&basis.phi_x.transpose(), data)?)?;
    let proj = projected.as_matrix(1);
    let lag_t = basis.int_l.transpose();
    let mut conv = DMatrix::zeros(steps, pxy * dims.pl);
    let mut window = TensorD::zeros(&[lags, dims.px, dims.py]);
    for k in 0..steps {
        // frames k + r hold V_{k+l}, l = r - L
        for c in 0..pxy {
            for r in 0..lags {
                window.data_mut()[r + lags * c] = proj[(k + r, c)];
            }
        }
        let row = rho(&lag_t, &window)?;
        for (c, v) in row.data().iter().enumerate() {
            conv[(k, c)] = *v;
        }
    }
    Ok(conv)
}

/// Frame-wise weighting by a symmetric square root of a precision matrix.
#[derive(Debug, Clone)]
pub struct FrameWeight {
    /// Ω^{1/2}
    pub sqrt: DMatrix<f64>,
    /// Ω
    pub full: DMatrix<f64>,
}

impl FrameWeight {
    /// Ω^{1/2} by symmetric eigendecomposition with eigenvalues floored
    /// at `1e-10 * max`.
    pub fn from_precision(omega: &DMatrix<f64>) -> Result<Self> {
        if !omega.is_square() {
            return Err(Error::Shape("precision matrix must be square".into()));
        }
        let eig = SymmetricEigen::new(omega.clone());
        let top = eig.eigenvalues.max();
        if !(top > 0.0) {
            return Err(Error::Invalid("precision matrix has no positive eigenvalue".into()));
        }
        let floor = 1e-10 * top;
        let roots = eig.eigenvalues.map(|v| v.max(floor).sqrt());
        let q = &eig.eigenvectors;
        let mut sqrt = q * DMatrix::from_diagonal(&roots) * q.transpose();
        crate::noise::symmetrize(&mut sqrt);
        let full = &sqrt * &sqrt;
        Ok(Self { sqrt, full })
    }

    pub fn dim(&self) -> usize {
        self.sqrt.nrows()
    }

    fn apply(m: &DMatrix<f64>, r: &[f64]) -> Vec<f64> {
        let d = m.nrows();
        let view = DMatrixView::from_slice(r, d, r.len() / d);
        (m * view).data.into()
    }

    /// Ω^{1/2} applied to every frame of `r`.
    pub fn apply_sqrt(&self, r: &[f64]) -> Vec<f64> {
        Self::apply(&self.sqrt, r)
    }

    /// Ω applied to every frame of `r`.
    pub fn apply_full(&self, r: &[f64]) -> Vec<f64> {
        Self::apply(&self.full, r)
    }
}

/// `½ Σ_k ‖Ω^{1/2} r_k‖²`, or `½‖r‖²` without a weight.
pub fn weighted_loss(r: &[f64], weight: Option<&FrameWeight>) -> f64 {
    match weight {
        None => 0.5 * r.iter().map(|v| v * v).sum::<f64>(),
        Some(w) => 0.5 * w.apply_sqrt(r).iter().map(|v| v * v).sum::<f64>(),
    }
}

/// `Ω r`, or `r` itself without a weight.
pub fn weighted_residual(r: &[f64], weight: Option<&FrameWeight>) -> Vec<f64> {
    match weight {
        None => r.to_vec(),
        Some(w) => w.apply_full(r),
    }
}

#[derive(Debug, Clone)]
pub struct ImplicitDesign {
    pub basis: BasisSet,
    /// Δ_t Δ_s phi_t, M x pt
    pub stim_t: DMatrix<f64>,
    /// Δ_t times the convolution tensor, M x (px py pl)
    pub conv: DMatrix<f64>,
    /// Δ_t Δ_s
    pub memory_scale: f64,
    /// V_k for k = 0..M-1, N_x x N_y x M
    pub lagged: TensorD,
    /// y_k for k = 0..M-1, N_x x N_y x M
    pub response: TensorD,
    pub convention: ResponseConvention,
}

impl ImplicitDesign {
    /// Build the design for a recording of `M + L + 1` frames
    /// (`V_{-L}, ..., V_M`).
    pub fn new(data: &TensorD, basis: &BasisSet, convention: ResponseConvention) -> Result<Self> {
        let grid = &basis.grid;
        let (steps, lags) = (grid.steps, grid.lags);
        let needed = grid.n_frames();
        if data.ndim() != 3 || data.shape()[0] != grid.nx || data.shape()[1] != grid.ny {
            return Err(Error::Shape(format!(
                "data {:?} does not match a {}x{} grid",
                data.shape(),
                grid.nx,
                grid.ny
            )));
        }
        if data.shape()[2] < needed {
            return Err(Error::Length { needed, got: data.shape()[2] });
        }
        let dt = grid.time_step;
        let area = grid.cell_area();
        let mut conv = compute_convolution_tensor(data, basis)?;
        conv *= dt;
        let stim_t = &basis.phi_t * (dt * area);

        let d = grid.n_pixels();
        let slab = |from: usize| data.data()[from * d..(from + steps) * d].to_vec();
        let shape = vec![grid.nx, grid.ny, steps];
        let lagged = TensorD::new(shape.clone(), slab(lags))?;
        let mut response = TensorD::new(shape, slab(lags + 1))?;
        if convention == ResponseConvention::Offset {
            response.axpy(-1.0, &lagged)?;
        }
        Ok(Self { basis: basis.clone(), stim_t, conv, memory_scale: dt * area, lagged, response, convention })
    }

    pub fn dims(&self) -> BasisDims {
        self.basis.dims()
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        let g = &self.basis.grid;
        [g.nx, g.ny, g.steps]
    }

    /// Observations in the stacked response, M D.
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    fn check_residual(&self, r: &TensorD) -> Result<()> {
        if r.shape() != self.frame_shape() {
            return Err(Error::Shape(format!("residual {:?}, expected {:?}", r.shape(), self.frame_shape())));
        }
        Ok(())
    }

    pub fn stimulus_forward(&self, alpha: &TensorD) -> Result<TensorD> {
        rho_chain(&[&self.basis.phi_x, &self.basis.phi_y, &self.stim_t], alpha)
    }

    pub fn stimulus_adjoint(&self, r: &TensorD) -> Result<TensorD> {
        self.check_residual(r)?;
        rho_transposed_chain(&[&self.basis.phi_x, &self.basis.phi_y, &self.stim_t], r)
    }

    pub fn network_forward(&self, beta: &TensorD) -> Result<TensorD> {
        let d = self.dims();
        let folded = beta.clone().reshape(vec![d.px, d.py, d.px * d.py * d.pl])?;
        rho_chain(&[&self.basis.int_x, &self.basis.int_y, &self.conv], &folded)
    }

    pub fn network_adjoint(&self, r: &TensorD) -> Result<TensorD> {
        self.check_residual(r)?;
        let g = rho_transposed_chain(&[&self.basis.int_x, &self.basis.int_y, &self.conv], r)?;
        g.reshape(self.dims().network_shape().to_vec())
    }

    /// `C_k = Δ_t Δ_s phi_x gamma phi_yᵀ`, the same for every k.
    pub fn memory_cache(&self, gamma: &TensorD) -> Result<TensorD> {
        let mut c = rho_chain(&[&self.basis.phi_x, &self.basis.phi_y], gamma)?;
        c.scale(self.memory_scale);
        Ok(c)
    }

    pub fn memory_forward(&self, gamma: &TensorD) -> Result<TensorD> {
        let cache = self.memory_cache(gamma)?;
        let mut out = self.lagged.clone();
        let d = cache.len();
        for k in 0..self.frame_shape()[2] {
            for (v, c) in out.data_mut()[k * d..(k + 1) * d].iter_mut().zip(cache.data()) {
                *v *= c;
            }
        }
        Ok(out)
    }

    pub fn memory_adjoint(&self, r: &TensorD) -> Result<TensorD> {
        self.check_residual(r)?;
        let prod = hadamard(&self.lagged, r)?;
        let g = self.basis.grid.clone();
        let d = g.n_pixels();
        let mut sum = TensorD::zeros(&[g.nx, g.ny]);
        for k in 0..g.steps {
            for (s, v) in sum.data_mut().iter_mut().zip(&prod.data()[k * d..(k + 1) * d]) {
                *s += v;
            }
        }
        let mut out = rho_transposed_chain(&[&self.basis.phi_x, &self.basis.phi_y], &sum)?;
        out.scale(self.memory_scale);
        Ok(out)
    }

    /// Spatial factor design for a fixed temporal factor: frame k is
    /// `(stim_t zeta)_k * phi_x eta phi_yᵀ`.
    pub fn spatial_forward(&self, zeta: &[f64], eta: &TensorD) -> Result<TensorD> {
        let u = self.temporal_profile(zeta)?;
        let e = eta.clone().reshape(vec![eta.shape()[0], eta.shape()[1], 1])?;
        rho_chain(&[&self.basis.phi_x, &self.basis.phi_y, &u], &e)
    }

    pub fn spatial_adjoint(&self, zeta: &[f64], r: &TensorD) -> Result<TensorD> {
        self.check_residual(r)?;
        let u = self.temporal_profile(zeta)?;
        let g = rho_transposed_chain(&[&self.basis.phi_x, &self.basis.phi_y, &u], r)?;
        let s = g.shape().to_vec();
        g.reshape(vec![s[0], s[1]])
    }

    /// Temporal factor design for a fixed spatial factor: frame k is
    /// `(stim_t zeta)_k * P` with `P = phi_x eta phi_yᵀ`.
    pub fn temporal_forward(&self, eta: &TensorD, zeta: &[f64]) -> Result<TensorD> {
        let p = self.spatial_pattern(eta)?;
        let z = TensorD::new(vec![1, zeta.len()], zeta.to_vec())?;
        let out = rho_chain(&[&p, &self.stim_t], &z)?;
        out.reshape(self.frame_shape().to_vec())
    }

    pub fn temporal_adjoint(&self, eta: &TensorD, r: &TensorD) -> Result<Vec<f64>> {
        self.check_residual(r)?;
        let p = self.spatial_pattern(eta)?;
        let g = self.basis.grid.n_pixels();
        let flat = r.clone().reshape(vec![g, self.frame_shape()[2]])?;
        Ok(rho_transposed_chain(&[&p, &self.stim_t], &flat)?.into_data())
    }

    /// `stim_t zeta` as an `M x 1` matrix.
    fn temporal_profile(&self, zeta: &[f64]) -> Result<DMatrix<f64>> {
        if zeta.len() != self.stim_t.ncols() {
            return Err(Error::Shape(format!("temporal factor has {} entries, expected {}", zeta.len(), self.stim_t.ncols())));
        }
        Ok(&self.stim_t * DMatrix::from_column_slice(zeta.len(), 1, zeta))
    }

    /// `vec(phi_x eta phi_yᵀ)` as a `D x 1` matrix.
    fn spatial_pattern(&self, eta: &TensorD) -> Result<DMatrix<f64>> {
        let p = rho_chain(&[&self.basis.phi_x, &self.basis.phi_y], eta)?;
        Ok(DMatrix::from_column_slice(p.len(), 1, p.data()))
    }

    pub fn stimulus_predictor(&self, stimulus: &Stimulus) -> Result<TensorD> {
        match stimulus {
            Stimulus::Full(a) => self.stimulus_forward(a),
            Stimulus::RankOne { temporal, spatial } => self.spatial_forward(temporal, spatial),
        }
    }
}

/// `X θ` in array form.
pub fn linear_predictor(coeffs: &DriftCoefficients, design: &ImplicitDesign) -> Result<TensorD> {
    coeffs.check(&design.dims())?;
    let mut out = design.stimulus_predictor(&coeffs.stimulus)?;
    out.axpy(1.0, &design.network_forward(&coeffs.network)?)?;
    out.axpy(1.0, &design.memory_forward(&coeffs.memory)?)?;
    Ok(out)
}

/// Gradient with respect to every coefficient of
/// `½ Σ_k ‖Ω^{1/2} r_k‖²` at residual `r = y - X θ`, i.e. `-Xᵀ Ω r`.
pub fn gradient(residual: &TensorD, design: &ImplicitDesign, weight: Option<&FrameWeight>) -> Result<DriftCoefficients> {
    design.check_residual(residual)?;
    let mut wr = TensorD::new(residual.shape().to_vec(), weighted_residual(residual.data(), weight))?;
    wr.scale(-1.0);
    Ok(DriftCoefficients {
        stimulus: Stimulus::Full(design.stimulus_adjoint(&wr)?),
        network: design.network_adjoint(&wr)?,
        memory: design.memory_adjoint(&wr)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisConfig;
    use crate::grid::Grid;
    use crate::noise::CovarianceFn;
    use crate::simulate::{simulate_euler, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis() -> BasisSet {
        let grid = Grid { nx: 3, ny: 4, x_range: (0.0, 1.5), y_range: (0.0, 2.0), time_step: 0.25, lags: 2, steps: 7 };
        let cfg = BasisConfig { px: 3, py: 3, pt: 4, pl: 2, spatial_degree: 1, temporal_degree: 2, lag_degree: 1, stimulus_onset: 0.0 };
        BasisSet::build(&grid, &cfg).unwrap()
    }

    fn random_coeffs(dims: &BasisDims, scale: f64, seed: u64) -> DriftCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize]| TensorD::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0));
        DriftCoefficients {
            stimulus: Stimulus::Full(draw(&dims.stimulus_shape())),
            network: draw(&dims.network_shape()),
            memory: draw(&dims.memory_shape()),
        }
    }

    #[test]
    fn zero_data_gives_zero_convolution() {
        let b = basis();
        let data = TensorD::zeros(&[3, 4, b.grid.n_frames()]);
        let conv = compute_convolution_tensor(&data, &b).unwrap();
        assert_eq!(conv.shape(), (7, 18));
        assert!(conv.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn short_recording_is_a_length_error() {
        let b = basis();
        let data = TensorD::zeros(&[3, 4, 8]);
        assert!(matches!(compute_convolution_tensor(&data, &b), Err(Error::Length { needed: 9, got: 8 })));
        assert!(matches!(ImplicitDesign::new(&data, &b, ResponseConvention::Offset), Err(Error::Length { .. })));
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let b = basis();
        let data = TensorD::filled(&[3, 4, b.grid.n_frames()], 1.5);
        let design = ImplicitDesign::new(&data, &b, ResponseConvention::Offset).unwrap();
        let pred = linear_predictor(&DriftCoefficients::zeros(&b.dims()), &design).unwrap();
        assert_eq!(pred.max_abs(), 0.0);
        let g = gradient(&TensorD::zeros(&design.frame_shape()), &design, None).unwrap();
        assert_eq!(g.network.max_abs() + g.memory.max_abs() + g.stimulus.assemble().max_abs(), 0.0);
    }

    #[test]
    fn memory_block_on_constant_data_repeats_the_cache() {
        let b = basis();
        let data = TensorD::filled(&[3, 4, b.grid.n_frames()], 1.0);
        let design = ImplicitDesign::new(&data, &b, ResponseConvention::Offset).unwrap();
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        coeffs.memory = TensorD::from_fn(&[3, 3], |i| (i[0] as f64) - 0.5 * i[1] as f64);
        let pred = linear_predictor(&coeffs, &design).unwrap();
        let cache = design.memory_cache(&coeffs.memory).unwrap();
        for k in 0..7 {
            assert_eq!(pred.frame(k), cache.data());
        }
    }

    #[test]
    fn noise_free_simulation_is_reproduced_by_the_design() {
        let b = basis();
        let truth = random_coeffs(&b.dims(), 0.3, 5);
        let noise = CovarianceFn::White { variance: 0.0 }.noise_model(&b.grid).unwrap();
        let history = TensorD::from_fn(&[3, 4, 3], |i| 0.1 * (i[0] + 2 * i[1] + i[2]) as f64);
        let data = simulate_euler(&SimConfig { history: Some(history), seed: 0 }, &b, &truth, &noise).unwrap();
        for convention in [ResponseConvention::Offset, ResponseConvention::Level] {
            let design = ImplicitDesign::new(&data, &b, convention).unwrap();
            let mut pred = linear_predictor(&truth, &design).unwrap();
            if convention == ResponseConvention::Level {
                pred.axpy(1.0, &design.lagged).unwrap();
            }
            let diff = design.response.sub(&pred).unwrap();
            assert!(diff.max_abs() < 1e-12 * data.max_abs().max(1.0), "{convention:?}: {}", diff.max_abs());
        }
    }

    #[test]
    fn adjoints_match_forward_maps() {
        let b = basis();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = TensorD::from_fn(&[3, 4, b.grid.n_frames()], |_| rng.random_range(-1.0..1.0));
        let design = ImplicitDesign::new(&data, &b, ResponseConvention::Offset).unwrap();
        let theta = random_coeffs(&b.dims(), 1.0, 11);
        let r = TensorD::from_fn(&design.frame_shape(), |_| rng.random_range(-1.0..1.0));
        let alpha = theta.stimulus.assemble();
        let pairs = [
            (design.stimulus_forward(&alpha).unwrap().dot(&r).unwrap(), design.stimulus_adjoint(&r).unwrap().dot(&alpha).unwrap()),
            (design.network_forward(&theta.network).unwrap().dot(&r).unwrap(), design.network_adjoint(&r).unwrap().dot(&theta.network).unwrap()),
            (design.memory_forward(&theta.memory).unwrap().dot(&r).unwrap(), design.memory_adjoint(&r).unwrap().dot(&theta.memory).unwrap()),
        ];
        for (lhs, rhs) in pairs {
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn frame_weight_of_identity_is_identity() {
        let fw = FrameWeight::from_precision(&DMatrix::identity(3, 3)).unwrap();
        assert!((fw.sqrt.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
        let r = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!((weighted_loss(&r, Some(&fw)) - weighted_loss(&r, None)).abs() < 1e-12);
    }
}
