//! Forward Euler scheme for the space-discretized delay equation
//!
//! ```text
//! V_{k+1} = V_k + (S(t_k) + sum_{l=-L}^{-1} w_l V_{k+l} + H(V_k)) Δ_t + C̃ sqrt(Δ_t) ε_k
//! ```
//!
//! with `S_{m,n}(t) = Δ_s s(x_m, y_n, t)` and `H_{m,n}(V) = Δ_s h(x_m, y_n) V_{m,n}`.

use nalgebra::{DMatrix, DMatrixView, DVector, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::BasisSet;
use crate::coeffs::DriftCoefficients;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::rho::rho_chain;
use crate::tensor::TensorD;

/// States larger than this in magnitude abort the simulation.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Lagged weight matrices, a `D x D x L` array whose slab `r` is `w_l` for
/// `l = r - L`; entry `([m,n], [i,j], l)` is the integral of the network
/// function over target cell `(m, n)` and lag interval `l` with the source
/// fixed at grid point `(x_i, y_j)`.
#[derive(Debug, Clone)]
pub struct WeightArray {
    pub weights: TensorD,
}

impl WeightArray {
    pub fn n_pixels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_lags(&self) -> usize {
        self.weights.shape()[2]
    }

    /// `w_l` for slab `r` (lag `l = r - L`).
    pub fn slab(&self, r: usize) -> DMatrixView<'_, f64> {
        let d = self.n_pixels();
        DMatrixView::from_slice(&self.weights.data()[r * d * d..(r + 1) * d * d], d, d)
    }
}

pub fn build_weight_matrices(network: &TensorD, basis: &BasisSet) -> Result<WeightArray> {
    let dims = basis.dims();
    if network.shape() != dims.network_shape() {
        return Err(Error::Shape(format!(
            "network coefficients {:?}, basis expects {:?}",
            network.shape(),
            dims.network_shape()
        )));
    }
    let w = rho_chain(
        &[&basis.int_x, &basis.int_y, &basis.phi_x, &basis.phi_y, &basis.int_l],
        network,
    )?;
    let d = basis.grid.n_pixels();
    Ok(WeightArray { weights: w.reshape(vec![d, d, basis.grid.lags])? })
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Frames V_{-L}, ..., V_0 (shape N_x x N_y x (L+1)); zeros if `None`.
    pub history: Option<TensorD>,
    pub seed: u64,
}

/// Precomputed drift pieces shared by all trajectories of one model.
struct Drift {
    /// Δ_s s(x_m, y_n, t_k), N_x x N_y x M
    stimulus: TensorD,
    /// Δ_s h(x_m, y_n)
    memory: Vec<f64>,
    weights: WeightArray,
}

impl Drift {
    fn new(basis: &BasisSet, coeffs: &DriftCoefficients) -> Result<Self> {
        coeffs.check(&basis.dims())?;
        let area = basis.grid.cell_area();
        let alpha = coeffs.stimulus.assemble();
        let mut stimulus = rho_chain(&[&basis.phi_x, &basis.phi_y, &basis.phi_t], &alpha)?;
        stimulus.scale(area);
        let mut memory = rho_chain(&[&basis.phi_x, &basis.phi_y], &coeffs.memory)?;
        memory.scale(area);
        let weights = build_weight_matrices(&coeffs.network, basis)?;
        Ok(Self { stimulus, memory: memory.into_data(), weights })
    }
}

/// Simulate one trajectory; the output holds the `L + 1` history frames
/// followed by the `M` simulated frames.
pub fn simulate_euler(
    cfg: &SimConfig,
    basis: &BasisSet,
    coeffs: &DriftCoefficients,
    noise: &NoiseModel,
) -> Result<TensorD> {
    let drift = Drift::new(basis, coeffs)?;
    run(&drift, cfg, basis, noise)
}

/// Independent trajectories, one per seed, run in parallel.
pub fn simulate_many(
    history: Option<&TensorD>,
    seeds: &[u64],
    basis: &BasisSet,
    coeffs: &DriftCoefficients,
    noise: &NoiseModel,
) -> Result<Vec<TensorD>> {
    let drift = Drift::new(basis, coeffs)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = SimConfig { history: history.cloned(), seed };
            run(&drift, &cfg, basis, noise)
        })
        .collect()
}

fn run(drift: &Drift, cfg: &SimConfig, basis: &BasisSet, noise: &NoiseModel) -> Result<TensorD> {
    let grid = &basis.grid;
    let (nx, ny, lags, steps) = (grid.nx, grid.ny, grid.lags, grid.steps);
    let d = grid.n_pixels();
    if noise.factor.nrows() != d {
        return Err(Error::Shape(format!("noise model is for {} pixels, grid has {d}", noise.factor.nrows())));
    }
    let mut out = TensorD::zeros(&[nx, ny, grid.n_frames()]);
    if let Some(h) = &cfg.history {
        if h.shape() != [nx, ny, lags + 1] {
            return Err(Error::Shape(format!("history must be {nx}x{ny}x{}, got {:?}", lags + 1, h.shape())));
        }
        out.data_mut()[..h.len()].copy_from_slice(h.data());
    }
    let dt = grid.time_step;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let with_noise = !noise.is_zero();
    let mut z = DVector::zeros(d);
    let mut acc = DVector::zeros(d);

    for k in 0..steps {
        // frame index of V_k is k + L; V_{k+l} for l = r - L is frame k + r
        acc.copy_from_slice(drift.stimulus.frame(k));
        for r in 0..lags {
            let past = DVectorView::from_slice(out.frame(k + r), d);
            acc.gemv(1.0, &drift.weights.slab(r), &past, 1.0);
        }
        let cur = out.frame(k + lags).to_vec();
        for ((a, h), v) in acc.iter_mut().zip(&drift.memory).zip(&cur) {
            *a += h * v;
        }
        let next = out.frame_mut(k + lags + 1);
        for ((n, v), a) in next.iter_mut().zip(&cur).zip(acc.iter()) {
            *n = v + a * dt;
        }
        if with_noise {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let e = &noise.factor * &z;
            for (n, ei) in next.iter_mut().zip(e.iter()) {
                *n += ei * sqrt_dt;
            }
        }
        if next.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
            return Err(Error::Diverged { step: k });
        }
    }
    Ok(out)
}

/// Companion matrix of the noise-free, stimulus-free recursion acting on
/// the stacked state `(V_k, V_{k-1}, ..., V_{k-L})`.
pub fn companion_matrix(basis: &BasisSet, coeffs: &DriftCoefficients) -> Result<DMatrix<f64>> {
    let drift = Drift::new(basis, coeffs)?;
    let grid = &basis.grid;
    let d = grid.n_pixels();
    let lags = grid.lags;
    let dt = grid.time_step;
    let n = d * (lags + 1);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..d {
        c[(i, i)] = 1.0 + dt * drift.memory[i];
    }
    for r in 0..lags {
        // w_l with l = r - L multiplies V_{k-(L-r)}, block L - r
        let block = lags - r;
        let w = drift.weights.slab(r);
        c.view_mut((0, block * d), (d, d)).copy_from(&(w * dt));
    }
    for b in 1..=lags {
        c.view_mut((b * d, (b - 1) * d), (d, d)).fill_with_identity();
    }
    Ok(c)
}

/// Largest eigenvalue modulus. Uses a bounded real Schur iteration and
/// falls back to Gelfand's formula `‖Aᵏ‖^{1/k}` when that does not settle.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), 1e-13, 200 * n) {
        return schur.complex_eigenvalues().iter().fold(0.0, |r, z| r.max(z.norm()));
    }
    // repeated squaring with rescaling: log ‖A^(2^j)‖ / 2^j
    let mut a = m.clone();
    let mut log_scale = 0.0;
    let mut est = f64::INFINITY;
    for j in 1..=40 {
        a = &a * &a;
        log_scale *= 2.0;
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln();
        est = (log_scale / 2f64.powi(j)).exp();
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisConfig;
    use crate::coeffs::Stimulus;
    use crate::grid::Grid;
    use crate::noise::CovarianceFn;

    fn grid(steps: usize) -> Grid {
        // dyadic steps keep the recursions below exact in floating point
        Grid { nx: 2, ny: 2, x_range: (0.0, 2.0), y_range: (0.0, 2.0), time_step: 0.5, lags: 2, steps }
    }

    fn degree_zero(g: &Grid) -> BasisSet {
        let cfg = BasisConfig { px: 1, py: 1, pt: 1, pl: 1, spatial_degree: 0, temporal_degree: 0, lag_degree: 0, stimulus_onset: 0.0 };
        BasisSet::build(g, &cfg).unwrap()
    }

    fn quiet(g: &Grid) -> NoiseModel {
        CovarianceFn::White { variance: 0.0 }.noise_model(g).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_weights() {
        let g = grid(4);
        let cfg = BasisConfig { px: 2, py: 2, pt: 2, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
        let b = BasisSet::build(&g, &cfg).unwrap();
        let w = build_weight_matrices(&TensorD::zeros(&b.dims().network_shape()), &b).unwrap();
        assert_eq!(w.weights.shape(), &[4, 4, 2]);
        assert_eq!(w.weights.max_abs(), 0.0);
    }

    #[test]
    fn single_coefficient_gives_outer_product_slices() {
        let g = grid(4);
        let cfg = BasisConfig { px: 2, py: 2, pt: 2, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
        let b = BasisSet::build(&g, &cfg).unwrap();
        let mut beta = TensorD::zeros(&b.dims().network_shape());
        beta.set(&[1, 0, 0, 1, 1], 1.0).unwrap();
        let w = build_weight_matrices(&beta, &b).unwrap();
        for r in 0..2 {
            for (tj, ti, sj, si) in indices4(2) {
                let expect = b.int_x[(ti, 1)] * b.int_y[(tj, 0)] * b.phi_x[(si, 0)] * b.phi_y[(sj, 1)] * b.int_l[(r, 1)];
                let got = w.slab(r)[(ti + 2 * tj, si + 2 * sj)];
                assert!((got - expect).abs() < 1e-15);
            }
        }
    }

    fn indices4(n: usize) -> Vec<(usize, usize, usize, usize)> {
        let mut v = Vec::new();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        v.push((a, b, c, d));
                    }
                }
            }
        }
        v
    }

    #[test]
    fn constant_stimulus_is_a_linear_ramp() {
        let g = grid(12);
        let b = degree_zero(&g);
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        coeffs.stimulus = Stimulus::Full(TensorD::filled(&[1, 1, 1], 0.75));
        let history = TensorD::filled(&[2, 2, 3], 2.0);
        let out = simulate_euler(&SimConfig { history: Some(history), seed: 1 }, &b, &coeffs, &quiet(&g)).unwrap();
        let step = 0.75 * g.cell_area() * g.time_step;
        for k in 0..=12 {
            for v in out.frame(k + 2) {
                assert_eq!(*v, 2.0 + k as f64 * step);
            }
        }
    }

    #[test]
    fn memory_alone_is_geometric_decay() {
        let g = grid(10);
        let b = degree_zero(&g);
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        // Δ_s h = -1, Δ_t = 0.5: factor 1/2 per step
        coeffs.memory = TensorD::filled(&[1, 1], -1.0 / g.cell_area());
        let history = TensorD::from_fn(&[2, 2, 3], |i| if i[2] == 2 { 8.0 + i[0] as f64 } else { 0.0 });
        let out = simulate_euler(&SimConfig { history: Some(history), seed: 1 }, &b, &coeffs, &quiet(&g)).unwrap();
        for k in 0..=10 {
            let f = out.frame(k + 2);
            assert_eq!(f[0], 8.0 * 0.5f64.powi(k as i32));
            assert_eq!(f[1], 9.0 * 0.5f64.powi(k as i32));
        }
    }

    #[test]
    fn same_seed_same_path() {
        let g = grid(20);
        let cfg = BasisConfig { px: 2, py: 2, pt: 3, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
        let b = BasisSet::build(&g, &cfg).unwrap();
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        coeffs.memory = TensorD::filled(&[2, 2], -0.2);
        let noise = CovarianceFn::Gaussian { variance: 1.0, length_scale: 1.0 }.noise_model(&g).unwrap();
        let run = |seed| simulate_euler(&SimConfig { history: None, seed }, &b, &coeffs, &noise).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn blow_up_names_the_step() {
        let g = grid(200);
        let b = degree_zero(&g);
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        coeffs.memory = TensorD::filled(&[1, 1], 10.0);
        let history = TensorD::filled(&[2, 2, 3], 1.0);
        let err = simulate_euler(&SimConfig { history: Some(history), seed: 0 }, &b, &coeffs, &quiet(&g)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step } if step > 0 && step < 200));
        assert!(err.is_numerical());
    }

    #[test]
    fn stable_companion_keeps_the_state_bounded() {
        let mut g = grid(50);
        let cfg = BasisConfig { px: 2, py: 2, pt: 2, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
        let b = BasisSet::build(&g, &cfg).unwrap();
        let mut coeffs = DriftCoefficients::zeros(&b.dims());
        coeffs.memory = TensorD::filled(&[2, 2], -0.3);
        coeffs.network = TensorD::from_fn(&b.dims().network_shape(), |i| 0.02 * ((i[0] + i[3] + i[4]) % 3) as f64);
        let rho = spectral_radius(&companion_matrix(&b, &coeffs).unwrap());
        assert!(rho < 1.0, "{rho}");
        g.steps = 500;
        let long = BasisSet::build(&g, &cfg).unwrap();
        let noise = CovarianceFn::White { variance: 1.0 }.noise_model(&g).unwrap();
        let out = simulate_euler(&SimConfig { history: None, seed: 8 }, &long, &coeffs, &noise).unwrap();
        assert!(out.max_abs() < 50.0, "{}", out.max_abs());
    }
}
