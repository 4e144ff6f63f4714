//! Synthetic ground truths shared by the property and acceptance tests.

use fieldnet::basis::BasisConfig;
use fieldnet::{
    PenaltyWeights,
    simulate_euler, BasisSet, CovarianceFn, DriftCoefficients, Grid, ImplicitDesign, ResponseConvention, SimConfig,
    Stimulus, TensorD,
};

/// Network indices `(q1, q2, q3, q4, q5)` of the true non-zero
/// coefficients in [`recovery_problem`].
pub const TRUE_SUPPORT: [[usize; 5]; 6] = [
    [0, 0, 1, 1, 0],
    [1, 2, 1, 2, 1],
    [2, 1, 3, 0, 0],
    [3, 3, 2, 2, 1],
    [1, 0, 0, 3, 1],
    [2, 3, 3, 3, 0],
];

pub const RECOVERY_SEED: u64 = 42;

/// 8 x 8 grid of unit cells, unit time step, M = 200, L = 5, a network
/// with six non-zero coefficients, uniform mean reversion and white noise.
/// Spatial and lag bases are piecewise constant (2 x 2 pixel blocks, two
/// lag halves), so distinct coefficients do not share basis support.
pub fn recovery_problem() -> (BasisSet, DriftCoefficients, TensorD) {
    let grid = Grid { nx: 8, ny: 8, x_range: (0.0, 8.0), y_range: (0.0, 8.0), time_step: 1.0, lags: 5, steps: 200 };
    let cfg = BasisConfig { px: 4, py: 4, pt: 4, pl: 2, spatial_degree: 0, temporal_degree: 2, lag_degree: 0, stimulus_onset: 0.0 };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let dims = basis.dims();
    let mut network = TensorD::zeros(&dims.network_shape());
    for (n, idx) in TRUE_SUPPORT.iter().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        network.set(idx, sign * 0.10).unwrap();
    }
    let truth = DriftCoefficients {
        stimulus: Stimulus::RankOne { temporal: vec![0.0; dims.pt], spatial: TensorD::zeros(&dims.memory_shape()) },
        network,
        memory: TensorD::filled(&dims.memory_shape(), -1.0),
    };
    let noise = CovarianceFn::White { variance: 1.0 }.noise_model(&grid).unwrap();
    let data = simulate_euler(&SimConfig { history: None, seed: RECOVERY_SEED }, &basis, &truth, &noise).unwrap();
    (basis, truth, data)
}

pub fn recovery_design() -> (ImplicitDesign, DriftCoefficients) {
    let (basis, truth, data) = recovery_problem();
    (ImplicitDesign::new(&data, &basis, ResponseConvention::Offset).unwrap(), truth)
}

/// `(recall, false discovery rate)` of the estimated network support.
pub fn support_scores(estimate: &TensorD, truth: &TensorD) -> (f64, f64) {
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for (e, t) in estimate.data().iter().zip(truth.data()) {
        if *t != 0.0 {
            pos += 1;
        }
        match (*e != 0.0, *t != 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            _ => {}
        }
    }
    let recall = tp as f64 / pos.max(1) as f64;
    let fdr = if tp + fp == 0 { 0.0 } else { fp as f64 / (tp + fp) as f64 };
    (recall, fdr)
}

/// Uniform weights with the memory block left unpenalized: the decay term
/// is dense by construction and shrinking it pushes its effect into the
/// self-connections of the network.
pub fn recovery_penalty(design: &ImplicitDesign) -> PenaltyWeights {
    let mut pen = PenaltyWeights::uniform(&design.dims());
    pen.memory.scale(0.0);
    pen
}

/// Random data on a small grid with random (non-degenerate) bases.
pub fn random_design(seed: u64) -> ImplicitDesign {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid {
        nx: rng.random_range(2..=4),
        ny: rng.random_range(2..=4),
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        time_step: 0.1,
        lags: rng.random_range(1..=3),
        steps: rng.random_range(10..=25),
    };
    let cfg = BasisConfig { px: 3, py: 2, pt: 3, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let data = TensorD::from_fn(&[grid.nx, grid.ny, grid.n_frames()], |_| rng.random_range(-1.0..1.0));
    ImplicitDesign::new(&data, &basis, ResponseConvention::Offset).unwrap()
}

/// Noise-free trajectory driven by a rank-one stimulus `zeta ⊗ eta` with
/// uniform decay and no network.
pub fn rank_one_problem() -> (ImplicitDesign, DriftCoefficients) {
    let grid = Grid { nx: 4, ny: 4, x_range: (0.0, 1.0), y_range: (0.0, 1.0), time_step: 0.1, lags: 2, steps: 60 };
    let cfg = BasisConfig { px: 3, py: 3, pt: 5, pl: 2, spatial_degree: 1, temporal_degree: 2, lag_degree: 1, stimulus_onset: 0.0 };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let dims = basis.dims();
    let spatial = TensorD::new(vec![3, 3], vec![0.0, 2.0, 1.0, 3.0, 0.0, 0.0, 1.5, 0.0, 4.0]).unwrap();
    let truth = DriftCoefficients {
        stimulus: Stimulus::RankOne { temporal: vec![0.0, 10.0, 20.0, 5.0, 0.0], spatial },
        network: TensorD::zeros(&dims.network_shape()),
        memory: TensorD::filled(&dims.memory_shape(), -2.0),
    };
    let noise = CovarianceFn::White { variance: 0.0 }.noise_model(&grid).unwrap();
    let data = simulate_euler(&SimConfig { history: None, seed: 1 }, &basis, &truth, &noise).unwrap();
    (ImplicitDesign::new(&data, &basis, ResponseConvention::Offset).unwrap(), truth)
}
