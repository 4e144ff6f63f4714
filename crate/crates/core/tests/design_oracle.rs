mod oracle;

use fieldnet::basis::BasisConfig;
use fieldnet::design::weighted_loss;
use fieldnet::solver::flatten_coefficients;
use fieldnet::{
    compute_convolution_tensor, gradient, linear_predictor, BasisDims, BasisSet, DriftCoefficients, Grid, ImplicitDesign,
    ResponseConvention, Stimulus, TensorD,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng) -> (BasisSet, TensorD) {
    let nx = rng.random_range(1..=4);
    let ny = rng.random_range(1..=4);
    let lags = rng.random_range(1..=3);
    let steps = rng.random_range(2..=12);
    let grid = Grid {
        nx,
        ny,
        x_range: (0.0, rng.random_range(0.5..2.0)),
        y_range: (-1.0, rng.random_range(-0.5..1.0)),
        time_step: rng.random_range(0.05..0.5),
        lags,
        steps,
    };
    let sd = rng.random_range(0..=2);
    let cfg = BasisConfig {
        px: rng.random_range(sd + 1..=3.max(sd + 1)),
        py: rng.random_range(sd + 1..=3.max(sd + 1)),
        pt: rng.random_range(1..=3),
        pl: rng.random_range(1..=3),
        spatial_degree: sd,
        temporal_degree: 0,
        lag_degree: 0,
        stimulus_onset: 0.0,
    };
    let cfg = BasisConfig {
        temporal_degree: rng.random_range(0..cfg.pt),
        lag_degree: rng.random_range(0..cfg.pl),
        ..cfg
    };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let data = TensorD::from_fn(&[nx, ny, grid.n_frames()], |_| rng.random_range(-1.0..1.0));
    (basis, data)
}

fn random_coeffs(dims: &BasisDims, rng: &mut ChaCha8Rng) -> DriftCoefficients {
    let mut draw = |shape: &[usize]| TensorD::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    DriftCoefficients {
        stimulus: Stimulus::Full(draw(&dims.stimulus_shape())),
        network: draw(&dims.network_shape()),
        memory: draw(&dims.memory_shape()),
    }
}

fn unflatten(theta: &[f64], dims: &BasisDims) -> DriftCoefficients {
    let (ns, nn) = (dims.n_stimulus(), dims.n_network());
    DriftCoefficients {
        stimulus: Stimulus::Full(TensorD::new(dims.stimulus_shape().to_vec(), theta[..ns].to_vec()).unwrap()),
        network: TensorD::new(dims.network_shape().to_vec(), theta[ns..ns + nn].to_vec()).unwrap(),
        memory: TensorD::new(dims.memory_shape().to_vec(), theta[ns + nn..].to_vec()).unwrap(),
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[test]
fn convolution_tensor_matches_triple_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = Grid { nx: 4, ny: 4, x_range: (0.0, 1.0), y_range: (0.0, 1.0), time_step: 0.1, lags: 3, steps: 17 };
    let cfg = BasisConfig { px: 3, py: 2, pt: 3, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let data = TensorD::from_fn(&[4, 4, 20], |_| rng.random_range(-1.0..1.0));
    let fast = compute_convolution_tensor(&data, &basis).unwrap();
    let slow = oracle::naive_convolution(&data, &basis);
    assert!((fast - slow).amax() <= 1e-10);
}

#[test]
fn constant_data_gives_constant_rows() {
    let grid = Grid { nx: 3, ny: 3, x_range: (0.0, 1.0), y_range: (0.0, 1.0), time_step: 0.2, lags: 2, steps: 6 };
    let cfg = BasisConfig { px: 3, py: 3, pt: 2, pl: 2, spatial_degree: 1, temporal_degree: 1, lag_degree: 1, stimulus_onset: 0.0 };
    let basis = BasisSet::build(&grid, &cfg).unwrap();
    let data = TensorD::filled(&[3, 3, grid.n_frames()], 1.0);
    let conv = compute_convolution_tensor(&data, &basis).unwrap();
    let slow = oracle::naive_convolution(&data, &basis);
    for k in 1..6 {
        assert!((conv.row(k) - conv.row(0)).amax() < 1e-14);
    }
    assert!((conv - slow).amax() < 1e-12);
}

#[test]
fn matrix_free_design_matches_explicit_design() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..50 {
        let (basis, data) = random_instance(&mut rng);
        let convention = if case % 2 == 0 { ResponseConvention::Offset } else { ResponseConvention::Level };
        let design = ImplicitDesign::new(&data, &basis, convention).unwrap();
        let (x, y) = oracle::explicit_design(&data, &basis, convention);
        assert!(max_rel(design.response.data(), &y) <= 1e-12);

        let dims = basis.dims();
        let theta = random_coeffs(&dims, &mut rng);
        let flat = DVector::from_vec(flatten_coefficients(&theta));
        let pred = linear_predictor(&theta, &design).unwrap();
        let dense = &x * &flat;
        assert!(max_rel(pred.data(), dense.as_slice()) <= 1e-10, "case {case}: predictor");

        let r = design.response.sub(&pred).unwrap();
        let g = gradient(&r, &design, None).unwrap();
        let dense_g = -(x.transpose() * DVector::from_column_slice(r.data()));
        assert!(max_rel(&flatten_coefficients(&g), dense_g.as_slice()) <= 1e-10, "case {case}: gradient");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let (basis, data) = random_instance(&mut rng);
        let design = ImplicitDesign::new(&data, &basis, ResponseConvention::Offset).unwrap();
        let dims = basis.dims();
        let theta = random_coeffs(&dims, &mut rng);
        let flat = flatten_coefficients(&theta);
        let loss = |v: &[f64]| {
            let p = linear_predictor(&unflatten(v, &dims), &design).unwrap();
            weighted_loss(design.response.sub(&p).unwrap().data(), None)
        };
        let r = design.response.sub(&linear_predictor(&theta, &design).unwrap()).unwrap();
        let g = flatten_coefficients(&gradient(&r, &design, None).unwrap());
        let h = 1e-5;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        for j in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * scale, "coef {j}: {fd} vs {}", g[j]);
        }
    }
}
