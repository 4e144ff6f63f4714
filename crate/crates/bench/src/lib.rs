//! Fixtures shared by the benches.

use fieldnet::basis::BasisConfig;
use fieldnet::{BasisSet, DriftCoefficients, Grid, ImplicitDesign, ResponseConvention, Stimulus, TensorD};

/// Deterministic, non-degenerate filler values in [-1, 1].
pub fn wiggle(i: usize) -> f64 {
    ((i as f64 * 0.7548776662).fract() * 2.0 - 1.0) * (1.0 + (i as f64).sin()) * 0.5
}

/// An `n x n` grid with the default basis sizes shrunk to fit.
pub fn basis(n: usize, lags: usize, steps: usize) -> BasisSet {
    let grid = Grid { nx: n, ny: n, x_range: (0.0, n as f64), y_range: (0.0, n as f64), time_step: 1.0, lags, steps };
    let p = (n / 2).max(3);
    let cfg = BasisConfig { px: p, py: p, pt: 8, pl: 4, spatial_degree: 2, temporal_degree: 3, lag_degree: 2, stimulus_onset: 0.0 };
    BasisSet::build(&grid, &cfg).expect("valid bench basis")
}

pub fn data(basis: &BasisSet) -> TensorD {
    let g = &basis.grid;
    let mut i = 0;
    TensorD::from_fn(&[g.nx, g.ny, g.n_frames()], |_| {
        i += 1;
        wiggle(i)
    })
}

pub fn design(n: usize, lags: usize, steps: usize) -> ImplicitDesign {
    let b = basis(n, lags, steps);
    ImplicitDesign::new(&data(&b), &b, ResponseConvention::Offset).expect("valid bench design")
}

pub fn coefficients(design: &ImplicitDesign) -> DriftCoefficients {
    let dims = design.dims();
    let fill = |shape: &[usize], off: usize| {
        let mut i = off;
        TensorD::from_fn(shape, |_| {
            i += 1;
            0.1 * wiggle(i)
        })
    };
    DriftCoefficients {
        stimulus: Stimulus::RankOne { temporal: (0..dims.pt).map(wiggle).collect(), spatial: fill(&dims.memory_shape(), 7) },
        network: fill(&dims.network_shape(), 11),
        memory: fill(&dims.memory_shape(), 13),
    }
}
