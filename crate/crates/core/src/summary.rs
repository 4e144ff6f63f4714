//! Summaries of a fitted network kernel `w(x, y, x', y', r)`: degree and
//! mean-strength maps, a radial separation profile, and a delay/value
//! histogram. Integrals are Riemann sums over grid cells and lag nodes.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::BasisSet;
use crate::coeffs::DriftCoefficients;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rho::rho_chain;
use crate::tensor::TensorD;

/// Network weights on the grid for lag node `r`, as a `D x D` matrix with
/// targets along rows and sources along columns.
pub fn network_slab(network: &TensorD, basis: &BasisSet, r: usize) -> Result<DMatrix<f64>> {
    let lags = basis.grid.lags;
    if r >= lags {
        return Err(Error::Bounds { index: vec![r], shape: vec![lags] });
    }
    let phi_l = basis.phi_l_nodes()?;
    let row = phi_l.rows(r, 1).into_owned();
    let w = rho_chain(&[&basis.phi_x, &basis.phi_y, &basis.phi_x, &basis.phi_y, &row], network)?;
    let d = basis.grid.n_pixels();
    Ok(DMatrix::from_column_slice(d, d, w.data()))
}

fn network_slabs(network: &TensorD, basis: &BasisSet) -> Result<Vec<DMatrix<f64>>> {
    if network.shape() != basis.dims().network_shape() {
        return Err(Error::Shape(format!("network coefficients {:?}, expected {:?}", network.shape(), basis.dims().network_shape())));
    }
    (0..basis.grid.lags).map(|r| network_slab(network, basis, r)).collect()
}

/// Default support threshold: `1e-8` times the largest weight on the grid.
pub fn default_epsilon(network: &TensorD, basis: &BasisSet) -> Result<f64> {
    let slabs = network_slabs(network, basis)?;
    Ok(1e-8 * slabs.iter().map(|s| s.amax()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegreeMaps {
    /// Measure of sources and lags with `|w| > ε`, per target pixel.
    pub deg_in: TensorD,
    /// Measure of targets and lags with `|w| > ε`, per source pixel.
    pub deg_out: TensorD,
    /// Mean `|w|` over the in-support; zero where the degree is zero.
    pub w_in: TensorD,
    pub w_out: TensorD,
    pub epsilon: f64,
}

pub fn compute_degree_maps(network: &TensorD, basis: &BasisSet, epsilon: Option<f64>) -> Result<DegreeMaps> {
    let slabs = network_slabs(network, basis)?;
    let eps = match epsilon {
        Some(e) if e >= 0.0 => e,
        Some(_) => return Err(Error::Invalid("ε must be non-negative".into())),
        None => 1e-8 * slabs.iter().map(|s| s.amax()).fold(0.0, f64::max),
    };
    let g = &basis.grid;
    let d = g.n_pixels();
    let cell = g.cell_area() * g.time_step;
    let mut deg_in = vec![0.0; d];
    let mut deg_out = vec![0.0; d];
    let mut mass_in = vec![0.0; d];
    let mut mass_out = vec![0.0; d];
    for slab in &slabs {
        for src in 0..d {
            for tgt in 0..d {
                let v = slab[(tgt, src)].abs();
                if v > eps {
                    deg_in[tgt] += cell;
                    deg_out[src] += cell;
                    mass_in[tgt] += v * cell;
                    mass_out[src] += v * cell;
                }
            }
        }
    }
    let mean = |mass: &[f64], deg: &[f64]| -> Vec<f64> {
        mass.iter().zip(deg).map(|(m, d)| if *d > 0.0 { m / d } else { 0.0 }).collect()
    };
    let shape = vec![g.nx, g.ny];
    Ok(DegreeMaps {
        w_in: TensorD::new(shape.clone(), mean(&mass_in, &deg_in))?,
        w_out: TensorD::new(shape.clone(), mean(&mass_out, &deg_out))?,
        deg_in: TensorD::new(shape.clone(), deg_in)?,
        deg_out: TensorD::new(shape, deg_out)?,
        epsilon: eps,
    })
}

/// `W(s, t)` over a grid of separations (rows) and delays (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationProfile {
    pub radii: Vec<f64>,
    pub delays: Vec<f64>,
    pub values: DMatrix<f64>,
}

fn check_profile_args(grid: &Grid, radii: &[f64], delays: &[f64], n_theta: usize) -> Result<()> {
    if n_theta == 0 {
        return Err(Error::Invalid("need at least one angle node".into()));
    }
    if radii.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Invalid("separations must be finite and non-negative".into()));
    }
    let tau = grid.lag_window();
    if delays.iter().any(|t| !(*t >= 0.0 && *t <= tau)) {
        return Err(Error::Invalid(format!("delays must lie in [0, {tau}]")));
    }
    Ok(())
}

fn inside(grid: &Grid, x: f64, y: f64) -> bool {
    x >= grid.x_range.0 && x <= grid.x_range.1 && y >= grid.y_range.0 && y <= grid.y_range.1
}

/// Separation profile of an arbitrary kernel
/// `w((x, y), (x', y'), lag)`: for each source cell centre, integrate `w`
/// over the circle of radius `s` around it (targets off the domain count
/// as zero), then sum over sources with weight `Δ_s`.
pub fn separation_profile_fn(
    w: impl Fn((f64, f64), (f64, f64), f64) -> f64,
    grid: &Grid,
    radii: &[f64],
    delays: &[f64],
    n_theta: usize,
) -> Result<SeparationProfile> {
    check_profile_args(grid, radii, delays, n_theta)?;
    let xs = grid.x_centers();
    let ys = grid.y_centers();
    let area = grid.cell_area();
    let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let mut values = DMatrix::zeros(radii.len(), delays.len());
    for (b, &t) in delays.iter().enumerate() {
        for (a, &s) in radii.iter().enumerate() {
            let mut total = 0.0;
            for &sy in &ys {
                for &sx in &xs {
                    let mut ring = 0.0;
                    for q in 0..n_theta {
                        let th = q as f64 * dtheta;
                        let (tx, ty) = (sx + s * th.cos(), sy + s * th.sin());
                        if inside(grid, tx, ty) {
                            ring += w((tx, ty), (sx, sy), -t);
                        }
                    }
                    total += ring * s * dtheta * area;
                }
            }
            values[(a, b)] = total;
        }
    }
    Ok(SeparationProfile { radii: radii.to_vec(), delays: delays.to_vec(), values })
}

/// Separation profile of the fitted network expansion.
pub fn compute_separation_profile(
    network: &TensorD,
    basis: &BasisSet,
    radii: &[f64],
    delays: &[f64],
    n_theta: usize,
) -> Result<SeparationProfile> {
    let dims = basis.dims();
    if network.shape() != dims.network_shape() {
        return Err(Error::Shape("network coefficients do not match the basis".into()));
    }
    let grid = &basis.grid;
    check_profile_args(grid, radii, delays, n_theta)?;
    let (ix, iy) = (DMatrix::identity(dims.px, dims.px), DMatrix::identity(dims.py, dims.py));
    // for each delay: px x py x N_x x N_y array of target coefficients per source pixel
    let per_delay: Vec<TensorD> = delays
        .iter()
        .map(|&t| {
            let row = DMatrix::from_row_slice(1, dims.pl, &basis.spec_l.eval_row(-t)?);
            rho_chain(&[&ix, &iy, &basis.phi_x, &basis.phi_y, &row], network)
        })
        .collect::<Result<_>>()?;
    let pxy = dims.px * dims.py;
    let lookup = |b: usize, src: (usize, usize), tx: f64, ty: f64| -> Result<f64> {
        let (fx, vx) = basis.spec_x.eval_local(tx)?;
        let (fy, vy) = basis.spec_y.eval_local(ty)?;
        let c = &per_delay[b].data()[pxy * (src.0 + grid.nx * src.1)..];
        let mut v = 0.0;
        for (j, wy) in vy.iter().enumerate() {
            for (i, wx) in vx.iter().enumerate() {
                v += wx * wy * c[(fx + i) + dims.px * (fy + j)];
            }
        }
        Ok(v)
    };
    let xs = grid.x_centers();
    let ys = grid.y_centers();
    let area = grid.cell_area();
    let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    let mut values = DMatrix::zeros(radii.len(), delays.len());
    for b in 0..delays.len() {
        for (a, &s) in radii.iter().enumerate() {
            let mut total = 0.0;
            for (j, &sy) in ys.iter().enumerate() {
                for (i, &sx) in xs.iter().enumerate() {
                    let mut ring = 0.0;
                    for q in 0..n_theta {
                        let th = q as f64 * dtheta;
                        let (tx, ty) = (sx + s * th.cos(), sy + s * th.sin());
                        if inside(grid, tx, ty) {
                            ring += lookup(b, (i, j), tx, ty)?;
                        }
                    }
                    total += ring * s * dtheta * area;
                }
            }
            values[(a, b)] = total;
        }
    }
    Ok(SeparationProfile { radii: radii.to_vec(), delays: delays.to_vec(), values })
}

/// Joint histogram of (delay, weight) over grid nodes with `|w| > ε`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightHistogram {
    pub delay_edges: Vec<f64>,
    pub value_edges: Vec<f64>,
    /// `counts[delay_bin][value_bin]`
    pub counts: Vec<Vec<u64>>,
    pub epsilon: f64,
}

impl WeightHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn bin(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if v < edges[0] || v > edges[n] {
        return None;
    }
    Some((edges.partition_point(|e| *e <= v)).clamp(1, n) - 1)
}

/// Delays are `-t_l` at the lag nodes; values are binned uniformly between
/// the smallest and largest counted weight.
pub fn compute_weight_density(
    network: &TensorD,
    basis: &BasisSet,
    delay_edges: &[f64],
    n_value_bins: usize,
    epsilon: Option<f64>,
) -> Result<WeightHistogram> {
    if delay_edges.len() < 2 || delay_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Invalid("delay bin edges must be strictly increasing with at least two entries".into()));
    }
    if n_value_bins == 0 {
        return Err(Error::Invalid("need at least one value bin".into()));
    }
    let slabs = network_slabs(network, basis)?;
    let eps = match epsilon {
        Some(e) if e >= 0.0 => e,
        Some(_) => return Err(Error::Invalid("ε must be non-negative".into())),
        None => 1e-8 * slabs.iter().map(|s| s.amax()).fold(0.0, f64::max),
    };
    let delays: Vec<f64> = basis.grid.lag_nodes().iter().map(|t| -t).collect();
    let mut points = Vec::new();
    for (slab, &delay) in slabs.iter().zip(&delays) {
        if let Some(db) = bin(delay_edges, delay) {
            points.extend(slab.iter().filter(|v| v.abs() > eps).map(|&v| (db, v)));
        }
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, v)| (a.min(v), b.max(v)));
    let (lo, hi) = if points.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        let pad = 0.5 * lo.abs().max(f64::MIN_POSITIVE);
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    };
    let value_edges: Vec<f64> = (0..=n_value_bins).map(|i| lo + (hi - lo) * i as f64 / n_value_bins as f64).collect();
    let mut counts = vec![vec![0u64; n_value_bins]; delay_edges.len() - 1];
    for (db, v) in points {
        let vb = bin(&value_edges, v).unwrap_or(if v < lo { 0 } else { n_value_bins - 1 });
        counts[db][vb] += 1;
    }
    Ok(WeightHistogram { delay_edges: delay_edges.to_vec(), value_edges, counts, epsilon: eps })
}

/// `s(x_m, y_n, t_k)` for k = 0..M-1.
pub fn stimulus_timecourse(coeffs: &DriftCoefficients, basis: &BasisSet) -> Result<TensorD> {
    coeffs.check(&basis.dims())?;
    rho_chain(&[&basis.phi_x, &basis.phi_y, &basis.phi_t], &coeffs.stimulus.assemble())
}

/// `h(x_m, y_n)` on the grid.
pub fn memory_map(coeffs: &DriftCoefficients, basis: &BasisSet) -> Result<TensorD> {
    coeffs.check(&basis.dims())?;
    rho_chain(&[&basis.phi_x, &basis.phi_y], &coeffs.memory)
}
