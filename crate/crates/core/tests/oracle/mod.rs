//! Slow, direct reference implementations used only by tests.
#![allow(dead_code)]

use fieldnet::basis::{network_value, BasisSet};
use fieldnet::{ResponseConvention, TensorD};
use nalgebra::DMatrix;

/// `X_d ⊗ ... ⊗ X_1` formed entry by entry.
pub fn kron_chain(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = factors.iter().map(|f| f.nrows()).product();
    let cols: usize = factors.iter().map(|f| f.ncols()).product();
    DMatrix::from_fn(rows, cols, |r, c| {
        let (mut r, mut c) = (r, c);
        let mut v = 1.0;
        for f in factors {
            v *= f[(r % f.nrows(), c % f.ncols())];
            r /= f.nrows();
            c /= f.ncols();
        }
        v
    })
}

/// Row `k`, column `(q3, q4, q5)` of the convolution tensor by the
/// defining triple sum.
pub fn naive_convolution(data: &TensorD, basis: &BasisSet) -> DMatrix<f64> {
    let g = &basis.grid;
    let d = basis.dims();
    let mut out = DMatrix::zeros(g.steps, d.px * d.py * d.pl);
    for k in 0..g.steps {
        for q5 in 0..d.pl {
            for q4 in 0..d.py {
                for q3 in 0..d.px {
                    let mut s = 0.0;
                    for r in 0..g.lags {
                        for j in 0..g.ny {
                            for i in 0..g.nx {
                                s += data.get(&[i, j, k + r]).unwrap()
                                    * basis.phi_x[(i, q3)]
                                    * basis.phi_y[(j, q4)]
                                    * basis.int_l[(r, q5)];
                            }
                        }
                    }
                    out[(k, q3 + d.px * (q4 + d.py * q5))] = s;
                }
            }
        }
    }
    out
}

/// The stacked design `[S | F | H]` with one row per (pixel, step) and
/// columns ordered `vec(alpha), vec(beta), vec(gamma)`, together with the
/// response vector.
pub fn explicit_design(data: &TensorD, basis: &BasisSet, convention: ResponseConvention) -> (DMatrix<f64>, Vec<f64>) {
    let g = &basis.grid;
    let d = basis.dims();
    let (nx, ny, m, lags) = (g.nx, g.ny, g.steps, g.lags);
    let dt = g.time_step;
    let area = g.cell_area();
    let conv = naive_convolution(data, basis);
    let (ns, nn, nm) = (d.n_stimulus(), d.n_network(), d.n_memory());
    let mut x = DMatrix::zeros(nx * ny * m, ns + nn + nm);
    let mut y = vec![0.0; nx * ny * m];
    for k in 0..m {
        for n in 0..ny {
            for mm in 0..nx {
                let row = mm + nx * (n + ny * k);
                let v_now = data.get(&[mm, n, k + lags]).unwrap();
                let v_next = data.get(&[mm, n, k + lags + 1]).unwrap();
                y[row] = match convention {
                    ResponseConvention::Offset => v_next - v_now,
                    ResponseConvention::Level => v_next,
                };
                for q in 0..d.pt {
                    for j in 0..d.py {
                        for i in 0..d.px {
                            let col = i + d.px * (j + d.py * q);
                            x[(row, col)] = dt * area * basis.phi_x[(mm, i)] * basis.phi_y[(n, j)] * basis.phi_t[(k, q)];
                        }
                    }
                }
                for c345 in 0..d.px * d.py * d.pl {
                    for q2 in 0..d.py {
                        for q1 in 0..d.px {
                            let col = ns + q1 + d.px * (q2 + d.py * c345);
                            x[(row, col)] = dt * basis.int_x[(mm, q1)] * basis.int_y[(n, q2)] * conv[(k, c345)];
                        }
                    }
                }
                for j in 0..d.py {
                    for i in 0..d.px {
                        let col = ns + nn + i + d.px * j;
                        x[(row, col)] = dt * area * basis.phi_x[(mm, i)] * basis.phi_y[(n, j)] * v_now;
                    }
                }
            }
        }
    }
    (x, y)
}

/// Network kernel at every (target, source, lag node), evaluated point by
/// point; indexed `[tx, ty, sx, sy, r]`.
pub fn network_on_grid(network: &TensorD, basis: &BasisSet) -> TensorD {
    let g = &basis.grid;
    let coeffs = fieldnet::DriftCoefficients {
        stimulus: fieldnet::Stimulus::Full(TensorD::zeros(&basis.dims().stimulus_shape())),
        network: network.clone(),
        memory: TensorD::zeros(&basis.dims().memory_shape()),
    };
    let xs = g.x_centers();
    let ys = g.y_centers();
    let nodes = g.lag_nodes();
    TensorD::from_fn(&[g.nx, g.ny, g.nx, g.ny, g.lags], |i| {
        network_value(&coeffs, basis, (xs[i[0]], ys[i[1]]), (xs[i[2]], ys[i[3]]), nodes[i[4]]).unwrap()
    })
}

/// `(deg_in, w_in, deg_out, w_out)` by direct summation, each `N_x x N_y`
/// in column-major order.
pub fn naive_degrees(w: &TensorD, basis: &BasisSet, eps: f64) -> [Vec<f64>; 4] {
    let g = &basis.grid;
    let cell = g.cell_area() * g.time_step;
    let d = g.n_pixels();
    let (mut di, mut mi, mut dout, mut mo) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for r in 0..g.lags {
        for sy in 0..g.ny {
            for sx in 0..g.nx {
                for ty in 0..g.ny {
                    for tx in 0..g.nx {
                        let v = w.get(&[tx, ty, sx, sy, r]).unwrap().abs();
                        if v > eps {
                            di[tx + g.nx * ty] += cell;
                            mi[tx + g.nx * ty] += v * cell;
                            dout[sx + g.nx * sy] += cell;
                            mo[sx + g.nx * sy] += v * cell;
                        }
                    }
                }
            }
        }
    }
    let div = |m: &[f64], d: &[f64]| m.iter().zip(d).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect::<Vec<_>>();
    let wi = div(&mi, &di);
    let wo = div(&mo, &dout);
    [di, wi, dout, wo]
}

/// Separation profile by point evaluation of the fitted kernel.
pub fn naive_separation(network: &TensorD, basis: &BasisSet, s: f64, t: f64, n_theta: usize) -> f64 {
    let g = &basis.grid;
    let coeffs = fieldnet::DriftCoefficients {
        stimulus: fieldnet::Stimulus::Full(TensorD::zeros(&basis.dims().stimulus_shape())),
        network: network.clone(),
        memory: TensorD::zeros(&basis.dims().memory_shape()),
    };
    let mut total = 0.0;
    for sy in g.y_centers() {
        for sx in g.x_centers() {
            for q in 0..n_theta {
                let th = 2.0 * std::f64::consts::PI * q as f64 / n_theta as f64;
                let (tx, ty) = (sx + s * th.cos(), sy + s * th.sin());
                if tx < g.x_range.0 || tx > g.x_range.1 || ty < g.y_range.0 || ty > g.y_range.1 {
                    continue;
                }
                let v = network_value(&coeffs, basis, (tx, ty), (sx, sy), -t).unwrap();
                total += v * s * 2.0 * std::f64::consts::PI / n_theta as f64 * g.cell_area();
            }
        }
    }
    total
}

/// Graphical lasso solution via its dual: maximize `log det W` over
/// `W_ii = S_ii`, `|W_ij - S_ij| <= nu`, by projected gradient ascent with
/// backtracking. Returns `W⁻¹`.
pub fn glasso_dual(s: &DMatrix<f64>, nu: f64, iters: usize) -> DMatrix<f64> {
    let n = s.nrows();
    let project = |w: &DMatrix<f64>| {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                s[(i, i)]
            } else {
                let v = 0.5 * (w[(i, j)] + w[(j, i)]);
                v.clamp(s[(i, j)] - nu, s[(i, j)] + nu)
            }
        })
    };
    let logdet = |w: &DMatrix<f64>| w.clone().cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>());
    // S itself is feasible and positive definite
    let mut w = s.clone();
    let mut f = logdet(&w).expect("start must be positive definite");
    let mut step = 1.0;
    for _ in 0..iters {
        let grad = w.clone().try_inverse().unwrap();
        loop {
            let cand = project(&(&w + &grad * step));
            if let Some(fc) = logdet(&cand) {
                if fc >= f {
                    w = cand;
                    f = fc;
                    step *= 1.5;
                    break;
                }
            }
            step *= 0.5;
            if step < 1e-18 {
                return w.try_inverse().unwrap();
            }
        }
    }
    w.try_inverse().unwrap()
}

pub mod scenarios;
