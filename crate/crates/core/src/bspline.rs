//! Clamped B-spline bases: Cox–de Boor evaluation and exact cell integrals.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack when deciding whether a point lies inside the domain.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineSpec {
    degree: usize,
    knots: Vec<f64>,
}

impl BSplineSpec {
    /// Clamped knot vector: `degree + 1` copies of each boundary, interior
    /// knots strictly inside `(lo, hi)` and non-decreasing.
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let k = degree + 1;
        if knots.len() < 2 * k {
            return Err(Error::Spline(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * k,
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] <= w[1])) || knots.iter().any(|t| !t.is_finite()) {
            return Err(Error::Spline("knots must be finite and non-decreasing".into()));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if !(lo < hi) {
            return Err(Error::Spline("empty domain".into()));
        }
        let head = knots.iter().take_while(|&&t| t == lo).count();
        let tail = knots.iter().rev().take_while(|&&t| t == hi).count();
        if head != k || tail != k {
            return Err(Error::Spline(format!(
                "boundary multiplicity must be {k}, got {head} and {tail}"
            )));
        }
        Ok(Self { degree, knots })
    }

    /// `n_basis` functions with uniformly spaced interior knots on `[lo, hi]`.
    pub fn clamped_uniform(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::Spline(format!(
                "{n_basis} basis functions is too few for degree {degree}"
            )));
        }
        if !(lo < hi) {
            return Err(Error::Spline(format!("empty domain [{lo}, {hi}]")));
        }
        let n_interior = n_basis - degree - 1;
        let mut knots = vec![lo; degree + 1];
        let step = (hi - lo) / (n_interior + 1) as f64;
        knots.extend((1..=n_interior).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.domain();
        let slack = DOMAIN_SLACK * (hi - lo);
        x >= lo - slack && x <= hi + slack
    }

    fn check(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !self.contains(x) || !x.is_finite() {
            return Err(Error::Domain { point: x, lo, hi });
        }
        Ok(x.clamp(lo, hi))
    }

    /// Index `s` with `knots[s] <= x < knots[s + 1]`; the right end maps to
    /// the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.n_basis();
        if x >= self.knots[n] {
            return n - 1;
        }
        // first knot strictly greater than x, minus one
        let upper = self.knots[p..=n].partition_point(|&t| t <= x) + p;
        upper - 1
    }

    /// The `degree + 1` possibly non-zero basis values at `x` and the index
    /// of the first of them.
    pub fn eval_local(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        let x = self.check(x)?;
        let p = self.degree;
        let s = self.span(x);
        let t = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((s - p, n))
    }

    /// Row of all basis values at `x`.
    pub fn eval_row(&self, x: f64) -> Result<Vec<f64>> {
        let (first, local) = self.eval_local(x)?;
        let mut row = vec![0.0; self.n_basis()];
        row[first..first + local.len()].copy_from_slice(&local);
        Ok(row)
    }

    /// The spline of one higher degree on the same breakpoints, with one
    /// extra knot at each end. Its basis carries the antiderivatives.
    fn elevated(&self) -> Self {
        let (lo, hi) = self.domain();
        let mut knots = Vec::with_capacity(self.knots.len() + 2);
        knots.push(lo);
        knots.extend_from_slice(&self.knots);
        knots.push(hi);
        Self { degree: self.degree + 1, knots }
    }

    /// `F_q(x) = integral_lo^x phi_q`, for all `q`.
    ///
    /// Uses `F_i(x) = (t_{i+k+1} - t_i)/(k+1) * sum_{j > i} B'_j(x)` with
    /// `B'` the degree `k+1` basis on the knot vector padded by one knot at
    /// each end.
    fn antiderivative_row(&self, elevated: &Self, x: f64) -> Result<Vec<f64>> {
        let up = elevated.eval_row(x)?;
        let k = self.degree;
        let n = self.n_basis();
        let t = &self.knots;
        // suffix sums of the elevated basis, index j = i+1 .. n
        let mut out = vec![0.0; n];
        let mut tail = 0.0;
        for i in (0..n).rev() {
            tail += up[i + 1];
            out[i] = (t[i + k + 1] - t[i]) / (k + 1) as f64 * tail;
        }
        Ok(out)
    }
}

/// Basis matrix with one row per point.
pub fn eval_bspline_basis(spec: &BSplineSpec, points: &[f64]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(points.len(), spec.n_basis());
    for (i, &x) in points.iter().enumerate() {
        let (first, local) = spec.eval_local(x)?;
        for (j, v) in local.into_iter().enumerate() {
            m[(i, first + j)] = v;
        }
    }
    Ok(m)
}

/// Entry `(i, q)` is the integral of basis function `q` over `intervals[i]`.
pub fn integrate_bspline_basis(spec: &BSplineSpec, intervals: &[(f64, f64)]) -> Result<DMatrix<f64>> {
    let elevated = spec.elevated();
    let mut m = DMatrix::zeros(intervals.len(), spec.n_basis());
    for (i, &(a, b)) in intervals.iter().enumerate() {
        if a > b {
            return Err(Error::Invalid(format!("interval [{a}, {b}] is reversed")));
        }
        let fa = spec.antiderivative_row(&elevated, a)?;
        let fb = spec.antiderivative_row(&elevated, b)?;
        for q in 0..spec.n_basis() {
            m[(i, q)] = fb[q] - fa[q];
        }
    }
    Ok(m)
}
