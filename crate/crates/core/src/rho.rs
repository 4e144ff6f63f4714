//! Rotated H-transform.
//!
//! `rho(X, A)` multiplies `X` onto the first mode of `A` and rotates that
//! mode to the back, so for `A` of shape `p1 x p2 x ... x pd` and `X` of
//! shape `n x p1` the result has shape `p2 x ... x pd x n`. Applying it once
//! per mode gives
//!
//! ```text
//! (X_d ⊗ ... ⊗ X_1) vec(A) = vec(rho(X_d, rho(..., rho(X_1, A))))
//! ```
//!
//! without ever forming the Kronecker product.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};
use crate::tensor::TensorD;

pub fn rho(x: &DMatrix<f64>, a: &TensorD) -> Result<TensorD> {
    let p1 = a.shape()[0];
    if x.ncols() != p1 {
        return Err(Error::Shape(format!(
            "rho: factor is {}x{}, array leading mode is {p1}",
            x.nrows(),
            x.ncols()
        )));
    }
    let rest = a.len() / p1;
    let a_mat = DMatrixView::from_slice(a.data(), p1, rest);
    // (rest x n), column-major == tensor [p2, ..., pd, n]; the plain
    // product goes through the blocked gemm kernel, tr_mul does not
    let out = (x * a_mat).transpose();
    let mut shape: Vec<usize> = a.shape()[1..].to_vec();
    shape.push(x.nrows());
    TensorD::new(shape, out.data.into())
}

/// Adjoint of [`rho`]: for `B` of shape `q1 x ... x q_{d-1} x n` and `X`
/// of shape `n x p`, returns the `p x q1 x ... x q_{d-1}` array `A` with
/// `<rho(X, A'), B> = <A', A>` for every `A'`.
pub fn rho_transposed(x: &DMatrix<f64>, b: &TensorD) -> Result<TensorD> {
    let n = *b.shape().last().unwrap();
    if x.nrows() != n {
        return Err(Error::Shape(format!(
            "rho_transposed: factor is {}x{}, array trailing mode is {n}",
            x.nrows(),
            x.ncols()
        )));
    }
    let rest = b.len() / n;
    let b_mat = DMatrixView::from_slice(b.data(), rest, n);
    let out = (b_mat * x).transpose();
    let mut shape = Vec::with_capacity(b.ndim());
    shape.push(x.ncols());
    shape.extend_from_slice(&b.shape()[..b.ndim() - 1]);
    TensorD::new(shape, out.data.into())
}

/// `vec(out) = (X_d ⊗ ... ⊗ X_1) vec(a)` where `factors = [X_1, ..., X_d]`.
pub fn rho_chain(factors: &[&DMatrix<f64>], a: &TensorD) -> Result<TensorD> {
    check_order(factors.len(), a)?;
    let mut cur = rho(factors[0], a)?;
    for x in &factors[1..] {
        cur = rho(x, &cur)?;
    }
    Ok(cur)
}

/// `vec(out) = (X_d ⊗ ... ⊗ X_1)^T vec(b)` where `factors = [X_1, ..., X_d]`.
pub fn rho_transposed_chain(factors: &[&DMatrix<f64>], b: &TensorD) -> Result<TensorD> {
    check_order(factors.len(), b)?;
    let mut cur = b.clone();
    for x in factors.iter().rev() {
        cur = rho_transposed(x, &cur)?;
    }
    Ok(cur)
}

fn check_order(n_factors: usize, a: &TensorD) -> Result<()> {
    if n_factors != a.ndim() {
        return Err(Error::Shape(format!(
            "{n_factors} factors for an order-{} array",
            a.ndim()
        )));
    }
    Ok(())
}
