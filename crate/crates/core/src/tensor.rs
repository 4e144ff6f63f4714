//! Dense column-major d-dimensional arrays.
//!
//! Element `(i_1, ..., i_d)` lives at linear offset
//! `i_1 + N_1 (i_2 + N_2 (i_3 + ...))`, i.e. the first index varies fastest.
//! This is the same ordering as `vec` of a column-major matrix, so a tensor of
//! shape `(n, m)` and an `n x m` [`nalgebra::DMatrix`] share one data layout.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorD {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TensorD {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&n| n == 0) {
            return Err(Error::Shape(format!("dimensions must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&n| n > 0), "bad shape {shape:?}");
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in out.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        out
    }

    /// Tensor view of a matrix (shape `rows x cols`, same layout).
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { shape: vec![m.nrows(), m.ncols()], data: m.as_slice().to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Zero-based element access.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[offset(index, &self.shape)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let k = offset(index, &self.shape)?;
        self.data[k] = value;
        Ok(())
    }

    /// Same data, new shape with the same number of elements.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// View the tensor as a matrix whose rows run over the first
    /// `split` modes and whose columns run over the remaining ones.
    pub fn as_matrix(&self, split: usize) -> DMatrixView<'_, f64> {
        let rows: usize = self.shape[..split].iter().product();
        let cols = self.data.len() / rows;
        DMatrixView::from_slice(&self.data, rows, cols)
    }

    /// Frame `k` of an order-3 tensor, i.e. the contiguous slab `[.., .., k]`.
    pub fn frame(&self, k: usize) -> &[f64] {
        let slab = self.shape[0] * self.shape[1];
        &self.data[k * slab..(k + 1) * slab]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        let slab = self.shape[0] * self.shape[1];
        &mut self.data[k * slab..(k + 1) * slab]
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        self.check_same(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += c * b);
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }
}

/// Elementwise product of two equally shaped tensors.
pub fn hadamard(a: &TensorD, b: &TensorD) -> Result<TensorD> {
    a.check_same(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(TensorD { shape: a.shape.clone(), data })
}

/// One-based multi-index to one-based linear index, first index fastest.
pub fn vec_index(index: &[usize], shape: &[usize]) -> Result<usize> {
    if index.len() != shape.len() || index.iter().zip(shape).any(|(&i, &n)| i == 0 || i > n) {
        return Err(Error::Bounds { index: index.to_vec(), shape: shape.to_vec() });
    }
    let zero: Vec<usize> = index.iter().map(|i| i - 1).collect();
    Ok(offset(&zero, shape)? + 1)
}

/// Inverse of [`vec_index`].
pub fn unvec_index(linear: usize, shape: &[usize]) -> Result<Vec<usize>> {
    let total: usize = shape.iter().product();
    if linear == 0 || linear > total {
        return Err(Error::Bounds { index: vec![linear], shape: vec![total] });
    }
    let mut rem = linear - 1;
    Ok(shape
        .iter()
        .map(|&n| {
            let i = rem % n;
            rem /= n;
            i + 1
        })
        .collect())
}

/// Zero-based multi-index to zero-based linear offset.
pub fn offset(index: &[usize], shape: &[usize]) -> Result<usize> {
    if index.len() != shape.len() || index.iter().zip(shape).any(|(&i, &n)| i >= n) {
        return Err(Error::Bounds { index: index.to_vec(), shape: shape.to_vec() });
    }
    let mut k = 0;
    for (&i, &n) in index.iter().zip(shape).rev() {
        k = k * n + i;
    }
    Ok(k)
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_index_examples() {
        assert_eq!(vec_index(&[1, 1], &[3, 4]).unwrap(), 1);
        assert_eq!(vec_index(&[2, 3], &[3, 4]).unwrap(), 8);
        assert!(vec_index(&[4, 1], &[3, 4]).is_err());
        assert!(vec_index(&[0, 1], &[3, 4]).is_err());
    }

    #[test]
    fn vec_index_matches_enumeration() {
        // enumerate with the first index fastest and compare
        let shape = [3, 4];
        let mut expected = 1;
        for j in 1..=4 {
            for i in 1..=3 {
                assert_eq!(vec_index(&[i, j], &shape).unwrap(), expected);
                expected += 1;
            }
        }
    }

    #[test]
    fn vec_index_is_bijective() {
        let shape = [2, 2, 2];
        let mut seen = vec![false; 8];
        for i in 1..=2 {
            for j in 1..=2 {
                for k in 1..=2 {
                    let l = vec_index(&[i, j, k], &shape).unwrap();
                    assert!(!seen[l - 1]);
                    seen[l - 1] = true;
                    assert_eq!(unvec_index(l, &shape).unwrap(), vec![i, j, k]);
                }
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn hadamard_cases() {
        let a = TensorD::new(vec![2, 2], vec![1.0, -2.0, 3.5, 4.0]).unwrap();
        assert_eq!(hadamard(&a, &TensorD::filled(&[2, 2], 1.0)).unwrap(), a);
        assert_eq!(hadamard(&a, &TensorD::zeros(&[2, 2])).unwrap(), TensorD::zeros(&[2, 2]));
        let b = TensorD::new(vec![2, 2], vec![0.5, 3.0, -1.0, 2.0]).unwrap();
        let h = hadamard(&a, &b).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = a.get(&[i, j]).unwrap() * b.get(&[i, j]).unwrap();
                assert_eq!(h.get(&[i, j]).unwrap(), want);
            }
        }
        assert!(hadamard(&a, &TensorD::zeros(&[4])).is_err());
    }

    #[test]
    fn constructor_checks_length() {
        assert!(TensorD::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(TensorD::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn from_fn_uses_column_major_order() {
        let t = TensorD::from_fn(&[2, 3], |ix| (ix[0] + 10 * ix[1]) as f64);
        assert_eq!(t.data(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }
}
