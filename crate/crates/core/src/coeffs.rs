//! Coefficient arrays of the three drift components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorD;

/// Marginal basis sizes. The stimulus uses `px x py x pt` coefficients, the
/// network `px x py x px x py x pl` and the short-range memory `px x py`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisDims {
    pub px: usize,
    pub py: usize,
    pub pt: usize,
    pub pl: usize,
}

impl BasisDims {
    pub fn stimulus_shape(&self) -> [usize; 3] {
        [self.px, self.py, self.pt]
    }

    pub fn network_shape(&self) -> [usize; 5] {
        [self.px, self.py, self.px, self.py, self.pl]
    }

    pub fn memory_shape(&self) -> [usize; 2] {
        [self.px, self.py]
    }

    pub fn n_stimulus(&self) -> usize {
        self.px * self.py * self.pt
    }

    pub fn n_network(&self) -> usize {
        self.px * self.py * self.px * self.py * self.pl
    }

    pub fn n_memory(&self) -> usize {
        self.px * self.py
    }

    /// p = p_s + p_w + p_h
    pub fn n_parameters(&self) -> usize {
        self.n_stimulus() + self.n_network() + self.n_memory()
    }
}

/// Parameter count of an unrestricted VAR(L) on D series: L D^2.
pub fn var_parameter_count(lags: usize, pixels: usize) -> u64 {
    lags as u64 * (pixels as u64).pow(2)
}

/// Stimulus coefficients stored either as a full array or as the rank-one
/// factorization `alpha[i, j, k] = temporal[k] * spatial[i, j]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    Full(TensorD),
    RankOne { temporal: Vec<f64>, spatial: TensorD },
}

impl Stimulus {
    pub fn assemble(&self) -> TensorD {
        match self {
            Stimulus::Full(a) => a.clone(),
            Stimulus::RankOne { temporal, spatial } => {
                let (px, py) = (spatial.shape()[0], spatial.shape()[1]);
                let mut data = Vec::with_capacity(px * py * temporal.len());
                for z in temporal {
                    data.extend(spatial.data().iter().map(|e| z * e));
                }
                TensorD::new(vec![px, py, temporal.len()], data).unwrap()
            }
        }
    }

    pub fn count_nonzero(&self) -> usize {
        match self {
            Stimulus::Full(a) => a.count_nonzero(),
            Stimulus::RankOne { temporal, spatial } => {
                temporal.iter().filter(|v| **v != 0.0).count() * spatial.count_nonzero()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftCoefficients {
    pub stimulus: Stimulus,
    pub network: TensorD,
    pub memory: TensorD,
}

impl DriftCoefficients {
    pub fn zeros(dims: &BasisDims) -> Self {
        Self {
            stimulus: Stimulus::Full(TensorD::zeros(&dims.stimulus_shape())),
            network: TensorD::zeros(&dims.network_shape()),
            memory: TensorD::zeros(&dims.memory_shape()),
        }
    }

    /// Shape check against `dims`.
    pub fn check(&self, dims: &BasisDims) -> Result<()> {
        let ok = match &self.stimulus {
            Stimulus::Full(a) => a.shape() == dims.stimulus_shape(),
            Stimulus::RankOne { temporal, spatial } => {
                temporal.len() == dims.pt && spatial.shape() == dims.memory_shape()
            }
        };
        if !ok
            || self.network.shape() != dims.network_shape()
            || self.memory.shape() != dims.memory_shape()
        {
            return Err(Error::Shape(format!("coefficients do not match {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> BasisDims {
        let n = self.network.shape();
        let pt = match &self.stimulus {
            Stimulus::Full(a) => a.shape()[2],
            Stimulus::RankOne { temporal, .. } => temporal.len(),
        };
        BasisDims { px: n[0], py: n[1], pt, pl: n[4] }
    }
}
