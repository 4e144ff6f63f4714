//! Simulation and sparse drift estimation for space-discretized stochastic
//! delay differential equations on a rectangular grid.
//!
//! Drift components are expanded in tensor-product B-spline bases; the
//! resulting linear array model is handled without forming its design
//! matrix, using the rotated H-transform [`rho`].

pub mod basis;
pub mod bspline;
pub mod coeffs;
pub mod design;
pub mod dta;
pub mod error;
pub mod grid;
pub mod lasso;
pub mod mrce;
pub mod noise;
pub mod precision;
pub mod rho;
pub mod simulate;
pub mod solver;
pub mod summary;
pub mod tensor;

pub use basis::{BasisConfig, BasisSet};
pub use bspline::{eval_bspline_basis, integrate_bspline_basis, BSplineSpec};
pub use coeffs::{var_parameter_count, BasisDims, DriftCoefficients, Stimulus};
pub use design::{compute_convolution_tensor, gradient, linear_predictor, FrameWeight, ImplicitDesign, ResponseConvention};
pub use error::{Error, Result};
pub use grid::Grid;
pub use noise::{CovarianceFn, NoiseModel};
pub use rho::{rho, rho_chain, rho_transposed, rho_transposed_chain};
pub use simulate::{simulate_euler, simulate_many, SimConfig};
pub use lasso::{LassoOptions, LassoProblem, LinearOperator};
pub use mrce::{fit_mrce, MrceFit};
pub use precision::{graphical_lasso, GlassoOptions, PrecisionEstimate};
pub use solver::{fit_block_relaxation, fit_path, lambda_max, LambdaFit, PathFit, PenaltyWeights, SolverConfig};
pub use tensor::TensorD;
