//! Haar system, dyadic averaging and Besov quasi-norm estimators on finite dyadic grids.

pub mod error;
pub mod grid;
pub mod enumeration;
pub mod haar;
pub mod kernels;
pub mod conv;
pub mod besov;
pub mod extremal;
pub mod harness;

pub use error::{Error, Result};
pub use grid::{lp_norm, second_difference, tensor, DyadicGrid, GridFunction, LebesgueExponent, Line, C64};
pub use haar::{
    analyze, expectation, haar_eval, martingale_difference, masked_level, project, synthesize, CoefficientMask,
    HaarExpansion, HaarIndex,
};
pub use enumeration::{
    check_admissible, check_strongly_admissible, corridor_enumeration, decompose_partial_sum, lex_unit_cube_enumeration,
    list_enumeration, partial_sum, AdmissibilityReport, CubeDecomposition, Enumeration,
};
pub use kernels::{Kernel, TensorKernel};
pub use conv::{convolve, convolve_norm};
pub use besov::{diff_quasinorm, u_predictor, BesovParams, LevelProfile, LocalMeans, QuasiNormReport};
pub use extremal::{Extremal, ExtremalSpec};
pub use harness::{op_lower_bound, run_experiment, Config, Estimator, ExperimentReport, Operator, Verdict};
