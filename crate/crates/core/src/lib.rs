//! Semiparametric estimation and inference for directed dyadic
//! link-formation models with two-way degree heterogeneity.
//!
//! Edges follow `A_ij = I(α_i + β_j + s·X_ij1 + Z_ijᵀη − ε_ij > 0)` with an
//! unknown error law. A special regressor `X_ij1` and its estimated
//! conditional density turn the binary outcome into a response that is
//! linear in `(α, β, η)`; η is estimated after projecting out the degree
//! design and `(α, β)` by closed-form least squares. Gaussian multiplier
//! draws calibrate confidence intervals, sparse-signal tests, support
//! recovery and degree-heterogeneity tests.
//!
//! All numerical code is generic over [`Scalar`]; the aliases below fix `f64`.

pub mod design;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod network;
pub mod scalar;
pub mod simulation;
pub mod weighted;

pub use error::{Error, ErrorClass, Result};
pub use estimator::{fit, BandwidthChoice, FitOptions, IsolatedPolicy};
pub use inference::{Block, CiMethod, Contrast, CovMode};
pub use kernel::KernelFamily;
pub use scalar::Scalar;
pub use weighted::{fit_weighted, XiCovarianceForm};

pub type Network = network::DirectedNetwork<f64>;
pub type ModelFit = estimator::ModelFit<f64>;
pub type WeightedModelFit = weighted::WeightedModelFit<f64>;
pub type CovarianceModel = inference::CovarianceModel<f64>;
pub type WeightedCovariance = weighted::WeightedCovariance<f64>;
pub type DrawSet = inference::DrawSet<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type FitOptions64 = estimator::FitOptions<f64>;
