//! ADMM and over-relaxed ADMM for linear quadratic problems, with automatic
//! selection of the penalty parameter (theta) and relaxation parameter (alpha)
//! by spectral-radius analysis of the fixed-point iteration matrix.
//!
//! The crate provides:
//! - structured linear operators (dense, Gaussian blur, Fourier sampling,
//!   periodic gradient, registration Jacobian) with forward/adjoint
//!   application and explicit Gram spectra where the DFT diagonalizes them;
//! - the linear quadratic problem (mu/2)||Au - f||^2 + (1/2)||Lu||^2 with
//!   objective, augmented Lagrangian and normal-equation ground truth;
//! - the fixed-point iteration matrix I + alpha*Q, its extremal eigenvalues
//!   (dense, explicit-symbol and matrix-free power-iteration routes), spectral
//!   radius and convergence-factor estimates;
//! - parameter tuning: finite-difference gradient descent on the spectral
//!   objectives, the closed-form relaxation parameter, and closed-form
//!   penalties for deblurring and MRI reconstruction;
//! - solvers (ADMM, over-relaxed ADMM, GD, Nesterov GD, restarted Nesterov
//!   GD, CG) with per-iteration convergence traces;
//! - experiment pipelines (random instances, deblurring, MRI reconstruction,
//!   diffeomorphic registration) and a command-line front end.

pub mod applications;
pub mod cli;
pub mod error;
pub mod fft;
pub mod lqp;
pub mod operators;
pub(crate) mod ridge;
pub mod solvers;
pub mod spectral;
pub mod tuning;

pub use error::{Error, Result};
pub use lqp::{GroundTruth, LQProblem};
pub use operators::{Field, GridDims, LinearOperator, Spectrum};
pub use solvers::{ConvergenceTrace, Method, SolverParams, StopReason};
pub use spectral::{IterationOperator, OperatorMode, SpectralSummary};
pub use tuning::{MriConstants, ObjectiveKind, TunerConfig, TunerResult};
