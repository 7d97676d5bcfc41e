//! Limiting eigenvalue densities of Gaussian block random matrices.
//!
//! A model is a grid of named Gaussian blocks (or an explicit covariance
//! tensor). The limiting spectral law is characterized by a matrix-valued
//! Cauchy transform that solves a quadratic fixed-point equation; this crate
//! solves that equation, inverts the transform into a density and checks the
//! result against a pairing oracle and Monte Carlo sampling.

pub mod density;
pub mod eta;
pub mod mcsim;
pub mod model;
pub mod oracle;
pub mod presets;
pub mod solver;
pub mod wishart;

pub use eta::CMatrix;
