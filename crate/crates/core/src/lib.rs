//! Random-matrix laboratory for the eigenvalue density of two-layer neural
//! tangent kernels when the sample size grows like the product of input
//! dimension and width (`n ≍ d p`).
//!
//! The theory side builds the limiting density from Marchenko–Pastur maps of
//! a covariance-tensor law; the simulation side samples the kernels and
//! computes their spectra so the two can be compared.

pub mod activation;
pub mod error;
pub mod free_ops;
pub mod linalg;
pub mod measure;
pub mod pipeline;
pub mod quadrature;
pub mod sim;
pub mod tensor;

pub use activation::{hermite_stats, Activation, ActivationStats};
pub use error::{Error, Result};
pub use measure::{
    affine, convolve_classical, distance_ks, distance_w1, mixture, ComplexPoint, Grid,
    SpectralMeasure,
};
