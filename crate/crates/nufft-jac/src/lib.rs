//! Non-uniform Fourier transforms with analytic Jacobian operators.
//!
//! This crate evaluates the non-uniform discrete Fourier transform (NUDFT)
//! both exactly and through a gridding NUFFT, and — the part that sets it
//! apart from a plain NUFFT library — provides closed-form Jacobian-vector
//! and vector-Jacobian products of the forward, adjoint, Gram, and
//! regularized-inverse operators with respect to both the image and the
//! sample coordinates. Those operators compose into model-based MRI
//! reconstruction (CG-SENSE, quadratic penalized least squares, compressed
//! sensing) and a stochastic optimizer that learns k-space sampling
//! trajectories against a chosen reconstruction.
//!
//! The layering is strictly bottom-up:
//!
//! - [`grid`]: image grids, complex images, k-space data, trajectories.
//! - [`metrics`]: NRMSD / PSNR / SSIM used for validation and evaluation.
//! - [`io`]: the `CIMG1`, `TRAJ1`, `KSPC1` and `FLDT1` file formats.
//! - [`ndft`]: the exact O(MN) transform — the oracle everything is tested
//!   against — plus finite-difference gradients.
//! - [`nufft`]: gridding NUFFT plans (Kaiser–Bessel kernel), Gram and
//!   Toeplitz-embedded Gram application.
//! - [`system`]: the [`system::SystemOp`] abstraction shared by the exact
//!   and fast backends, single- and multi-coil.
//! - [`jacobian`]: JVP/VJP operators with respect to image and trajectory.
//! - [`mri`]: sensitivity encoding, regularizers, off-resonance models,
//!   signal simulation.
//! - [`solvers`]: conjugate gradient, POGM, Haar wavelets, soft threshold,
//!   Adam.
//! - [`recon`]: the reconstruction methods and their trajectory pullbacks.
//! - [`trajopt`]: spline-parameterized trajectory learning.
//! - [`phantom`]: deterministic test-data generation.
//!
//! The [`book`] module mirrors the chapters of the mdbook guide in `book/`
//! so that every code snippet in the guide is compiled and run by
//! `cargo test --doc`.

pub mod dense;
pub mod fft;
pub mod grid;
pub mod io;
pub mod jacobian;
pub mod meter;
pub mod metrics;
pub mod mri;
pub mod ndft;
pub mod nufft;
pub mod phantom;
pub mod recon;
pub mod solvers;
pub mod trajopt;
pub mod system;

pub use grid::{ComplexImage, ImageGrid, KspaceData, Trajectory};

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs whose dimensions or lengths do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// An argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// An exact-transform path refused to run above its size cap.
    #[error("dense oracle size {requested} exceeds cap {cap}")]
    OracleTooLarge { requested: usize, cap: usize },
    /// Iterative solver stopped without reaching its tolerance.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    /// Conjugate gradient hit a zero-curvature direction.
    #[error("solver breakdown: {0}")]
    Breakdown(String),
    /// A non-finite value appeared where finite arithmetic is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),
    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
