//! Bayesian image reconstruction with deep Gaussian-process priors defined
//! through fractional Whittle-Matern SPDEs.
//!
//! The crate provides, bottom-up:
//! - [`sparse`]: CSR matrices, AMD-ordered sparse LL' Cholesky, CG and LSQR
//!   (with an SPD-preconditioned variant), a dense eigendecomposition oracle,
//!   and Matrix Market I/O;
//! - [`fem`]: P1 finite elements on structured grids of [0,1] and [0,1]^2
//!   (mass, lumping, stiffness-reaction, Dirichlet reduction);
//! - [`rational`]: best uniform rational approximation of z^{-s} on a spectral
//!   interval (BRASIL-style interval rebalancing) in partial-fraction form;
//! - [`layer`]: one SPDE layer — normalisation constants, the non-stationary
//!   transformation F, white-noise sampling, the rational sampling map and its
//!   adjoint, and the dense eigenfunction oracle;
//! - [`prior`]: deep GP configuration, whitening transform, the marginal
//!   covariance of the top layer (matvec / LSQR solve / sparse Woodbury
//!   preconditioner) and the Gaussian top-layer posterior;
//! - [`forward`]: pixel-mask and parallel-beam Radon forward operators with
//!   exact discrete adjoints, plus observation normalisation;
//! - [`mcmc`]: whitened pCN (marginalised likelihood) and its determinant-free
//!   auxiliary-variable variant, step-size adaptation, chain records, ESS/PSRF
//!   diagnostics;
//! - [`metrics`]: L1/L2/H1, PSNR, SSIM, Sobel edge intensity, F-score sweep,
//!   threshold classifiers and UQ maps;
//! - [`synthetic`]: ground-truth images (shapes, edges, multiscale disks,
//!   Shepp-Logan phantom) and observation index generators;
//! - [`io`]: PGM and flat-CSV field I/O.

pub mod error;
pub mod fem;
pub mod forward;
pub mod io;
pub mod layer;
pub mod linalg;
pub mod mcmc;
pub mod metrics;
pub mod par;
pub mod prior;
pub mod rational;
pub mod sparse;
pub mod synthetic;

pub use error::{Error, Result};
