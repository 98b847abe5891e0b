//! Numerical spectral geometry on flat tori and normal-coordinate charts.
//!
//! The crate is organised bottom-up:
//!
//! * [`clifford`] – gamma matrices for dimensions 2 and 3 and spinor arithmetic.
//! * [`flatmodel`] – the flat square torus, its four spin structures, conformal
//!   factors, grid fields and the `SPSF` binary field dump.
//! * [`operators`] – Fourier realisations of the Dirac and Laplace operators and
//!   their conformal symmetrisations.
//! * [`eigensolve`] – a matrix-free LOBPCG solver with deflation, and the
//!   extraction of the first positive Dirac eigenvalue and first positive
//!   Laplace eigenvalue of a conformal metric.
//! * [`testspinor`] – the explicit bubble spinor, its identities, the
//!   logarithmic cutoff and the Rayleigh-type functionals.
//! * [`curvature`] – finite-difference curvature, the spinor-bundle
//!   trivialisation fields `V`, `W`, and the conformal gauge.

pub mod clifford;
pub mod curvature;
pub mod eigensolve;
pub mod flatmodel;
pub mod operators;
pub mod quad;
pub mod testspinor;

pub use num_complex::Complex64;
