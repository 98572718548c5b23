//! Independent numerical routes to quantities the library also computes in
//! closed form: adaptive quadrature of the defining integrals and direct
//! Monte Carlo simulation of spin baths. Used by the self-check suite and
//! the test battery; nothing in here calls the closed-form overlap it is
//! meant to check.

pub mod montecarlo;
pub mod quadrature;

pub use montecarlo::{
    mc_contrast, sample_bath, BathRealization, BathSpin, McConfig, McEstimate, McResult,
};
pub use quadrature::{
    chi_quadrature, numerical_chi, overlap_quadrature, FilterRoute, QuadratureEstimate,
};
