//! Signal model and analysis toolkit for nanoscale NMR with shallow
//! nitrogen-vacancy sensors.
//!
//! The crate models the contrast a single NV center accumulates under an
//! XY8-k decoupling train in the dipolar field of statistically polarized
//! nuclear layers, and builds everything the measurement workflow needs on
//! top of that model:
//!
//! - [`spin`]: species, layered sample geometry, sensor parameters;
//! - [`sequence`]: XY8-k timing and filter functions;
//! - [`lineshape`]: per-layer decoherence χ, closed-form dip profiles, and
//!   contrast spectra;
//! - [`oracle`]: independent numerical checks (frequency-domain quadrature
//!   and a Monte Carlo spin-bath simulation) for the closed forms;
//! - [`fitting`]: least-squares spectral fits, depth calibration, layer
//!   thickness extraction, model selection, and gyromagnetic-ratio fits;
//! - [`imaging`]: frame stacks, per-pixel spectra and fits, and scene
//!   synthesis;
//! - [`io`]: spectrum serialization (CSV + JSON sidecar).

pub mod error;
pub mod fitting;
pub mod imaging;
pub mod io;
pub mod lineshape;
pub mod oracle;
pub mod sequence;
pub mod spin;
pub mod verify;

pub use error::{McError, ModelError, OracleError};
