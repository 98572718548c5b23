//! Inverse problems: nonlinear least squares on the contrast model, dip
//! seeding, baseline correction, and the standard analysis workflows
//! (depth calibration, film thickness, model selection, resonance slope,
//! dephasing-time bounds).

pub mod lm;
pub mod model;
pub mod seed;
pub mod workflows;

pub use lm::{minimize, LmOptions, LmOutcome};
pub use model::{
    fit_spectrum, fit_spectrum_with, fitted_contrasts, free_parameter_names, FitDataset,
    FitEstimate, FitProblem, FitResult, FreeParam, LayerTemplate, Param,
};
pub use seed::{
    bandwidth_at, default_windows, log_contrast_fwhm, seed_dips, smoothed_contrast, DipSeed,
    LogDipShape,
};
pub use workflows::{
    baseline_correct, calibrate_depth, fit_gyromagnetic, fit_layer_thickness,
    model_selection_layered_vs_isotropic, t2star_lower_bound, GyroFit, ModelSelectionReport,
    T2StarBound, FLUORINE_REFERENCE_DENSITY, PROTON_REFERENCE_DENSITY,
};
