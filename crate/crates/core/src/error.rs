use thiserror::Error;

/// Construction and evaluation errors for the signal model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid species `{name}`: {reason}")]
    InvalidSpecies { name: String, reason: String },
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("layers {0} and {1} of species `{2}` overlap in z")]
    OverlappingLayers(usize, usize, String),
    #[error("invalid sensor: {0}")]
    InvalidSensor(String),
    #[error("invalid pulse sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("spectral density model requires finite T2*, species `{0}` has none")]
    MissingT2Star(String),
    #[error("fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Monte Carlo oracle errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error(
        "truncation region encloses {achieved:.6} of the analytic variance, below the \
         required {required:.6}; enlarge the truncation multiplier"
    )]
    TruncationInsufficient { achieved: f64, required: f64 },
    #[error("Monte Carlo needs at least {min} {what}, got {got}")]
    TooFew { what: &'static str, min: usize, got: usize },
}

/// Quadrature oracle errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error(
        "quadrature did not converge: value {value:e} carries error bound {error_bound:e}, \
         above {required_rel:e} relative"
    )]
    NotConverged { value: f64, error_bound: f64, required_rel: f64 },
}

/// Fitting errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("fit needs more data points ({points}) than free parameters ({params})")]
    Underdetermined { points: usize, params: usize },
    #[error("no free parameters in fit template")]
    NothingFree,
    #[error("duplicate free parameter name `{0}` with conflicting definition")]
    ConflictingParameter(String),
    #[error("fit did not converge after {iterations} iterations (residual sum {rss:e})")]
    DidNotConverge { iterations: usize, rss: f64 },
    #[error("degenerate design matrix: {0}")]
    DegenerateDesign(String),
    #[error("baseline correction needs >= {min} points outside the dip windows, got {got}")]
    TooFewBaselinePoints { min: usize, got: usize },
    #[error("spectra share no uniform pulse-block count k")]
    MixedSequences,
    #[error("linewidths are not monotone non-increasing with k beyond tolerance")]
    NonMonotoneLinewidths,
    #[error("dip not found: {0}")]
    DipNotFound(String),
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

/// Imaging pipeline errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImagingError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("fit error: {0}")]
    Fit(#[from] FitError),
    #[error("photon counts must be non-negative and finite, got ({f1}, {f2})")]
    InvalidCounts { f1: f64, f2: f64 },
    #[error("count sum is zero; contrast undefined")]
    ZeroCountSum,
    #[error("frame {0} has {1} pixels, expected {2}")]
    FrameShape(usize, usize, usize),
    #[error("frame stack is empty")]
    EmptyStack,
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("blur width must be positive and finite, got {0}")]
    InvalidBlurWidth(f64),
    #[error("io: {0}")]
    Io(String),
}

/// Spectrum file I/O errors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumIoError {
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("sidecar metadata error: {0}")]
    Sidecar(String),
}
