//! Standard inverse problems built on [`fit_spectrum`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FitError, ModelError};
use crate::fitting::model::{
    fit_spectrum, FitDataset, FitProblem, FitResult, LayerTemplate, Param,
};
use crate::fitting::seed::{bandwidth_at, log_contrast_fwhm};
use crate::lineshape::{SpectralDensity, Spectrum, SpectrumPoint};
use crate::spin::{larmor_frequency, NuclearSpecies};

/// Proton density assumed for immersion-oil depth calibration and for the
/// proton cap of a fluoropolymer film, m⁻³ (60 nm⁻³).
pub const PROTON_REFERENCE_DENSITY: f64 = 6e28;

/// Fluorine density assumed for a fluoropolymer film, m⁻³ (40 nm⁻³).
pub const FLUORINE_REFERENCE_DENSITY: f64 = 4e28;

/// Divides a spectrum by a straight line fitted to the points outside the
/// given frequency windows.
///
/// The line is the least-squares fit of contrast against frequency over the
/// out-of-window points (at least 4 required), so the corrected off-window
/// contrast has mean 1 up to the fit error. When the off-window contrast is
/// exactly linear the operation is idempotent to rounding; dip tails
/// leaking past the windows perturb a second pass at the leakage level.
pub fn baseline_correct(
    spectrum: &Spectrum,
    windows: &[(f64, f64)],
) -> Result<Spectrum, FitError> {
    let outside: Vec<&SpectrumPoint> = spectrum
        .points
        .iter()
        .filter(|p| !windows.iter().any(|&(lo, hi)| p.nu_hz >= lo && p.nu_hz <= hi))
        .collect();
    if outside.len() < 4 {
        return Err(FitError::TooFewBaselinePoints { min: 4, got: outside.len() });
    }
    let n = outside.len() as f64;
    let x_mean = outside.iter().map(|p| p.nu_hz).sum::<f64>() / n;
    let y_mean = outside.iter().map(|p| p.contrast).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for p in &outside {
        let dx = p.nu_hz - x_mean;
        sxx += dx * dx;
        sxy += dx * (p.contrast - y_mean);
    }
    let slope = sxy / sxx;
    let points = spectrum
        .points
        .iter()
        .map(|p| {
            let line = y_mean + slope * (p.nu_hz - x_mean);
            if line.is_nan() || line <= 0.0 {
                return Err(ModelError::InvalidSpectrum(format!(
                    "fitted baseline is not positive at {} Hz",
                    p.nu_hz
                )));
            }
            Ok(SpectrumPoint { nu_hz: p.nu_hz, contrast: p.contrast / line })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Spectrum::new(points, spectrum.sensor, spectrum.k)?)
}

/// Depth calibration against a proton-rich fluid covering the surface:
/// fits a semi-infinite Lorentzian-line hydrogen layer of known density
/// with the sensor depth and the proton T2* free.
///
/// Start values: depth 10 nm; T2* from the inverse width of the dip
/// (1/(π·FWHM), clamped to [1 µs, 10 ms]). Errors if the deepest dip is
/// more than 2% away from the hydrogen resonance; that window is far wider
/// than any filter-induced shift of the dip minimum yet narrow enough to
/// refuse the fluorine line 5.9% below it.
pub fn calibrate_depth(spectrum: &Spectrum, density: f64) -> Result<FitResult, FitError> {
    if !density.is_finite() || density <= 0.0 {
        return Err(FitError::Model(ModelError::InvalidArgument(format!(
            "density must be finite and positive, got {density}"
        ))));
    }
    let species = NuclearSpecies::hydrogen(f64::INFINITY);
    let nu_h = larmor_frequency(&species, spectrum.sensor.b0) / (2.0 * PI);
    let dip = log_contrast_fwhm(spectrum)
        .ok_or_else(|| FitError::DipNotFound("spectrum has no measurable dip".into()))?;
    if (dip.nu_hz - nu_h).abs() > 0.02 * nu_h {
        return Err(FitError::DipNotFound(format!(
            "deepest dip at {:.4e} Hz is not near the 1H resonance at {:.4e} Hz",
            dip.nu_hz, nu_h
        )));
    }
    let t2_seed = (1.0 / (PI * dip.fwhm_hz)).clamp(1e-6, 1e-2);
    let mut layer = LayerTemplate::for_species(&species, SpectralDensity::Lorentzian);
    layer.density = Param::fixed(density);
    layer.t2_star = Param::free("t2", t2_seed, 1e-7, 1e-1);
    let problem = FitProblem {
        datasets: vec![FitDataset {
            spectrum: spectrum.clone(),
            depth: Param::free("d", 10e-9, 5e-10, 2e-7),
            layers: vec![layer],
        }],
    };
    let mut fit = fit_spectrum(&problem)?;
    fit.model = "semi-infinite 1H layer, Lorentzian line; free: d, t2".into();
    Ok(fit)
}

/// Film-on-substrate thickness fit: a hydrogen layer [0, t] of density
/// 60 nm⁻³ over a semi-infinite fluorine layer [t, ∞) of 40 nm⁻³, both
/// zero-linewidth lines, with the thickness shared across all sensors and
/// one depth parameter per dataset.
///
/// Pass each sensor's depth as `Param::fixed` when calibrated or
/// `Param::free` (distinct names) to float it. At least one spectrum must
/// span both resonances.
pub fn fit_layer_thickness(
    data: &[(Spectrum, Param)],
    t_init: f64,
) -> Result<FitResult, FitError> {
    if data.is_empty() {
        return Err(FitError::Model(ModelError::InvalidArgument("no spectra given".into())));
    }
    if !(0.0..=2e-8).contains(&t_init) {
        return Err(FitError::Model(ModelError::InvalidArgument(format!(
            "thickness start value must lie in [0, 20 nm], got {t_init}"
        ))));
    }
    let hydrogen = NuclearSpecies::hydrogen(f64::INFINITY);
    let fluorine = NuclearSpecies::fluorine(f64::INFINITY);
    let covers_both = data.iter().any(|(s, _)| {
        let nu_h = larmor_frequency(&hydrogen, s.sensor.b0) / (2.0 * PI);
        let nu_f = larmor_frequency(&fluorine, s.sensor.b0) / (2.0 * PI);
        let lo = s.points.first().map_or(f64::INFINITY, |p| p.nu_hz);
        let hi = s.points.last().map_or(0.0, |p| p.nu_hz);
        lo <= nu_f.min(nu_h) && nu_f.max(nu_h) <= hi
    });
    if !covers_both {
        return Err(FitError::DipNotFound(
            "no spectrum spans both the 1H and 19F resonances".into(),
        ));
    }
    let t = Param::free("t", t_init, 0.0, 2e-8);
    let datasets = data
        .iter()
        .map(|(s, depth)| {
            let mut h = LayerTemplate::for_species(&hydrogen, SpectralDensity::Delta);
            h.density = Param::fixed(PROTON_REFERENCE_DENSITY);
            h.z2 = t.clone();
            let mut f = LayerTemplate::for_species(&fluorine, SpectralDensity::Delta);
            f.density = Param::fixed(FLUORINE_REFERENCE_DENSITY);
            f.z1 = t.clone();
            FitDataset { spectrum: s.clone(), depth: depth.clone(), layers: vec![h, f] }
        })
        .collect();
    let mut fit = fit_spectrum(&FitProblem { datasets })?;
    fit.model = format!(
        "1H film [0, t] over semi-infinite 19F [t, inf), delta lines, {} sensor(s)",
        data.len()
    );
    Ok(fit)
}

/// Outcome of [`model_selection_layered_vs_isotropic`].
#[derive(Debug, Clone, Serialize)]
pub struct ModelSelectionReport {
    pub layered: FitResult,
    /// Isotropic mixture with one shared hydrogen density for all sensors.
    pub isotropic_shared: FitResult,
    /// Isotropic mixture allowed a separate hydrogen density per sensor.
    pub isotropic_per_sensor: FitResult,
    /// isotropic_shared.rss / layered.rss.
    pub rss_ratio: f64,
    pub threshold: f64,
    /// True when the shared-composition isotropic fit is worse than the
    /// layered fit by at least `threshold`.
    pub isotropic_rejected: bool,
    /// Fitted H:F density ratio per sensor from the per-sensor variant. A
    /// spread here is direct evidence that an isotropic mixture can only
    /// explain the data with a composition that depends on the sensor.
    pub per_sensor_ratios: Vec<f64>,
}

/// Compares the film model (hydrogen cap over fluorine bulk, shared
/// thickness) against an isotropic mixture of both species filling z > 0
/// with a shared composition.
///
/// The layered model makes the relative depth of the two dips vary with
/// sensor depth while the isotropic model cannot, so data from a film is
/// only matched by the mixture if each sensor gets its own composition.
/// The shared-composition mixture is rejected when its residual sum
/// exceeds the layered one by `threshold` (4 is a reasonable default).
pub fn model_selection_layered_vs_isotropic(
    data: &[(Spectrum, Param)],
    threshold: f64,
) -> Result<ModelSelectionReport, FitError> {
    if data.len() < 2 {
        return Err(FitError::DegenerateDesign(
            "model selection needs at least two sensors of different depth".into(),
        ));
    }
    let layered = fit_layer_thickness(data, 1e-9)?;

    let hydrogen = NuclearSpecies::hydrogen(f64::INFINITY);
    let fluorine = NuclearSpecies::fluorine(f64::INFINITY);
    let isotropic = |shared: bool| -> Result<FitResult, FitError> {
        let datasets = data
            .iter()
            .enumerate()
            .map(|(i, (s, depth))| {
                let name =
                    if shared { "rho_h".to_string() } else { format!("rho_h_{i}") };
                let mut h = LayerTemplate::for_species(&hydrogen, SpectralDensity::Delta);
                h.density = Param::free(&name, 1e28, 0.0, 1e30);
                let mut f = LayerTemplate::for_species(&fluorine, SpectralDensity::Delta);
                f.density = Param::fixed(FLUORINE_REFERENCE_DENSITY);
                FitDataset { spectrum: s.clone(), depth: depth.clone(), layers: vec![h, f] }
            })
            .collect();
        let mut fit = fit_spectrum(&FitProblem { datasets })?;
        fit.model = format!(
            "isotropic 1H+19F mixture in z > 0, {} hydrogen density",
            if shared { "shared" } else { "per-sensor" }
        );
        Ok(fit)
    };
    let isotropic_shared = isotropic(true)?;
    let isotropic_per_sensor = isotropic(false)?;
    let per_sensor_ratios = (0..data.len())
        .map(|i| isotropic_per_sensor.value(&format!("rho_h_{i}")) / FLUORINE_REFERENCE_DENSITY)
        .collect();
    let rss_ratio = isotropic_shared.rss / layered.rss;
    Ok(ModelSelectionReport {
        layered,
        isotropic_shared,
        isotropic_per_sensor,
        rss_ratio,
        threshold,
        isotropic_rejected: rss_ratio >= threshold,
        per_sensor_ratios,
    })
}

/// Straight line through the origin fitted to resonance frequency versus
/// field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroFit {
    /// Slope ν₀/B₀ = γ/2π, Hz/T.
    pub gamma_over_2pi: f64,
    /// Standard error of the slope.
    pub sigma: f64,
    pub rss: f64,
    pub n_points: usize,
}

/// Least-squares slope of `(b0, nu0)` pairs through the origin, with its
/// standard error from the residual scatter (n − 1 degrees of freedom).
pub fn fit_gyromagnetic(resonances: &[(f64, f64)]) -> Result<GyroFit, FitError> {
    let n = resonances.len();
    if n < 2 {
        return Err(FitError::Underdetermined { points: n, params: 1 });
    }
    for &(b, nu) in resonances {
        if !b.is_finite() || !nu.is_finite() {
            return Err(FitError::Model(ModelError::InvalidArgument(format!(
                "non-finite resonance point ({b}, {nu})"
            ))));
        }
    }
    let b_lo = resonances.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let b_hi = resonances.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    if b_hi - b_lo <= 1e-12 * b_hi.abs().max(b_lo.abs()) {
        return Err(FitError::DegenerateDesign("all field values are equal".into()));
    }
    let sbb: f64 = resonances.iter().map(|r| r.0 * r.0).sum();
    let sbn: f64 = resonances.iter().map(|r| r.0 * r.1).sum();
    let slope = sbn / sbb;
    let rss: f64 = resonances
        .iter()
        .map(|r| {
            let e = r.1 - slope * r.0;
            e * e
        })
        .sum();
    let sigma = (rss / (n - 1) as f64 / sbb).sqrt();
    Ok(GyroFit { gamma_over_2pi: slope, sigma, rss, n_points: n })
}

/// A dephasing-time lower bound extracted from a linewidth-vs-k sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2StarBound {
    /// Lower bound on T2*, s.
    pub bound_s: f64,
    /// The width at the largest k no longer tracks the filter bandwidth:
    /// the line itself dominates and `bound_s` estimates T2* directly.
    pub saturated: bool,
    /// The residual width fell below 2% of the filter bandwidth, so the
    /// bound is capped by resolution, not by the data.
    pub resolution_limited: bool,
    pub k: u32,
    pub nu_dip_hz: f64,
    pub measured_fwhm_hz: f64,
    pub filter_fwhm_hz: f64,
}

/// Lower-bounds the nuclear T2* from spectra of the same resonance taken
/// at two or more pulse-block counts k.
///
/// The dip width (measured on the decoherence exponent, not the raw
/// contrast) is the filter bandwidth 0.111/(kτ) broadened by the intrinsic
/// line. The intrinsic width is estimated by removing the bandwidth in
/// quadrature at the largest k; because the two shapes compound widths
/// faster than in quadrature, this overestimates the line and the reported
/// 1/(π·width) is a conservative lower bound on T2*. Widths must shrink
/// (within 10%) as k grows; the `saturated` flag is set when the largest-k
/// width exceeds the bandwidth by more than 25%, meaning the line is
/// resolved and the bound is an estimate of T2* itself, good to roughly
/// ten percent (dip tails leak into the baseline and narrow the apparent
/// width on scans only a few linewidths wide).
pub fn t2star_lower_bound(spectra: &[Spectrum]) -> Result<T2StarBound, FitError> {
    let mut ordered: Vec<&Spectrum> = spectra.iter().collect();
    ordered.sort_by_key(|s| s.k);
    let distinct = {
        let mut ks: Vec<u32> = ordered.iter().map(|s| s.k).collect();
        ks.dedup();
        ks.len()
    };
    if distinct < 2 {
        return Err(FitError::DegenerateDesign(
            "need spectra at two or more distinct pulse-block counts".into(),
        ));
    }
    let b0 = ordered[0].sensor.b0;
    if ordered.iter().any(|s| s.sensor.b0 != b0) {
        return Err(FitError::MixedSequences);
    }
    let dips = ordered
        .iter()
        .map(|s| {
            log_contrast_fwhm(s).ok_or_else(|| {
                FitError::DipNotFound(format!("no measurable dip in the k = {} spectrum", s.k))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (pair, spec_pair) in dips.windows(2).zip(ordered.windows(2)) {
        if spec_pair[0].k == spec_pair[1].k {
            continue;
        }
        if pair[1].fwhm_hz > 1.10 * pair[0].fwhm_hz {
            return Err(FitError::NonMonotoneLinewidths);
        }
    }
    let last = ordered.len() - 1;
    let k = ordered[last].k;
    let dip = dips[last];
    let filter_fwhm = bandwidth_at(dip.nu_hz, k);
    let saturated = dip.fwhm_hz > 1.25 * filter_fwhm;
    let residual = (dip.fwhm_hz * dip.fwhm_hz - filter_fwhm * filter_fwhm).max(0.0).sqrt();
    let floor = 0.02 * filter_fwhm;
    let resolution_limited = residual < floor;
    let bound_s = 1.0 / (PI * residual.max(floor));
    Ok(T2StarBound {
        bound_s,
        saturated,
        resolution_limited,
        k,
        nu_dip_hz: dip.nu_hz,
        measured_fwhm_hz: dip.fwhm_hz,
        filter_fwhm_hz: filter_fwhm,
    })
}
