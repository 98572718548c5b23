//! `nvnmr fit`: run one of the fit workflows on spectrum files and write a
//! JSON report with parameters, uncertainties, covariance, and residuals.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use nvnmr::fitting::{
    calibrate_depth, fit_gyromagnetic, fit_layer_thickness, fit_spectrum, fitted_contrasts,
    log_contrast_fwhm, model_selection_layered_vs_isotropic, t2star_lower_bound, FitDataset,
    FitProblem, FitResult, LmOptions, Param, FLUORINE_REFERENCE_DENSITY,
    PROTON_REFERENCE_DENSITY,
};
use nvnmr::io::load_spectrum;
use nvnmr::lineshape::{stack_chi, Spectrum};
use nvnmr::spin::{NuclearSpecies, SampleLayer, SampleStack, SensorConfig};

use crate::config::{DatasetCfg, FitCfg, Qty, RunConfig};
use crate::output::Outputs;

pub fn run(cfg: &RunConfig, outputs: &mut Outputs, config_dir: &Path) -> Result<()> {
    let Some(fit) = &cfg.fit else {
        bail!("the fit command needs a [fit] section in the config");
    };
    let report = match fit.workflow.as_str() {
        "generic" => generic(fit, config_dir)?,
        "calibrate-depth" => calibrate(fit, config_dir)?,
        "thickness" => thickness(fit, config_dir)?,
        "gyromagnetic" => gyromagnetic(fit, config_dir)?,
        "t2star-bound" => t2star(fit, config_dir)?,
        "model-selection" => model_selection(fit, config_dir)?,
        other => bail!(
            "unknown fit workflow `{other}`; expected generic, calibrate-depth, thickness, \
             gyromagnetic, t2star-bound, or model-selection"
        ),
    };
    let name = fit.report.as_deref().unwrap_or("fit_report.json");
    outputs.write_json(name, &report)?;
    Ok(())
}

fn resolve(config_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_dir.join(p)
    }
}

fn load(config_dir: &Path, base: &Path) -> Result<Spectrum> {
    let full = resolve(config_dir, base);
    Ok(load_spectrum(&full)
        .with_context(|| format!("loading spectrum {}", full.display()))?
        .spectrum)
}

/// The solver settings every workflow in this module runs with, echoed
/// into the reports.
fn options_block() -> serde_json::Value {
    let o = LmOptions::default();
    json!({
        "max_iterations": o.max_iterations,
        "ftol": o.ftol,
        "xtol": o.xtol,
    })
}

fn residuals_of(spectrum: &Spectrum, fitted: &[f64]) -> Vec<f64> {
    spectrum.points.iter().zip(fitted).map(|(p, f)| p.contrast - f).collect()
}

/// Point-wise model contrasts for a plain physical stack at the spectrum's
/// own probe sequences.
fn stack_curve(stack: &SampleStack, sensor: &SensorConfig, spectrum: &Spectrum) -> Vec<f64> {
    (0..spectrum.points.len())
        .map(|i| (-stack_chi(stack, sensor, &spectrum.sequence_at(i))).exp())
        .collect()
}

fn result_block(result: &FitResult) -> serde_json::Value {
    serde_json::to_value(result).expect("fit result serializes")
}

fn generic(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    if fit.datasets.is_empty() {
        bail!("the generic workflow needs at least one [[fit.dataset]]");
    }
    let mut datasets = Vec::with_capacity(fit.datasets.len());
    let mut inputs = Vec::new();
    for ds in &fit.datasets {
        if ds.layers.is_empty() {
            bail!("dataset `{}` has no [[fit.dataset.layer]] model layers", ds.spectrum.display());
        }
        let spectrum = load(config_dir, &ds.spectrum)?;
        inputs.push(ds.spectrum.display().to_string());
        datasets.push(FitDataset {
            spectrum,
            depth: ds.depth.to_param(),
            layers: ds.layers.iter().map(|l| l.to_template()).collect::<Result<Vec<_>>>()?,
        });
    }
    let problem = FitProblem { datasets };
    let result = fit_spectrum(&problem).context("fit did not converge")?;
    let fitted = fitted_contrasts(&problem, &result)?;
    let residuals: Vec<Vec<f64>> = problem
        .datasets
        .iter()
        .zip(&fitted)
        .map(|(ds, f)| residuals_of(&ds.spectrum, f))
        .collect();
    Ok(json!({
        "workflow": "generic",
        "inputs": inputs,
        "result": result_block(&result),
        "residuals": residuals,
        "options": options_block(),
    }))
}

fn calibrate(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    let base = fit
        .spectrum
        .as_ref()
        .ok_or_else(|| anyhow!("calibrate-depth needs `spectrum` in [fit]"))?;
    let density = fit.density.map_or(PROTON_REFERENCE_DENSITY, Qty::si);
    let spectrum = load(config_dir, base)?;
    let result = calibrate_depth(&spectrum, density).context("depth calibration")?;

    let layer = SampleLayer::new(
        NuclearSpecies::hydrogen(result.value("t2")),
        density,
        0.0,
        f64::INFINITY,
    )?;
    let stack = SampleStack::new(vec![layer])?;
    let sensor = SensorConfig::new(result.value("d"), spectrum.sensor.b0)?;
    let fitted = stack_curve(&stack, &sensor, &spectrum);
    Ok(json!({
        "workflow": "calibrate-depth",
        "inputs": [base.display().to_string()],
        "density": density,
        "result": result_block(&result),
        "residuals": [residuals_of(&spectrum, &fitted)],
        "options": options_block(),
    }))
}

type DepthDataset = (Spectrum, Param);

fn load_depth_datasets(
    datasets: &[DatasetCfg],
    config_dir: &Path,
    workflow: &str,
) -> Result<(Vec<DepthDataset>, Vec<String>)> {
    if datasets.is_empty() {
        bail!("the {workflow} workflow needs at least one [[fit.dataset]]");
    }
    let mut data = Vec::with_capacity(datasets.len());
    let mut inputs = Vec::new();
    for ds in datasets {
        if !ds.layers.is_empty() {
            bail!(
                "the {workflow} workflow defines its own layer model; remove the \
                 [[fit.dataset.layer]] sections"
            );
        }
        data.push((load(config_dir, &ds.spectrum)?, ds.depth.to_param()));
        inputs.push(ds.spectrum.display().to_string());
    }
    Ok((data, inputs))
}

fn thickness(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    let (data, inputs) = load_depth_datasets(&fit.datasets, config_dir, "thickness")?;
    let t_init = fit.t_init.map_or(1e-9, Qty::si);
    let result = fit_layer_thickness(&data, t_init).context("thickness fit")?;

    let t = result.value("t");
    let mut residuals = Vec::with_capacity(data.len());
    for ((spectrum, _), ds_cfg) in data.iter().zip(&fit.datasets) {
        let depth = ds_cfg.depth.resolve(&result)?;
        let mut layers = Vec::new();
        if t > 0.0 {
            layers.push(SampleLayer::new(
                NuclearSpecies::hydrogen(f64::INFINITY),
                PROTON_REFERENCE_DENSITY,
                0.0,
                t,
            )?);
        }
        layers.push(SampleLayer::new(
            NuclearSpecies::fluorine(f64::INFINITY),
            FLUORINE_REFERENCE_DENSITY,
            t,
            f64::INFINITY,
        )?);
        let stack = SampleStack::new(layers)?;
        let sensor = SensorConfig::new(depth, spectrum.sensor.b0)?;
        let fitted = stack_curve(&stack, &sensor, spectrum);
        residuals.push(residuals_of(spectrum, &fitted));
    }
    Ok(json!({
        "workflow": "thickness",
        "inputs": inputs,
        "result": result_block(&result),
        "thickness_m": t,
        "residuals": residuals,
        "options": options_block(),
    }))
}

fn gyromagnetic(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    if fit.points.is_some() && fit.spectra.is_some() {
        bail!("gyromagnetic takes either `points` or `spectra`, not both");
    }
    let (points, inputs): (Vec<(f64, f64)>, Vec<String>) = if let Some(pts) = &fit.points {
        (pts.iter().map(|p| (p.b0.si(), p.nu.si())).collect(), vec![])
    } else if let Some(paths) = &fit.spectra {
        let mut points = Vec::with_capacity(paths.len());
        let mut inputs = Vec::with_capacity(paths.len());
        for base in paths {
            let spectrum = load(config_dir, base)?;
            let dip = log_contrast_fwhm(&spectrum).ok_or_else(|| {
                anyhow!("no resonance dip found in {}", base.display())
            })?;
            points.push((spectrum.sensor.b0, dip.nu_hz));
            inputs.push(base.display().to_string());
        }
        (points, inputs)
    } else {
        bail!("gyromagnetic needs either `points` or `spectra` in [fit]");
    };
    let result = fit_gyromagnetic(&points).context("gyromagnetic fit")?;
    let residuals_hz: Vec<f64> =
        points.iter().map(|&(b, nu)| nu - result.gamma_over_2pi * b).collect();
    Ok(json!({
        "workflow": "gyromagnetic",
        "inputs": inputs,
        "points": points.iter().map(|&(b0, nu)| json!({"b0_t": b0, "nu_hz": nu})).collect::<Vec<_>>(),
        "result": result,
        "residuals_hz": residuals_hz,
    }))
}

fn t2star(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    let paths = fit
        .spectra
        .as_ref()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| anyhow!("t2star-bound needs `spectra` (several k values) in [fit]"))?;
    let mut spectra = Vec::with_capacity(paths.len());
    let mut inputs = Vec::with_capacity(paths.len());
    for base in paths {
        spectra.push(load(config_dir, base)?);
        inputs.push(base.display().to_string());
    }
    let bound = t2star_lower_bound(&spectra).context("linewidth analysis")?;
    Ok(json!({
        "workflow": "t2star-bound",
        "inputs": inputs,
        "result": bound,
    }))
}

fn model_selection(fit: &FitCfg, config_dir: &Path) -> Result<serde_json::Value> {
    let (data, inputs) = load_depth_datasets(&fit.datasets, config_dir, "model-selection")?;
    let threshold = fit.threshold.unwrap_or(2.0);
    let report =
        model_selection_layered_vs_isotropic(&data, threshold).context("model selection")?;
    Ok(json!({
        "workflow": "model-selection",
        "inputs": inputs,
        "result": report,
        "options": options_block(),
    }))
}
