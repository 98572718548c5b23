//! Fit templates: layered contrast models with parameters marked free or
//! fixed, compiled into a residual function for the optimizer.
//!
//! Free parameters are identified by name. Declaring the same name in two
//! places (two layers, two datasets) binds both to a single fitted value,
//! which is how a film thickness is shared across sensors or a layer
//! boundary is tied to the top of the next layer. Shared declarations must
//! agree exactly in initial value and bounds.

use serde::{Deserialize, Serialize};

use crate::error::{FitError, ModelError};
use crate::fitting::lm::{minimize, LmOptions};
use crate::lineshape::{
    chi_prefactor_gamma, closed_form_i, delta_overlap, depth_factor, Spectrum, SpectralDensity,
};
use crate::spin::NuclearSpecies;

/// A model parameter: pinned to a value or fitted within bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Param {
    Fixed(f64),
    Free(FreeParam),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub name: String,
    pub init: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Param {
    pub fn fixed(value: f64) -> Self {
        Param::Fixed(value)
    }

    pub fn free(name: &str, init: f64, lo: f64, hi: f64) -> Self {
        Param::Free(FreeParam { name: name.to_string(), init, lo, hi })
    }
}

/// One nuclear layer of the fit model. The gyromagnetic ratio is carried
/// as a plain value; `larmor` (rad/s) overrides the resonance position
/// computed from it, for fits where the line position itself is free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTemplate {
    pub species_name: String,
    pub gamma_n: f64,
    pub line: SpectralDensity,
    pub density: Param,
    pub t2_star: Param,
    pub z1: Param,
    pub z2: Param,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub larmor: Option<Param>,
}

impl LayerTemplate {
    /// Template with everything pinned to the species values; mark fields
    /// free afterwards.
    pub fn for_species(species: &NuclearSpecies, line: SpectralDensity) -> Self {
        Self {
            species_name: species.name.clone(),
            gamma_n: species.gamma_n,
            line,
            density: Param::fixed(0.0),
            t2_star: Param::fixed(species.t2_star),
            z1: Param::fixed(0.0),
            z2: Param::fixed(f64::INFINITY),
            larmor: None,
        }
    }
}

/// One measured spectrum and the model that should explain it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub spectrum: Spectrum,
    /// Sensor depth used by the model (the depth recorded in the spectrum
    /// metadata is nominal and not consulted).
    pub depth: Param,
    pub layers: Vec<LayerTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub datasets: Vec<FitDataset>,
}

/// One fitted parameter with its 1σ uncertainty from the linearized
/// covariance, scaled by reduced chi-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEstimate {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
    /// The optimum sits on a stated bound; the uncertainty is then only
    /// the unconstrained curvature and should be read with care.
    pub at_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: Vec<FitEstimate>,
    pub rss: f64,
    /// Covariance of the free parameters, row-major, ordered as `estimates`.
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub n_points: usize,
    pub model: String,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&FitEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    /// Value of a named parameter; panics if absent (test convenience).
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no fitted parameter `{name}`")).value
    }
}

#[derive(Debug, Clone, Copy)]
enum Value {
    Const(f64),
    Var(usize),
}

impl Value {
    fn get(self, p: &[f64]) -> f64 {
        match self {
            Value::Const(v) => v,
            Value::Var(i) => p[i],
        }
    }
}

#[derive(Default)]
struct SlotTable {
    names: Vec<String>,
    init: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl SlotTable {
    fn intern(&mut self, param: &Param) -> Result<Value, FitError> {
        match param {
            Param::Fixed(v) => Ok(Value::Const(*v)),
            Param::Free(f) => {
                if !(f.lo.is_finite() && f.hi.is_finite() && f.lo < f.hi)
                    || !(f.init >= f.lo && f.init <= f.hi)
                {
                    return Err(FitError::Model(ModelError::InvalidArgument(format!(
                        "parameter `{}` needs finite bounds with lo <= init <= hi, got \
                         init={} in [{}, {}]",
                        f.name, f.init, f.lo, f.hi
                    ))));
                }
                if let Some(i) = self.names.iter().position(|n| n == &f.name) {
                    if self.init[i] != f.init || self.lo[i] != f.lo || self.hi[i] != f.hi {
                        return Err(FitError::ConflictingParameter(f.name.clone()));
                    }
                    Ok(Value::Var(i))
                } else {
                    self.names.push(f.name.clone());
                    self.init.push(f.init);
                    self.lo.push(f.lo);
                    self.hi.push(f.hi);
                    Ok(Value::Var(self.names.len() - 1))
                }
            }
        }
    }

    fn scales(&self) -> Vec<f64> {
        self.init
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| v.abs().max(l.abs()).max(h.abs()))
            .collect()
    }
}

struct CompiledLayer {
    gamma_n: f64,
    line: SpectralDensity,
    density: Value,
    t2_star: Value,
    z1: Value,
    z2: Value,
    larmor: Option<Value>,
}

struct CompiledPoint {
    omega: f64,
    total_time: f64,
    contrast: f64,
}

struct CompiledDataset {
    depth: Value,
    n_pulses: u32,
    default_larmor: Vec<f64>,
    points: Vec<CompiledPoint>,
    layers: Vec<CompiledLayer>,
}

struct Compiled {
    slots: SlotTable,
    datasets: Vec<CompiledDataset>,
    n_points: usize,
}

fn compile(problem: &FitProblem) -> Result<Compiled, FitError> {
    if problem.datasets.is_empty() {
        return Err(FitError::Model(ModelError::InvalidArgument(
            "fit problem has no datasets".into(),
        )));
    }
    let mut slots = SlotTable::default();
    let mut datasets = Vec::with_capacity(problem.datasets.len());
    let mut n_points = 0;
    for ds in &problem.datasets {
        if ds.layers.is_empty() {
            return Err(FitError::Model(ModelError::InvalidArgument(
                "dataset has no model layers".into(),
            )));
        }
        let n = ds.spectrum.k.checked_mul(8).ok_or_else(|| {
            FitError::Model(ModelError::InvalidSequence("pulse count overflow".into()))
        })?;
        let layers = ds
            .layers
            .iter()
            .map(|l| {
                Ok(CompiledLayer {
                    gamma_n: l.gamma_n,
                    line: l.line,
                    density: slots.intern(&l.density)?,
                    t2_star: slots.intern(&l.t2_star)?,
                    z1: slots.intern(&l.z1)?,
                    z2: slots.intern(&l.z2)?,
                    larmor: l.larmor.as_ref().map(|p| slots.intern(p)).transpose()?,
                })
            })
            .collect::<Result<Vec<_>, FitError>>()?;
        let default_larmor =
            ds.layers.iter().map(|l| l.gamma_n.abs() * ds.spectrum.sensor.b0).collect();
        let points = ds
            .spectrum
            .points
            .iter()
            .map(|p| {
                let omega = 2.0 * std::f64::consts::PI * p.nu_hz;
                CompiledPoint {
                    omega,
                    total_time: f64::from(n) * std::f64::consts::PI / omega,
                    contrast: p.contrast,
                }
            })
            .collect::<Vec<_>>();
        n_points += points.len();
        datasets.push(CompiledDataset {
            depth: slots.intern(&ds.depth)?,
            n_pulses: n,
            default_larmor,
            points,
            layers,
        });
    }
    if slots.names.is_empty() {
        return Err(FitError::NothingFree);
    }
    Ok(Compiled { slots, datasets, n_points })
}

/// Names of the free parameter slots of `problem`, in fit order.
pub fn free_parameter_names(problem: &FitProblem) -> Result<Vec<String>, FitError> {
    Ok(compile(problem)?.slots.names)
}

/// Model contrasts of `problem` evaluated at the parameters in `result`,
/// one vector per dataset in problem order. Subtracting these from the
/// measured contrasts gives the fit residuals.
pub fn fitted_contrasts(
    problem: &FitProblem,
    result: &FitResult,
) -> Result<Vec<Vec<f64>>, FitError> {
    let compiled = compile(problem)?;
    let p = compiled
        .slots
        .names
        .iter()
        .map(|n| {
            result.get(n).map(|e| e.value).ok_or_else(|| {
                FitError::Model(ModelError::InvalidArgument(format!(
                    "fit result has no parameter `{n}`"
                )))
            })
        })
        .collect::<Result<Vec<f64>, FitError>>()?;
    let mut flat = vec![0.0; compiled.n_points];
    compiled.residuals(&p, &mut flat);
    let mut idx = 0;
    Ok(compiled
        .datasets
        .iter()
        .map(|ds| {
            ds.points
                .iter()
                .map(|pt| {
                    let v = flat[idx] + pt.contrast;
                    idx += 1;
                    v
                })
                .collect()
        })
        .collect())
}

impl Compiled {
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let mut idx = 0;
        for ds in &self.datasets {
            let depth = ds.depth.get(p);
            for pt in &ds.points {
                let mut chi = 0.0;
                for (layer, default_wl) in ds.layers.iter().zip(&ds.default_larmor) {
                    let omega_l = layer.larmor.map_or(*default_wl, |v| v.get(p));
                    let overlap = match layer.line {
                        SpectralDensity::Lorentzian => {
                            closed_form_i(pt.omega, omega_l, layer.t2_star.get(p), ds.n_pulses)
                        }
                        SpectralDensity::Delta => {
                            delta_overlap(pt.omega, omega_l, pt.total_time)
                        }
                    };
                    chi += chi_prefactor_gamma(layer.gamma_n, layer.density.get(p))
                        * depth_factor(depth, layer.z1.get(p), layer.z2.get(p))
                        * overlap;
                }
                out[idx] = (-chi).exp() - pt.contrast;
                idx += 1;
            }
        }
    }
}

/// Least-squares fit of the free parameters of a [`FitProblem`] against its
/// measured contrasts. Deterministic; errors rather than returning a
/// non-converged result.
pub fn fit_spectrum(problem: &FitProblem) -> Result<FitResult, FitError> {
    fit_spectrum_with(problem, &LmOptions::default())
}

pub fn fit_spectrum_with(problem: &FitProblem, opts: &LmOptions) -> Result<FitResult, FitError> {
    let compiled = compile(problem)?;
    let slots = &compiled.slots;
    let out = minimize(
        |p, out| compiled.residuals(p, out),
        compiled.n_points,
        &slots.init,
        &slots.lo,
        &slots.hi,
        &slots.scales(),
        opts,
    )?;
    let estimates = slots
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| FitEstimate {
            name: name.clone(),
            value: out.params[i],
            sigma: out.covariance[(i, i)].max(0.0).sqrt(),
            at_bound: out.at_lower[i] || out.at_upper[i],
        })
        .collect();
    let m = slots.names.len();
    let covariance =
        (0..m).map(|i| (0..m).map(|j| out.covariance[(i, j)]).collect()).collect();
    Ok(FitResult {
        estimates,
        rss: out.rss,
        covariance,
        iterations: out.iterations,
        converged: out.converged,
        n_points: compiled.n_points,
        model: format!(
            "{} dataset(s), free parameters: {}",
            problem.datasets.len(),
            slots.names.join(", ")
        ),
    })
}
