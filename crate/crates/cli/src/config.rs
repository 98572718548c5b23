//! Run configuration: one TOML file per run, quantities with unit suffixes.
//!
//! Physical values are written either as plain numbers (read as SI) or as
//! strings with a unit suffix: `depth = "8 nm"`, `t2_star = "30 us"`,
//! `b0 = "20 mT"`, `nu_start = "740 kHz"`, `density = "60 nm^-3"`. Each
//! field knows its dimension, so `depth = "30 us"` is rejected rather than
//! silently misread. `"inf"` is accepted where an unbounded value makes
//! sense (`t2_star`, `z2`).
//!
//! Model parameters are either pinned, `depth = "5 nm"`, or free with
//! explicit name and bounds:
//!
//! ```toml
//! depth = { name = "d", init = "10 nm", lo = "3 nm", hi = "30 nm" }
//! ```
//!
//! The name is what ties parameters together: two free parameters with the
//! same name (and identical init/bounds) are fitted as one.

use std::fmt;
use std::marker::PhantomData;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use nvnmr::fitting::{LayerTemplate, Param};
use nvnmr::lineshape::SpectralDensity;
use nvnmr::spin::{NuclearSpecies, SampleLayer, SampleStack, SensorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Length,
    Time,
    Field,
    Frequency,
    Density,
}

impl Dim {
    fn noun(self) -> &'static str {
        match self {
            Dim::Length => "a length",
            Dim::Time => "a time",
            Dim::Field => "a magnetic field",
            Dim::Frequency => "a frequency",
            Dim::Density => "a number density",
        }
    }
}

/// Unit table as decimal exponents, longest suffix first so `mT` wins
/// over `T` and `nm` over `m`.
const UNITS: &[(&str, Dim, i32)] = &[
    ("nm^-3", Dim::Density, 27),
    ("um^-3", Dim::Density, 18),
    ("m^-3", Dim::Density, 0),
    ("MHz", Dim::Frequency, 6),
    ("kHz", Dim::Frequency, 3),
    ("Hz", Dim::Frequency, 0),
    ("mT", Dim::Field, -3),
    ("uT", Dim::Field, -6),
    ("nm", Dim::Length, -9),
    ("um", Dim::Length, -6),
    ("mm", Dim::Length, -3),
    ("ns", Dim::Time, -9),
    ("us", Dim::Time, -6),
    ("ms", Dim::Time, -3),
    ("T", Dim::Field, 0),
    ("m", Dim::Length, 0),
    ("s", Dim::Time, 0),
];

/// Scale `v` by 10^exp without going through an inexact factor: powers of
/// ten up to 1e22 are exact in f64, so dividing by the positive power (or
/// multiplying by it, for positive exponents) rounds only once and agrees
/// with what parsing the equivalent e-notation literal would give.
fn scale_pow10(v: f64, exp: i32) -> f64 {
    const POW10: [f64; 23] = [
        1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9, 1e10, 1e11, 1e12, 1e13, 1e14, 1e15,
        1e16, 1e17, 1e18, 1e19, 1e20, 1e21, 1e22,
    ];
    match exp {
        0 => v,
        1..=22 => v * POW10[exp as usize],
        23..=44 => (v * POW10[(exp - 22) as usize]) * 1e22,
        -22..=-1 => v / POW10[(-exp) as usize],
        _ => (v / POW10[(-exp - 22) as usize]) / 1e22,
    }
}

fn parse_quantity(raw: &str, dim: Dim) -> Result<f64, String> {
    let s = raw.trim();
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    if let Ok(v) = s.parse::<f64>() {
        return Ok(v);
    }
    for &(suffix, unit_dim, exp) in UNITS {
        if let Some(prefix) = s.strip_suffix(suffix) {
            let Ok(v) = prefix.trim().parse::<f64>() else { continue };
            if unit_dim != dim {
                return Err(format!(
                    "`{raw}` is {}, but this field expects {}",
                    unit_dim.noun(),
                    dim.noun()
                ));
            }
            return Ok(scale_pow10(v, exp));
        }
    }
    Err(format!("cannot parse `{raw}` as {} (plain SI number or unit suffix)", dim.noun()))
}

/// Marker trait tying a quantity type to its dimension.
pub trait Dimension: std::fmt::Debug + Copy + Clone + PartialEq {
    const DIM: Dim;
}

macro_rules! dimension {
    ($marker:ident, $dim:expr) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub struct $marker;
        impl Dimension for $marker {
            const DIM: Dim = $dim;
        }
    };
}

dimension!(Len, Dim::Length);
dimension!(Secs, Dim::Time);
dimension!(Tesla, Dim::Field);
dimension!(Hertz, Dim::Frequency);
dimension!(PerM3, Dim::Density);

/// A physical quantity in SI units; deserializes from a number or a
/// unit-suffixed string of the matching dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qty<D: Dimension>(pub f64, PhantomData<D>);

pub type Length = Qty<Len>;
pub type Time = Qty<Secs>;
pub type Field = Qty<Tesla>;
pub type Freq = Qty<Hertz>;
pub type Dens = Qty<PerM3>;

impl<D: Dimension> Qty<D> {
    pub fn new(si: f64) -> Self {
        Qty(si, PhantomData)
    }

    pub fn si(self) -> f64 {
        self.0
    }
}

impl<D: Dimension> Serialize for Qty<D> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

struct QtyVisitor<D: Dimension>(PhantomData<D>);

impl<D: Dimension> Visitor<'_> for QtyVisitor<D> {
    type Value = Qty<D>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(f, "{} as an SI number or unit-suffixed string", D::DIM.noun())
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Qty<D>, E> {
        Ok(Qty::new(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Qty<D>, E> {
        Ok(Qty::new(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Qty<D>, E> {
        Ok(Qty::new(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Qty<D>, E> {
        parse_quantity(v, D::DIM).map(Qty::new).map_err(de::Error::custom)
    }
}

impl<'de, D: Dimension> Deserialize<'de> for Qty<D> {
    fn deserialize<De: Deserializer<'de>>(deserializer: De) -> Result<Self, De::Error> {
        deserializer.deserialize_any(QtyVisitor(PhantomData))
    }
}

/// A free-parameter declaration: explicit name, start value, and bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "", deserialize = ""))]
pub struct FreeSpec<D: Dimension> {
    pub name: String,
    pub init: Qty<D>,
    pub lo: Qty<D>,
    pub hi: Qty<D>,
}

/// A model parameter in the config: a bare quantity pins it, a table with
/// name/init/lo/hi frees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound(serialize = "", deserialize = ""))]
pub enum ParamSpec<D: Dimension> {
    Fixed(Qty<D>),
    Free(FreeSpec<D>),
}

impl<D: Dimension> ParamSpec<D> {
    pub fn to_param(&self) -> Param {
        self.scaled(1.0)
    }

    /// As [`to_param`](Self::to_param) with every value multiplied by
    /// `factor` (used to turn a configured frequency into rad/s).
    pub fn scaled(&self, factor: f64) -> Param {
        match self {
            ParamSpec::Fixed(q) => Param::fixed(q.si() * factor),
            ParamSpec::Free(f) => {
                Param::free(&f.name, f.init.si() * factor, f.lo.si() * factor, f.hi.si() * factor)
            }
        }
    }

    /// The configured value if pinned, else the named fit estimate.
    pub fn resolve(&self, result: &nvnmr::fitting::FitResult) -> Result<f64> {
        match self {
            ParamSpec::Fixed(q) => Ok(q.si()),
            ParamSpec::Free(f) => result
                .get(&f.name)
                .map(|e| e.value)
                .ok_or_else(|| anyhow!("fit result has no parameter `{}`", f.name)),
        }
    }
}

/// A scalar-or-array config value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn species_gamma(species: &str, gamma: Option<f64>) -> Result<f64> {
    match (species, gamma) {
        ("1H", None) => Ok(nvnmr::spin::GAMMA_H1),
        ("19F", None) => Ok(nvnmr::spin::GAMMA_F19),
        ("31P", None) => Ok(nvnmr::spin::GAMMA_P31),
        (_, Some(g)) => Ok(g),
        (other, None) => bail!(
            "species `{other}` is not built in (1H, 19F, 31P); give `gamma` in rad s^-1 T^-1"
        ),
    }
}

/// One physical sample layer, as used by `simulate` and scene synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCfg {
    pub species: String,
    /// Gyromagnetic ratio in rad s^-1 T^-1 for species not built in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub t2_star: Time,
    pub density: Dens,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z1: Option<Length>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z2: Option<Length>,
}

impl LayerCfg {
    pub fn to_layer(&self) -> Result<SampleLayer> {
        let gamma = species_gamma(&self.species, self.gamma)?;
        let species = NuclearSpecies::new(&self.species, gamma, self.t2_star.si())
            .with_context(|| format!("layer `{}`", self.species))?;
        SampleLayer::new(
            species,
            self.density.si(),
            self.z1.map_or(0.0, Qty::si),
            self.z2.map_or(f64::INFINITY, Qty::si),
        )
        .with_context(|| format!("layer `{}`", self.species))
    }
}

pub fn to_stack(layers: &[LayerCfg]) -> Result<SampleStack> {
    let layers = layers.iter().map(LayerCfg::to_layer).collect::<Result<Vec<_>>>()?;
    SampleStack::new(layers).context("sample stack")
}

/// One model layer of a fit template; parameters may be pinned or free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitLayerCfg {
    pub species: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// "lorentzian" or "delta"; defaults to delta when t2_star is pinned
    /// at infinity and lorentzian otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<String>,
    pub density: ParamSpec<PerM3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2_star: Option<ParamSpec<Secs>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z1: Option<ParamSpec<Len>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z2: Option<ParamSpec<Len>>,
    /// Resonance frequency override (fitting the line position itself).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub larmor_nu: Option<ParamSpec<Hertz>>,
}

impl FitLayerCfg {
    pub fn to_template(&self) -> Result<LayerTemplate> {
        let gamma = species_gamma(&self.species, self.gamma)?;
        let t2 = self
            .t2_star
            .clone()
            .unwrap_or(ParamSpec::Fixed(Qty::new(f64::INFINITY)));
        let line = match self.line.as_deref() {
            Some(s) if s.eq_ignore_ascii_case("lorentzian") => SpectralDensity::Lorentzian,
            Some(s) if s.eq_ignore_ascii_case("delta") => SpectralDensity::Delta,
            Some(other) => bail!("line model must be `lorentzian` or `delta`, got `{other}`"),
            None => match &t2 {
                ParamSpec::Fixed(q) if q.si().is_infinite() => SpectralDensity::Delta,
                _ => SpectralDensity::Lorentzian,
            },
        };
        Ok(LayerTemplate {
            species_name: self.species.clone(),
            gamma_n: gamma,
            line,
            density: self.density.to_param(),
            t2_star: t2.to_param(),
            z1: self.z1.as_ref().map_or(Param::fixed(0.0), ParamSpec::to_param),
            z2: self.z2.as_ref().map_or(Param::fixed(f64::INFINITY), ParamSpec::to_param),
            larmor: self
                .larmor_nu
                .as_ref()
                .map(|p| p.scaled(2.0 * std::f64::consts::PI)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorCfg {
    pub depth: Length,
    pub b0: Field,
}

impl SensorCfg {
    pub fn to_sensor(&self) -> Result<SensorConfig> {
        SensorConfig::new(self.depth.si(), self.b0.si()).context("sensor")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCfg {
    /// Pulse-block count; a list sweeps k at each field.
    pub k: OneOrMany<u32>,
    /// Field values; a list sweeps the field. Defaults to the sensor field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<OneOrMany<Field>>,
    pub nu_start: Freq,
    pub nu_stop: Freq,
    pub n_points: usize,
}

/// One spectrum plus its model, for fit workflows that take datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetCfg {
    /// Spectrum base path (without the .csv/.json extension), relative to
    /// the config file's directory.
    pub spectrum: PathBuf,
    pub depth: ParamSpec<Len>,
    #[serde(default, rename = "layer", skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<FitLayerCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GyroPointCfg {
    pub b0: Field,
    pub nu: Freq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCfg {
    /// generic | calibrate-depth | thickness | gyromagnetic | t2star-bound
    /// | model-selection
    pub workflow: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    /// calibrate-depth: the spectrum to calibrate on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<PathBuf>,
    /// calibrate-depth: proton density of the calibration sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Dens>,
    /// thickness: start value for the film thickness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_init: Option<Length>,
    /// model-selection: RSS ratio above which the alternative is rejected.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// gyromagnetic (dips are located automatically) and t2star-bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectra: Option<Vec<PathBuf>>,
    /// gyromagnetic: explicit (field, resonance) points.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<GyroPointCfg>>,
    /// generic, thickness, model-selection.
    #[serde(default, rename = "dataset", skip_serializing_if = "Vec::is_empty")]
    pub datasets: Vec<DatasetCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianNoiseCfg {
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseCfg {
    Name(String),
    Gaussian { gaussian: GaussianNoiseCfg },
}

impl NoiseCfg {
    pub fn to_noise(&self) -> Result<nvnmr::imaging::NoiseModel> {
        use nvnmr::imaging::NoiseModel;
        match self {
            NoiseCfg::Name(s) if s.eq_ignore_ascii_case("noiseless") => Ok(NoiseModel::Noiseless),
            NoiseCfg::Name(s) if s.eq_ignore_ascii_case("poisson") => Ok(NoiseModel::Poisson),
            NoiseCfg::Name(other) => {
                bail!("noise must be `noiseless`, `poisson`, or {{ gaussian = {{ sigma = ... }} }}, got `{other}`")
            }
            NoiseCfg::Gaussian { gaussian } => Ok(NoiseModel::Gaussian { sigma: gaussian.sigma }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCfg {
    pub width: usize,
    pub height: usize,
    /// "corner" masks the top-left quadrant; "none" leaves everything bare.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub pixel_pitch: Length,
    pub k: u32,
    pub nu_start: Freq,
    pub nu_stop: Freq,
    pub n_points: usize,
    pub mean_counts: f64,
    pub noise: NoiseCfg,
    pub sensor: SensorCfg,
    #[serde(default, rename = "masked_layer", skip_serializing_if = "Vec::is_empty")]
    pub masked_layers: Vec<LayerCfg>,
    #[serde(default, rename = "bare_layer", skip_serializing_if = "Vec::is_empty")]
    pub bare_layers: Vec<LayerCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTemplateCfg {
    pub depth: ParamSpec<Len>,
    #[serde(rename = "layer")]
    pub layers: Vec<FitLayerCfg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageCfg {
    /// Directory with a synthesized or measured frame stack; omitted when
    /// a [scene] section synthesizes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<usize>,
    /// Divide out the per-pixel linear baseline before fitting (default on).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<bool>,
    /// Optical resolution applied to the fitted maps, FWHM in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur_fwhm_px: Option<f64>,
    /// Channels to render as PNG; defaults to every fitted parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<Vec<String>>,
    pub template: ImageTemplateCfg,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCfg {
    #[serde(default)]
    pub quick: bool,
    #[serde(default)]
    pub corrupt_prefactor: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads for parallel fitting; 0 or absent = all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor: Option<SensorCfg>,
    #[serde(default, rename = "layer", skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneCfg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyCfg>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}

/// The frequency grid a sweep section describes: `n_points` points,
/// uniformly spaced over [nu_start, nu_stop].
pub fn frequency_grid(nu_start: f64, nu_stop: f64, n_points: usize) -> Result<Vec<f64>> {
    if !nu_start.is_finite() || !nu_stop.is_finite() || nu_start <= 0.0 {
        bail!("frequency sweep needs finite positive bounds, got [{nu_start}, {nu_stop}]");
    }
    if nu_stop <= nu_start {
        bail!("nu_stop ({nu_stop} Hz) must exceed nu_start ({nu_start} Hz)");
    }
    if n_points < 2 {
        bail!("a sweep needs at least 2 points, got {n_points}");
    }
    let span = nu_stop - nu_start;
    Ok((0..n_points)
        .map(|i| nu_start + span * i as f64 / (n_points - 1) as f64)
        .collect())
}
