//! Spectrum files: a CSV of the points plus a JSON sidecar.
//!
//! The CSV holds the numbers, header `nu_hz,contrast` and one row per
//! point, printed with shortest-roundtrip float formatting so loading
//! reproduces the exact bits that were saved. The sidecar carries what a
//! flat table cannot: the sensor, the pulse-block count, and (for model
//! spectra) the sample stack that generated the points.
//!
//! `save_spectrum("runs/scan", ...)` writes `runs/scan.csv` and
//! `runs/scan.json`; [`load_spectrum`] reverses it and re-validates.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::SpectrumIoError;
use crate::lineshape::{Spectrum, SpectrumPoint};
use crate::spin::{NuclearSpecies, SampleLayer, SampleStack, SensorConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    sensor: SensorConfig,
    k: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stack: Option<SampleStack>,
}

/// A spectrum read back from disk, with the generating stack if the
/// sidecar recorded one.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSpectrum {
    pub spectrum: Spectrum,
    pub stack: Option<SampleStack>,
}

/// The `.csv`/`.json` pair a base path maps to.
pub fn spectrum_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("csv"), base.with_extension("json"))
}

fn io_err(path: &Path, e: std::io::Error) -> SpectrumIoError {
    SpectrumIoError::Io { path: path.display().to_string(), reason: e.to_string() }
}

/// Write `base.csv` and `base.json`; returns the two paths written.
pub fn save_spectrum(
    base: &Path,
    spectrum: &Spectrum,
    stack: Option<&SampleStack>,
) -> Result<(PathBuf, PathBuf), SpectrumIoError> {
    let (csv_path, json_path) = spectrum_paths(base);
    let mut csv = String::with_capacity(24 * spectrum.points.len() + 16);
    csv.push_str("nu_hz,contrast\n");
    for p in &spectrum.points {
        csv.push_str(&format!("{},{}\n", p.nu_hz, p.contrast));
    }
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    let sidecar = Sidecar { sensor: spectrum.sensor, k: spectrum.k, stack: stack.cloned() };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| SpectrumIoError::Sidecar(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Load the `base.csv`/`base.json` pair and re-validate the spectrum.
pub fn load_spectrum(base: &Path) -> Result<LoadedSpectrum, SpectrumIoError> {
    let (csv_path, json_path) = spectrum_paths(base);
    let parse = |line_no: usize, reason: String| SpectrumIoError::Parse {
        path: csv_path.display().to_string(),
        line: line_no,
        reason,
    };

    let csv = fs::read_to_string(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == "nu_hz,contrast" => {}
        Some((_, header)) => {
            return Err(parse(1, format!("expected header `nu_hz,contrast`, got `{header}`")))
        }
        None => return Err(parse(1, "empty file".into())),
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (nu, contrast) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(parse(idx + 1, "expected exactly two comma-separated fields".into())),
        };
        let nu_hz: f64 = nu
            .trim()
            .parse()
            .map_err(|e| parse(idx + 1, format!("bad frequency `{nu}`: {e}")))?;
        let contrast: f64 = contrast
            .trim()
            .parse()
            .map_err(|e| parse(idx + 1, format!("bad contrast `{contrast}`: {e}")))?;
        points.push(SpectrumPoint { nu_hz, contrast });
    }

    let json = fs::read_to_string(&json_path).map_err(|e| io_err(&json_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&json).map_err(|e| SpectrumIoError::Sidecar(e.to_string()))?;

    let spectrum = Spectrum::new(points, sidecar.sensor, sidecar.k)?;
    let stack = match sidecar.stack {
        None => None,
        Some(s) => {
            let layers = s
                .layers
                .into_iter()
                .map(|l| {
                    let species = NuclearSpecies::new(
                        &l.species.name,
                        l.species.gamma_n,
                        l.species.t2_star,
                    )?;
                    SampleLayer::new(species, l.density, l.z1, l.z2)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(SampleStack::new(layers)?)
        }
    };
    Ok(LoadedSpectrum { spectrum, stack })
}
