//! From frame stacks to per-pixel spectra to fitted maps.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{ImagingError, ModelError};
use crate::fitting::{fit_spectrum, free_parameter_names, FitDataset, FitProblem};
use crate::imaging::frames::{contrast_from_counts, FrameStack};
use crate::imaging::map::PixelMap;
use crate::lineshape::{Spectrum, SpectrumPoint};

/// Per-pixel spectra on the camera grid, all sharing one frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_m: f64,
    /// Row-major, `width·height` spectra.
    pub spectra: Vec<Spectrum>,
}

/// Converts a frame stack to per-pixel spectra: contrast from the two
/// phase channels at each delay, probe frequency ν = 1/(2τ), points sorted
/// by ν. Equivalent to running the scalar contrast pipeline pixel by
/// pixel, so delay order in the stack does not matter.
pub fn pixel_spectra(stack: &FrameStack) -> Result<SpectrumGrid, ImagingError> {
    pixel_spectra_binned(stack, 1)
}

/// [`pixel_spectra`] with `bin`×`bin` pixel binning: counts are summed
/// over each block before the contrast is formed, trading resolution for
/// photon shot noise. `bin` must divide both dimensions.
pub fn pixel_spectra_binned(stack: &FrameStack, bin: usize) -> Result<SpectrumGrid, ImagingError> {
    if bin == 0 || !stack.width.is_multiple_of(bin) || !stack.height.is_multiple_of(bin) {
        return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
            "bin size {bin} does not divide the {}x{} grid",
            stack.width, stack.height
        ))));
    }
    let (bw, bh) = (stack.width / bin, stack.height / bin);

    let mut order: Vec<usize> = (0..stack.n_delays()).collect();
    order.sort_by(|&a, &b| stack.delays_s[b].total_cmp(&stack.delays_s[a]));

    let mut spectra = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut points = Vec::with_capacity(order.len());
            for &d in &order {
                let mut sum1 = 0.0;
                let mut sum2 = 0.0;
                for dy in 0..bin {
                    for dx in 0..bin {
                        let px = (by * bin + dy) * stack.width + bx * bin + dx;
                        sum1 += stack.f1[d][px];
                        sum2 += stack.f2[d][px];
                    }
                }
                points.push(SpectrumPoint {
                    nu_hz: 1.0 / (2.0 * stack.delays_s[d]),
                    contrast: contrast_from_counts(sum1, sum2)?,
                });
            }
            let spectrum = Spectrum::new(points, stack.sensor, stack.k)
                .map_err(ImagingError::Model)?;
            spectra.push(spectrum);
        }
    }
    Ok(SpectrumGrid { width: bw, height: bh, pixel_pitch_m: stack.pixel_pitch_m * bin as f64, spectra })
}

/// Fits every pixel's spectrum against a single-dataset template and
/// collects the estimates into per-parameter channels plus `rss`.
///
/// The template's spectrum is replaced by each pixel's spectrum; its
/// `depth` and `layers` define the model and the free parameters. Pixels
/// whose fit errors or does not converge are masked (NaN in every
/// channel), never interpolated. Fits run in parallel and are written to
/// disjoint cells, so the result is independent of scheduling.
pub fn fit_map(grid: &SpectrumGrid, template: &FitProblem) -> Result<PixelMap, ImagingError> {
    if template.datasets.len() != 1 {
        return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
            "per-pixel fits need a single-dataset template, got {}",
            template.datasets.len()
        ))));
    }
    let names = free_parameter_names(template).map_err(ImagingError::Fit)?;

    let results: Vec<Option<(Vec<f64>, f64)>> = grid
        .spectra
        .par_iter()
        .map(|spectrum| {
            let problem = FitProblem {
                datasets: vec![FitDataset {
                    spectrum: spectrum.clone(),
                    depth: template.datasets[0].depth.clone(),
                    layers: template.datasets[0].layers.clone(),
                }],
            };
            match fit_spectrum(&problem) {
                Ok(fit) if fit.converged => {
                    let values = names
                        .iter()
                        .map(|n| fit.value(n))
                        .collect();
                    Some((values, fit.rss))
                }
                _ => None,
            }
        })
        .collect();

    let n_px = grid.spectra.len();
    let mut channels: BTreeMap<String, Vec<f64>> = names
        .iter()
        .map(|n| (n.clone(), vec![f64::NAN; n_px]))
        .collect();
    channels.insert("rss".to_string(), vec![f64::NAN; n_px]);
    let mut mask = vec![false; n_px];
    for (px, result) in results.into_iter().enumerate() {
        if let Some((values, rss)) = result {
            mask[px] = true;
            for (name, value) in names.iter().zip(values) {
                channels.get_mut(name).expect("channel exists")[px] = value;
            }
            channels.get_mut("rss").expect("rss channel")[px] = rss;
        }
    }
    Ok(PixelMap {
        width: grid.width,
        height: grid.height,
        pixel_pitch_m: grid.pixel_pitch_m,
        channels,
        mask,
    })
}
