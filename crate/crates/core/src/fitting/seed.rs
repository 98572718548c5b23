//! Dip finding and start-value seeding.
//!
//! Everything here is an estimator used to initialize fits or to place
//! baseline windows; fits themselves always run on the raw, unsmoothed
//! contrasts.

use serde::{Deserialize, Serialize};

use crate::lineshape::Spectrum;
use crate::sequence::BANDWIDTH_COEFF;

/// Filter bandwidth (Hz) of a k-block scan probing at `nu_hz`:
/// 0.111/(kτ) with τ = 1/(2ν).
pub fn bandwidth_at(nu_hz: f64, k: u32) -> f64 {
    BANDWIDTH_COEFF * 2.0 * nu_hz / f64::from(k)
}

/// Moving-average smoothing over one filter bandwidth around each point.
pub fn smoothed_contrast(spectrum: &Spectrum) -> Vec<f64> {
    let pts = &spectrum.points;
    let mut out = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let half = 0.5 * bandwidth_at(p.nu_hz, spectrum.k);
        let mut lo = i;
        while lo > 0 && pts[lo - 1].nu_hz >= p.nu_hz - half {
            lo -= 1;
        }
        let mut hi = i;
        while hi + 1 < pts.len() && pts[hi + 1].nu_hz <= p.nu_hz + half {
            hi += 1;
        }
        let sum: f64 = pts[lo..=hi].iter().map(|q| q.contrast).sum();
        out.push(sum / (hi - lo + 1) as f64);
    }
    out
}

/// A dip candidate found by [`seed_dips`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipSeed {
    pub nu_hz: f64,
    /// Smoothed contrast at the minimum.
    pub min_contrast: f64,
    /// Depth below the smoothed baseline (median contrast).
    pub depth: f64,
    /// Half-depth width of the smoothed dip; falls back to the filter
    /// bandwidth when a crossing runs off the scan edge.
    pub fwhm_hz: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Interpolated ν positions where the series crosses `level` on each side
/// of the minimum at `i_min`.
fn crossings(
    nu: &[f64],
    y: &[f64],
    i_min: usize,
    level: f64,
) -> (Option<f64>, Option<f64>) {
    let cross = |a: usize, b: usize| {
        let t = (level - y[a]) / (y[b] - y[a]);
        nu[a] + t * (nu[b] - nu[a])
    };
    let mut left = None;
    for i in (1..=i_min).rev() {
        if y[i - 1] >= level && y[i] < level {
            left = Some(cross(i - 1, i));
            break;
        }
    }
    let mut right = None;
    for i in i_min..y.len() - 1 {
        if y[i] < level && y[i + 1] >= level {
            right = Some(cross(i + 1, i));
            break;
        }
    }
    (left, right)
}

/// Dip candidates of a spectrum, deepest first.
///
/// Works on the smoothed contrast: local minima qualify when their depth
/// below the median is at least 20% of the deepest one and above an
/// absolute floor of 1e-4; candidates within 1.5 bandwidths of a deeper
/// accepted one are treated as ripples of the same dip and dropped. The
/// radius must stay below 2: the 1H and 19F resonances sit 5.9% apart,
/// which is 2.1 bandwidths at k = 8 regardless of field. Filter sidelobes
/// past the radius are caught by the 20% depth rule instead, which holds
/// until a dip saturates to contrast below roughly 0.05.
pub fn seed_dips(spectrum: &Spectrum) -> Vec<DipSeed> {
    let y = smoothed_contrast(spectrum);
    let nu: Vec<f64> = spectrum.frequencies().collect();
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let baseline = median(&mut y.clone());
    let mut candidates: Vec<(usize, f64)> = (1..n - 1)
        .filter(|&i| y[i] < y[i - 1] && y[i] <= y[i + 1])
        .map(|i| (i, baseline - y[i]))
        .filter(|&(_, depth)| depth > 1e-4)
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    let Some(&(_, max_depth)) = candidates.first() else {
        return Vec::new();
    };

    let mut seeds: Vec<DipSeed> = Vec::new();
    for (i, depth) in candidates {
        if depth < 0.2 * max_depth {
            break;
        }
        let bw = bandwidth_at(nu[i], spectrum.k);
        if seeds.iter().any(|s| (s.nu_hz - nu[i]).abs() < 1.5 * bandwidth_at(s.nu_hz, spectrum.k)) {
            continue;
        }
        let level = baseline - 0.5 * depth;
        let (l, r) = crossings(&nu, &y, i, level);
        let fwhm = match (l, r) {
            (Some(l), Some(r)) => r - l,
            (Some(l), None) => 2.0 * (nu[i] - l),
            (None, Some(r)) => 2.0 * (r - nu[i]),
            (None, None) => bw,
        };
        seeds.push(DipSeed { nu_hz: nu[i], min_contrast: y[i], depth, fwhm_hz: fwhm });
    }
    seeds
}

/// Default baseline windows: ±3 filter bandwidths around every seeded dip.
pub fn default_windows(spectrum: &Spectrum) -> Vec<(f64, f64)> {
    seed_dips(spectrum)
        .iter()
        .map(|s| {
            let half = 3.0 * bandwidth_at(s.nu_hz, spectrum.k);
            (s.nu_hz - half, s.nu_hz + half)
        })
        .collect()
}

/// Width of the deepest dip measured on the decoherence exponent
/// −ln(C/baseline) rather than on the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDipShape {
    pub nu_hz: f64,
    /// Peak exponent ln(baseline/C_min).
    pub chi_peak: f64,
    pub fwhm_hz: f64,
}

/// FWHM of −ln(C/baseline) around the global contrast minimum, with the
/// baseline taken as the median contrast. Crossings at half the exponent
/// are where C = √(baseline·C_min), interpolated on the raw points.
///
/// Unlike a half-depth width in contrast, this does not broaden as a dip
/// saturates toward zero contrast, so it is the right width to compare
/// against filter and line widths. Returns `None` when the spectrum has no
/// dip or a crossing runs off the scan.
pub fn log_contrast_fwhm(spectrum: &Spectrum) -> Option<LogDipShape> {
    let nu: Vec<f64> = spectrum.frequencies().collect();
    let c: Vec<f64> = spectrum.contrasts().collect();
    let baseline = median(&mut c.clone());
    let (i_min, &c_min) = c
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    if c_min.is_nan() || c_min <= 0.0 || c_min >= baseline {
        return None;
    }
    let level = (baseline * c_min).sqrt();
    let (l, r) = crossings(&nu, &c, i_min, level);
    Some(LogDipShape {
        nu_hz: nu[i_min],
        chi_peak: (baseline / c_min).ln(),
        fwhm_hz: r? - l?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::{contrast_spectrum, dip_fwhm};
    use crate::sequence::sequence_for_frequency;
    use crate::spin::{larmor_frequency, NuclearSpecies, SampleLayer, SampleStack, SensorConfig};

    fn two_species_spectrum(depth: f64) -> Spectrum {
        let h = NuclearSpecies::hydrogen(f64::INFINITY);
        let f = NuclearSpecies::fluorine(f64::INFINITY);
        let stack = SampleStack::new(vec![
            SampleLayer::new(h, 6e28, 0.0, 1e-9).unwrap(),
            SampleLayer::new(f, 4e28, 1e-9, f64::INFINITY).unwrap(),
        ])
        .unwrap();
        let sensor = SensorConfig::new(depth, 20e-3).unwrap();
        let sweep: Vec<_> = (0..281)
            .map(|i| sequence_for_frequency(760e3 + f64::from(i) * 500.0, 8).unwrap())
            .collect();
        contrast_spectrum(&stack, &sensor, &sweep).unwrap()
    }

    #[test]
    fn finds_both_species_dips() {
        let spectrum = two_species_spectrum(6e-9);
        let seeds = seed_dips(&spectrum);
        assert_eq!(seeds.len(), 2, "{seeds:?}");
        let b0 = 20e-3;
        let nu_h = larmor_frequency(&NuclearSpecies::hydrogen(f64::INFINITY), b0)
            / (2.0 * std::f64::consts::PI);
        let nu_f = larmor_frequency(&NuclearSpecies::fluorine(f64::INFINITY), b0)
            / (2.0 * std::f64::consts::PI);
        let found_h = seeds.iter().any(|s| (s.nu_hz - nu_h).abs() < 5e3);
        let found_f = seeds.iter().any(|s| (s.nu_hz - nu_f).abs() < 5e3);
        assert!(found_h && found_f, "{seeds:?}");
        for s in &seeds {
            assert!(s.fwhm_hz > 0.0);
        }
    }

    #[test]
    fn windows_cover_the_dips() {
        let spectrum = two_species_spectrum(6e-9);
        let windows = default_windows(&spectrum);
        assert_eq!(windows.len(), 2);
        for (lo, hi) in &windows {
            assert!(hi > lo);
            let width = hi - lo;
            let center = 0.5 * (hi + lo);
            assert!((width / (6.0 * bandwidth_at(center, spectrum.k)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn flat_spectrum_has_no_seeds() {
        let points: Vec<_> = (0..50)
            .map(|i| crate::lineshape::SpectrumPoint {
                nu_hz: 700e3 + f64::from(i) * 1e3,
                contrast: 0.97,
            })
            .collect();
        let sensor = SensorConfig::new(8e-9, 20e-3).unwrap();
        let spectrum = Spectrum::new(points, sensor, 8).unwrap();
        assert!(seed_dips(&spectrum).is_empty());
        assert!(log_contrast_fwhm(&spectrum).is_none());
    }

    #[test]
    fn log_width_is_narrower_than_contrast_width_for_deep_dips() {
        // A dip with peak exponent well above 1 saturates in contrast; its
        // half-depth contrast width outgrows the exponent width.
        let h = NuclearSpecies::hydrogen(30e-6);
        let stack =
            SampleStack::new(vec![SampleLayer::new(h, 6e28, 0.0, f64::INFINITY).unwrap()])
                .unwrap();
        let sensor = SensorConfig::new(5e-9, 20e-3).unwrap();
        let sweep: Vec<_> = (0..161)
            .map(|i| sequence_for_frequency(790e3 + f64::from(i) * 800.0, 8).unwrap())
            .collect();
        let spectrum = contrast_spectrum(&stack, &sensor, &sweep).unwrap();
        let log_shape = log_contrast_fwhm(&spectrum).unwrap();
        let contrast_shape = dip_fwhm(&spectrum).unwrap();
        assert!(log_shape.chi_peak > 1.5, "want a saturated dip, chi = {}", log_shape.chi_peak);
        assert!(
            log_shape.fwhm_hz < contrast_shape.fwhm_hz,
            "log {} vs contrast {}",
            log_shape.fwhm_hz,
            contrast_shape.fwhm_hz
        );
    }

    #[test]
    fn smoothing_preserves_a_constant() {
        let points: Vec<_> = (0..40)
            .map(|i| crate::lineshape::SpectrumPoint {
                nu_hz: 700e3 + f64::from(i) * 1e3,
                contrast: 0.5,
            })
            .collect();
        let sensor = SensorConfig::new(8e-9, 20e-3).unwrap();
        let spectrum = Spectrum::new(points, sensor, 8).unwrap();
        for v in smoothed_contrast(&spectrum) {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }
}
