//! Per-pixel result maps: named value channels over the camera grid, a
//! convergence mask, Gaussian smoothing, and disk output (CSV grids, JSON
//! metadata, PNG heat maps).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{ImagingError, ModelError};

/// Per-pixel fitted quantities on the camera grid. Each channel is a
/// row-major value grid; pixels with `mask` false did not converge and
/// hold NaN in every channel. Masked pixels are reported, never
/// interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_m: f64,
    pub channels: BTreeMap<String, Vec<f64>>,
    /// Row-major; true = the pixel's fit converged.
    pub mask: Vec<bool>,
}

impl PixelMap {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.get(name).map(Vec::as_slice)
    }

    /// Mean of a channel over converged pixels.
    pub fn unmasked_mean(&self, name: &str) -> Option<f64> {
        let values = self.channels.get(name)?;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (v, &ok) in values.iter().zip(&self.mask) {
            if ok {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }

    pub fn converged_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len().max(1) as f64
    }
}

/// Smooths every channel with a 2-D Gaussian of the given full width at
/// half maximum, in pixels (sigma = width / (2·sqrt(2·ln 2))).
///
/// The kernel is truncated at 3 sigma and renormalized per output pixel
/// over the taps that land on converged, in-bounds pixels, so masked
/// pixels neither receive values nor bleed NaN into their neighbors. A
/// constant field therefore stays exactly constant, and means over
/// interior regions are conserved.
pub fn gaussian_blur(map: &PixelMap, width_pixels: f64) -> Result<PixelMap, ImagingError> {
    if !width_pixels.is_finite() || width_pixels <= 0.0 {
        return Err(ImagingError::InvalidBlurWidth(width_pixels));
    }
    let sigma = width_pixels / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let radius = (3.0 * sigma).ceil() as isize;
    let mut weights = Vec::with_capacity((2 * radius as usize + 1).pow(2));
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let r2 = (dx * dx + dy * dy) as f64;
            weights.push((dx, dy, (-r2 / (2.0 * sigma * sigma)).exp()));
        }
    }

    let (w, h) = (map.width as isize, map.height as isize);
    let at = |x: isize, y: isize| (y * w + x) as usize;
    let mut channels = BTreeMap::new();
    for (name, values) in &map.channels {
        let mut out = vec![f64::NAN; values.len()];
        for y in 0..h {
            for x in 0..w {
                if !map.mask[at(x, y)] {
                    continue;
                }
                let mut acc = 0.0;
                let mut norm = 0.0;
                for &(dx, dy, wgt) in &weights {
                    let (sx, sy) = (x + dx, y + dy);
                    if sx < 0 || sy < 0 || sx >= w || sy >= h || !map.mask[at(sx, sy)] {
                        continue;
                    }
                    acc += wgt * values[at(sx, sy)];
                    norm += wgt;
                }
                out[at(x, y)] = acc / norm;
            }
        }
        channels.insert(name.clone(), out);
    }
    Ok(PixelMap {
        width: map.width,
        height: map.height,
        pixel_pitch_m: map.pixel_pitch_m,
        channels,
        mask: map.mask.clone(),
    })
}

#[derive(Serialize)]
struct MapMetadata<'a> {
    width: usize,
    height: usize,
    pixel_pitch_m: f64,
    channels: Vec<&'a String>,
    converged_fraction: f64,
    mask: &'a [bool],
}

/// Writes a pixel map as one CSV grid per channel (`<name>.csv`, rows of
/// comma-separated values, masked pixels as NaN) plus `map.json` with the
/// dimensions, channel list, and convergence mask.
pub fn save_pixel_map(dir: &Path, map: &PixelMap) -> Result<(), ImagingError> {
    let io_err = |e: std::io::Error| ImagingError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io_err)?;
    for (name, values) in &map.channels {
        if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
                "channel name `{name}` is not filesystem-safe"
            ))));
        }
        let mut csv = String::new();
        for row in values.chunks(map.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        fs::write(dir.join(format!("{name}.csv")), csv).map_err(io_err)?;
    }
    let meta = MapMetadata {
        width: map.width,
        height: map.height,
        pixel_pitch_m: map.pixel_pitch_m,
        channels: map.channels.keys().collect(),
        converged_fraction: map.converged_fraction(),
        mask: &map.mask,
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| ImagingError::Io(format!("map.json: {e}")))?;
    fs::write(dir.join("map.json"), json).map_err(io_err)?;
    Ok(())
}

/// Fixed diverging color scale for heat maps: values at or below `lo`
/// render red, at or above `hi` render blue, passing through white at the
/// midpoint (blue = deep dip / high concentration, red = none). Masked
/// pixels are black.
fn heat_color(t: f64) -> [u8; 3] {
    let lerp = |a: f64, b: f64, t: f64| (a + (b - a) * t).round() as u8;
    let (red, white, blue) = ([178.0, 24.0, 43.0], [247.0, 247.0, 247.0], [33.0, 102.0, 172.0]);
    if t < 0.5 {
        let s = t * 2.0;
        [lerp(red[0], white[0], s), lerp(red[1], white[1], s), lerp(red[2], white[2], s)]
    } else {
        let s = (t - 0.5) * 2.0;
        [lerp(white[0], blue[0], s), lerp(white[1], blue[1], s), lerp(white[2], blue[2], s)]
    }
}

/// Renders one channel as an RGB PNG with the fixed red-white-blue scale
/// described on [`heat_color`]; `lo`/`hi` pin the color range.
pub fn save_heatmap(
    path: &Path,
    map: &PixelMap,
    channel: &str,
    lo: f64,
    hi: f64,
) -> Result<(), ImagingError> {
    let values = map.channel(channel).ok_or_else(|| {
        ImagingError::Model(ModelError::InvalidArgument(format!("no channel named `{channel}`")))
    })?;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
            "heat map needs finite lo < hi, got [{lo}, {hi}]"
        ))));
    }
    let mut img = image::RgbImage::new(map.width as u32, map.height as u32);
    for (i, pixel) in img.pixels_mut().enumerate() {
        *pixel = if map.mask[i] && values[i].is_finite() {
            let t = ((values[i] - lo) / (hi - lo)).clamp(0.0, 1.0);
            image::Rgb(heat_color(t))
        } else {
            image::Rgb([0, 0, 0])
        };
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImagingError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_map(width: usize, height: usize, value: f64) -> PixelMap {
        let mut channels = BTreeMap::new();
        channels.insert("v".to_string(), vec![value; width * height]);
        PixelMap { width, height, pixel_pitch_m: 1e-6, channels, mask: vec![true; width * height] }
    }

    #[test]
    fn vanishing_width_is_the_identity() {
        let mut map = uniform_map(9, 9, 0.0);
        let v = map.channels.get_mut("v").unwrap();
        for (i, x) in v.iter_mut().enumerate() {
            *x = (i as f64).sin();
        }
        let blurred = gaussian_blur(&map, 1e-9).unwrap();
        for (a, b) in blurred.channels["v"].iter().zip(&map.channels["v"]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn impulse_response_is_the_normalized_kernel() {
        let mut map = uniform_map(19, 19, 0.0);
        map.channels.get_mut("v").unwrap()[9 * 19 + 9] = 1.0;
        let blurred = gaussian_blur(&map, 3.0).unwrap();
        let v = &blurred.channels["v"];
        let total: f64 = v.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "kernel mass = {total}");
        assert!(v[9 * 19 + 9] > v[9 * 19 + 10]);
        assert!((v[9 * 19 + 10] - v[9 * 19 + 8]).abs() < 1e-12, "symmetry");
        assert!((v[9 * 19 + 10] - v[10 * 19 + 9]).abs() < 1e-12, "isotropy");
    }

    #[test]
    fn step_edge_transition_matches_the_erf_profile() {
        let (w, h) = (40, 9);
        let mut map = uniform_map(w, h, 0.0);
        for y in 0..h {
            for x in 20..w {
                map.channels.get_mut("v").unwrap()[y * w + x] = 1.0;
            }
        }
        let width = 3.0;
        let blurred = gaussian_blur(&map, width).unwrap();
        let row = &blurred.channels["v"][4 * w..5 * w];
        let crossing = |level: f64| -> f64 {
            for x in 1..w {
                if row[x - 1] < level && row[x] >= level {
                    return (x - 1) as f64 + (level - row[x - 1]) / (row[x] - row[x - 1]);
                }
            }
            panic!("level {level} not crossed");
        };
        let dist = crossing(0.9) - crossing(0.1);
        let sigma = width / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
        // 10-90% distance of an erf edge is 2·1.28155·sigma.
        let expected = 2.0 * 1.2815515655446004 * sigma;
        assert!((dist / expected - 1.0).abs() < 0.05, "dist = {dist}, expected {expected}");
    }

    #[test]
    fn constant_field_survives_masking_exactly() {
        let mut map = uniform_map(12, 12, 2.5);
        map.mask[5 * 12 + 5] = false;
        map.mask[0] = false;
        map.channels.get_mut("v").unwrap()[5 * 12 + 5] = f64::NAN;
        map.channels.get_mut("v").unwrap()[0] = f64::NAN;
        let blurred = gaussian_blur(&map, 3.0).unwrap();
        for (i, v) in blurred.channels["v"].iter().enumerate() {
            if map.mask[i] {
                assert!((v - 2.5).abs() < 1e-12, "pixel {i} moved to {v}");
            } else {
                assert!(v.is_nan());
            }
        }
    }

    #[test]
    fn interior_mean_is_conserved() {
        // A structured patch inside a constant surround: nothing crosses
        // the region boundary that was not already constant there, so the
        // mean over the region is conserved exactly.
        let (w, h) = (28, 28);
        let mut map = uniform_map(w, h, 3.0);
        let v = map.channels.get_mut("v").unwrap();
        for y in 10..18 {
            for x in 10..18 {
                v[y * w + x] = 3.0 + ((x * 7 + y * 13) % 5) as f64;
            }
        }
        let blurred = gaussian_blur(&map, 3.0).unwrap();
        // Region = patch plus a collar wider than the kernel radius (4 px
        // at this width), itself at least a radius from the grid edge.
        let region_mean = |vals: &[f64]| {
            let mut sum = 0.0;
            let mut n = 0u32;
            for y in 5..23 {
                for x in 5..23 {
                    sum += vals[y * w + x];
                    n += 1;
                }
            }
            sum / f64::from(n)
        };
        let before = region_mean(&map.channels["v"]);
        let after = region_mean(&blurred.channels["v"]);
        assert!((after - before).abs() < 1e-6 * before, "{before} vs {after}");
    }

    #[test]
    fn map_files_round_trip_values() {
        let mut map = uniform_map(3, 2, 1.5);
        map.channels.get_mut("v").unwrap()[4] = f64::NAN;
        map.mask[4] = false;
        let dir = tempfile::tempdir().unwrap();
        save_pixel_map(dir.path(), &map).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("v.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], "1.5,1.5,1.5");
        let second: Vec<&str> = rows[1].split(',').collect();
        assert_eq!(second[0], "1.5");
        assert_eq!(second[1], "NaN");
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("map.json")).unwrap())
                .unwrap();
        assert_eq!(meta["width"], 3);
        assert_eq!(meta["mask"][4], false);
    }

    #[test]
    fn heatmap_writes_a_png_with_masked_pixels_black() {
        let mut map = uniform_map(4, 4, 0.0);
        let v = map.channels.get_mut("v").unwrap();
        for (i, x) in v.iter_mut().enumerate() {
            *x = i as f64;
        }
        map.mask[3] = false;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.png");
        save_heatmap(&path, &map, "v", 0.0, 15.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], &[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n']);
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.get_pixel(3, 0), &image::Rgb([0, 0, 0]));
        assert_eq!(img.get_pixel(0, 0), &image::Rgb(heat_color(0.0)));
        assert_eq!(img.get_pixel(3, 3), &image::Rgb(heat_color(1.0)));
    }
}
