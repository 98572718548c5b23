//! Camera frame stacks: two phase-channel photon-count images per delay,
//! plus synthesis from the forward model and a disk format (16-bit PGM
//! pairs with a JSON manifest).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, ModelError};
use crate::lineshape::stack_chi;
use crate::sequence::PulseSequence;
use crate::spin::{SampleStack, SensorConfig};

/// Normalized measurement contrast from the two phase channels:
/// (f2 − f1)/(f2 + f1). The channels carry the signal with opposite sign,
/// so the ratio cancels common-mode intensity drifts.
pub fn contrast_from_counts(f1: f64, f2: f64) -> Result<f64, ImagingError> {
    if !f1.is_finite() || !f2.is_finite() || f1 < 0.0 || f2 < 0.0 {
        return Err(ImagingError::InvalidCounts { f1, f2 });
    }
    let sum = f1 + f2;
    if sum == 0.0 {
        return Err(ImagingError::ZeroCountSum);
    }
    Ok((f2 - f1) / sum)
}

/// A stack of photon-count image pairs, one pair (phase channels F1, F2)
/// per interpulse delay. Counts are stored as f64 so synthetic noiseless
/// stacks can hold exact real-valued means; physical counts are integers.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_m: f64,
    /// Interpulse delay τ per frame pair, s. Order is arbitrary; spectra
    /// are sorted by probe frequency when extracted.
    pub delays_s: Vec<f64>,
    /// Row-major F1 counts, one `width·height` image per delay.
    pub f1: Vec<Vec<f64>>,
    /// Row-major F2 counts, one image per delay.
    pub f2: Vec<Vec<f64>>,
    pub sensor: SensorConfig,
    pub k: u32,
}

impl FrameStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        pixel_pitch_m: f64,
        delays_s: Vec<f64>,
        f1: Vec<Vec<f64>>,
        f2: Vec<Vec<f64>>,
        sensor: SensorConfig,
        k: u32,
    ) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || delays_s.is_empty() {
            return Err(ImagingError::EmptyStack);
        }
        if !pixel_pitch_m.is_finite() || pixel_pitch_m <= 0.0 {
            return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
                "pixel pitch must be positive and finite, got {pixel_pitch_m}"
            ))));
        }
        for &tau in &delays_s {
            PulseSequence::new(tau, k).map_err(ImagingError::Model)?;
        }
        if f1.len() != delays_s.len() || f2.len() != delays_s.len() {
            return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
                "stack lists {} delays but has {}/{} channel images",
                delays_s.len(),
                f1.len(),
                f2.len()
            ))));
        }
        let n = width * height;
        for (i, frame) in f1.iter().chain(f2.iter()).enumerate() {
            if frame.len() != n {
                return Err(ImagingError::FrameShape(i % delays_s.len(), frame.len(), n));
            }
            if frame.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
                    "channel image {i} contains a negative or non-finite count"
                ))));
            }
        }
        Ok(Self { width, height, pixel_pitch_m, delays_s, f1, f2, sensor, k })
    }

    pub fn n_delays(&self) -> usize {
        self.delays_s.len()
    }
}

/// Noise applied to the synthetic photon counts of each phase channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    /// Counts are the exact real-valued means.
    Noiseless,
    /// Counts drawn from Poisson distributions with the model means.
    Poisson,
    /// Gaussian with the model mean and a fixed absolute sigma, clamped
    /// at zero.
    Gaussian { sigma: f64 },
}

/// A two-region synthetic sample for an imaging run: pixels inside the
/// mask see one layer stack, the rest see another. One sensor depth and
/// pulse-block count for the whole field of view.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    /// Row-major; true selects `masked_stack`.
    pub mask: Vec<bool>,
    pub masked_stack: SampleStack,
    pub bare_stack: SampleStack,
    pub sensor: SensorConfig,
    pub k: u32,
    pub delays_s: Vec<f64>,
    pub pixel_pitch_m: f64,
    /// Mean photon counts per pixel per phase channel at zero contrast.
    pub mean_counts: f64,
    pub noise: NoiseModel,
}

/// Row-major mask covering the top-left quadrant, the patterned-corner
/// geometry used by the imaging scenario.
pub fn corner_mask(width: usize, height: usize) -> Vec<bool> {
    (0..height)
        .flat_map(|y| (0..width).map(move |x| x < width / 2 && y < height / 2))
        .collect()
}

/// Generates the photon-count stack for a scene. Per region and delay the
/// forward model gives contrast C = exp(−χ); the channel means are
/// n·(1 − C) and n·(1 + C), so `contrast_from_counts` recovers C. Noise is
/// then applied per pixel per channel.
pub fn synthesize_scene<R: Rng + ?Sized>(
    scene: &Scene,
    rng: &mut R,
) -> Result<FrameStack, ImagingError> {
    let n_px = scene.width * scene.height;
    if scene.mask.len() != n_px {
        return Err(ImagingError::FrameShape(0, scene.mask.len(), n_px));
    }
    if !scene.mean_counts.is_finite() || scene.mean_counts <= 0.0 {
        return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
            "mean counts must be positive and finite, got {}",
            scene.mean_counts
        ))));
    }
    if let NoiseModel::Gaussian { sigma } = scene.noise {
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(ImagingError::Model(ModelError::InvalidArgument(format!(
                "gaussian count noise needs positive finite sigma, got {sigma}"
            ))));
        }
    }

    let mut f1 = Vec::with_capacity(scene.delays_s.len());
    let mut f2 = Vec::with_capacity(scene.delays_s.len());
    for &tau in &scene.delays_s {
        let seq = PulseSequence::new(tau, scene.k).map_err(ImagingError::Model)?;
        let c_masked = (-stack_chi(&scene.masked_stack, &scene.sensor, &seq)).exp();
        let c_bare = (-stack_chi(&scene.bare_stack, &scene.sensor, &seq)).exp();
        let mut a = Vec::with_capacity(n_px);
        let mut b = Vec::with_capacity(n_px);
        for &masked in &scene.mask {
            let c = if masked { c_masked } else { c_bare };
            let mean1 = scene.mean_counts * (1.0 - c);
            let mean2 = scene.mean_counts * (1.0 + c);
            a.push(draw(mean1, scene.noise, rng));
            b.push(draw(mean2, scene.noise, rng));
        }
        f1.push(a);
        f2.push(b);
    }
    FrameStack::new(
        scene.width,
        scene.height,
        scene.pixel_pitch_m,
        scene.delays_s.clone(),
        f1,
        f2,
        scene.sensor,
        scene.k,
    )
}

fn draw<R: Rng + ?Sized>(mean: f64, noise: NoiseModel, rng: &mut R) -> f64 {
    match noise {
        NoiseModel::Noiseless => mean,
        NoiseModel::Poisson => {
            if mean <= 0.0 {
                0.0
            } else {
                Poisson::new(mean).expect("positive finite mean").sample(rng)
            }
        }
        NoiseModel::Gaussian { sigma } => {
            Normal::new(mean, sigma).expect("finite mean, positive sigma").sample(rng).max(0.0)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    width: usize,
    height: usize,
    pixel_pitch_m: f64,
    delays_s: Vec<f64>,
    sensor: SensorConfig,
    k: u32,
    /// Stored pixel value × count_scale = photon counts.
    count_scale: f64,
}

fn pgm_name(delay_index: usize, channel: u8) -> String {
    format!("delay{delay_index:04}_f{channel}.pgm")
}

fn write_pgm(path: &Path, width: usize, height: usize, values: &[u16]) -> std::io::Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(values.len() * 2);
    for v in values {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, bytes)
}

fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>), ImagingError> {
    let err = |reason: String| ImagingError::Pgm(format!("{}: {reason}", path.display()));
    let bytes = fs::read(path).map_err(|e| ImagingError::Io(format!("{}: {e}", path.display())))?;
    // Header: "P5", width, height, maxval as whitespace-separated tokens,
    // then a single whitespace byte before the raster.
    let mut pos = 0;
    let mut token = || -> Result<String, ImagingError> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(err("not a binary PGM (missing P5 magic)".into()));
    }
    let width: usize = token()?.parse().map_err(|_| err("bad width".into()))?;
    let height: usize = token()?.parse().map_err(|_| err("bad height".into()))?;
    let maxval: u32 = token()?.parse().map_err(|_| err("bad maxval".into()))?;
    if maxval != 65535 {
        return Err(err(format!("expected 16-bit maxval 65535, got {maxval}")));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| err("image dimensions overflow".into()))?;
    let raster = bytes.get(pos..pos + 2 * n).ok_or_else(|| err("truncated raster".into()))?;
    let values = raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((width, height, values))
}

/// Writes a frame stack as a directory: `manifest.json` plus a 16-bit
/// big-endian binary PGM per delay and channel (`delay0000_f1.pgm`, ...).
/// Counts are divided by the smallest integer `count_scale` that brings
/// the maximum under 65535 and rounded; integer counts below 65536 round
/// trip exactly, real-valued ones to ±count_scale/2.
pub fn save_frames(dir: &Path, stack: &FrameStack) -> Result<(), ImagingError> {
    let io_err = |e: std::io::Error| ImagingError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io_err)?;
    let max = stack
        .f1
        .iter()
        .chain(stack.f2.iter())
        .flat_map(|frame| frame.iter().copied())
        .fold(0.0f64, f64::max);
    let count_scale = (max / 65535.0).ceil().max(1.0);
    let manifest = Manifest {
        width: stack.width,
        height: stack.height,
        pixel_pitch_m: stack.pixel_pitch_m,
        delays_s: stack.delays_s.clone(),
        sensor: stack.sensor,
        k: stack.k,
        count_scale,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ImagingError::Io(format!("manifest: {e}")))?;
    fs::write(dir.join("manifest.json"), json).map_err(io_err)?;
    for (i, (a, b)) in stack.f1.iter().zip(&stack.f2).enumerate() {
        for (channel, frame) in [(1u8, a), (2u8, b)] {
            let quantized: Vec<u16> =
                frame.iter().map(|c| (c / count_scale).round() as u16).collect();
            write_pgm(&dir.join(pgm_name(i, channel)), stack.width, stack.height, &quantized)
                .map_err(io_err)?;
        }
    }
    Ok(())
}

/// Reads a frame-stack directory written by [`save_frames`], re-validating
/// all invariants.
pub fn load_frames(dir: &Path) -> Result<FrameStack, ImagingError> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path)
        .map_err(|e| ImagingError::Io(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&json)
        .map_err(|e| ImagingError::Pgm(format!("{}: {e}", manifest_path.display())))?;
    if !manifest.count_scale.is_finite() || manifest.count_scale < 1.0 {
        return Err(ImagingError::Pgm(format!(
            "{}: count_scale must be >= 1, got {}",
            manifest_path.display(),
            manifest.count_scale
        )));
    }
    let sensor = SensorConfig::new(manifest.sensor.depth, manifest.sensor.b0)
        .map_err(ImagingError::Model)?;
    let mut f1 = Vec::with_capacity(manifest.delays_s.len());
    let mut f2 = Vec::with_capacity(manifest.delays_s.len());
    for i in 0..manifest.delays_s.len() {
        for (channel, out) in [(1u8, &mut f1), (2u8, &mut f2)] {
            let path = dir.join(pgm_name(i, channel));
            let (w, h, values) = read_pgm(&path)?;
            if w != manifest.width || h != manifest.height {
                return Err(ImagingError::Pgm(format!(
                    "{}: {w}x{h} does not match manifest {}x{}",
                    path.display(),
                    manifest.width,
                    manifest.height
                )));
            }
            out.push(values.iter().map(|&v| f64::from(v) * manifest.count_scale).collect());
        }
    }
    FrameStack::new(
        manifest.width,
        manifest.height,
        manifest.pixel_pitch_m,
        manifest.delays_s,
        f1,
        f2,
        sensor,
        manifest.k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{NuclearSpecies, SampleLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn oil_stack() -> SampleStack {
        let h = NuclearSpecies::hydrogen(30e-6);
        SampleStack::new(vec![SampleLayer::new(h, 6e28, 0.0, f64::INFINITY).unwrap()]).unwrap()
    }

    fn test_scene(width: usize, height: usize, noise: NoiseModel) -> Scene {
        let sensor = SensorConfig::new(5e-9, 20e-3).unwrap();
        // Delay probing the 1H resonance head-on.
        let tau = 1.0 / (2.0 * 851.5e3);
        Scene {
            width,
            height,
            mask: vec![false; width * height],
            masked_stack: oil_stack(),
            bare_stack: oil_stack(),
            sensor,
            k: 8,
            delays_s: vec![tau],
            pixel_pitch_m: 1e-6,
            mean_counts: 1e4,
            noise,
        }
    }

    #[test]
    fn contrast_arithmetic() {
        assert_eq!(contrast_from_counts(500.0, 500.0).unwrap(), 0.0);
        assert_eq!(contrast_from_counts(0.0, 123.0).unwrap(), 1.0);
        assert!((contrast_from_counts(450.0, 550.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(contrast_from_counts(0.0, 0.0), Err(ImagingError::ZeroCountSum)));
        assert!(matches!(
            contrast_from_counts(-1.0, 5.0),
            Err(ImagingError::InvalidCounts { .. })
        ));
    }

    #[test]
    fn noiseless_scene_encodes_the_forward_contrast_exactly() {
        let mut scene = test_scene(3, 2, NoiseModel::Noiseless);
        // Stand off far enough that the dip is mid-range rather than saturated.
        scene.sensor = SensorConfig::new(8e-9, 20e-3).unwrap();
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        let seq = PulseSequence::new(scene.delays_s[0], scene.k).unwrap();
        let expected = (-stack_chi(&scene.bare_stack, &scene.sensor, &seq)).exp();
        for px in 0..6 {
            let c = contrast_from_counts(stack.f1[0][px], stack.f2[0][px]).unwrap();
            assert!((c - expected).abs() < 1e-15, "pixel {px}: {c} vs {expected}");
        }
        assert!(expected > 0.1 && expected < 0.9, "dip should be well inside (0,1)");
    }

    #[test]
    fn poisson_contrast_noise_matches_counting_statistics() {
        let scene = test_scene(48, 48, NoiseModel::Poisson);
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(42)).unwrap();
        let contrasts: Vec<f64> = (0..48 * 48)
            .map(|px| contrast_from_counts(stack.f1[0][px], stack.f2[0][px]).unwrap())
            .collect();
        let n = contrasts.len() as f64;
        let mean = contrasts.iter().sum::<f64>() / n;
        let var = contrasts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma = var.sqrt();
        let expected = 1.0 / (2.0 * scene.mean_counts).sqrt();
        assert!(
            (sigma / expected - 1.0).abs() < 0.10,
            "sigma = {sigma:e}, expected about {expected:e}"
        );
    }

    #[test]
    fn gaussian_noise_stays_non_negative() {
        let mut scene = test_scene(16, 16, NoiseModel::Gaussian { sigma: 5e3 });
        scene.mean_counts = 1e3;
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(3)).unwrap();
        assert!(stack.f1[0].iter().chain(&stack.f2[0]).all(|&c| c >= 0.0));
    }

    #[test]
    fn corner_mask_covers_the_top_left_quadrant() {
        let mask = corner_mask(8, 6);
        assert_eq!(mask.len(), 48);
        assert!(mask[0]);
        assert!(mask[3]);
        assert!(!mask[4]);
        assert!(!mask[5 * 8]);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 4 * 3);
    }

    #[test]
    fn integer_counts_round_trip_through_pgm_exactly() {
        let scene = test_scene(7, 5, NoiseModel::Poisson);
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_frames(dir.path(), &stack).unwrap();
        let loaded = load_frames(dir.path()).unwrap();
        assert_eq!(loaded, stack);
    }

    #[test]
    fn large_counts_round_trip_within_the_quantization_step() {
        let mut scene = test_scene(4, 4, NoiseModel::Noiseless);
        scene.mean_counts = 3e6;
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_frames(dir.path(), &stack).unwrap();
        let loaded = load_frames(dir.path()).unwrap();
        let scale = (stack.f2[0].iter().fold(0.0f64, |a, &b| a.max(b)) / 65535.0).ceil();
        for (a, b) in loaded.f1[0].iter().zip(&stack.f1[0]) {
            assert!((a - b).abs() <= 0.5 * scale + 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn malformed_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_frames(dir.path()), Err(ImagingError::Io(_))));

        let scene = test_scene(3, 3, NoiseModel::Noiseless);
        let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        save_frames(dir.path(), &stack).unwrap();
        std::fs::write(dir.path().join(pgm_name(0, 1)), b"P5\n3 3\n255\n").unwrap();
        assert!(matches!(load_frames(dir.path()), Err(ImagingError::Pgm(_))));
    }

    #[test]
    fn mismatched_frame_sizes_are_rejected() {
        let sensor = SensorConfig::new(5e-9, 20e-3).unwrap();
        let err = FrameStack::new(
            2,
            2,
            1e-6,
            vec![5e-7],
            vec![vec![1.0; 3]],
            vec![vec![1.0; 4]],
            sensor,
            8,
        )
        .unwrap_err();
        assert!(matches!(err, ImagingError::FrameShape(..)));
    }
}
