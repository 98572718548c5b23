//! Monte Carlo route to the layer contrast.
//!
//! Each realization draws a concrete bath of nuclear spins around the
//! sensor, accumulates the exact sensor phase θ through the pulse-schedule
//! transform, and reports cos θ. Nothing here uses the closed-form overlap
//! or the χ prefactor: agreement between ⟨cos θ⟩ and exp(−χ) checks the
//! model end to end, including the angular prefactor and the Gaussian-phase
//! approximation.
//!
//! Bath model per spin: a spin-1/2 transverse moment of rms ħγₙ/√2
//! precessing at its own frequency ωⱼ with a uniform random phase produces
//! the sensor-axis field amplitude (μ₀ħγₙ/4π)·3u√(1−u²)/r³·(1/√2), u the
//! direction cosine to the tilted sensor axis (cos²α = 1/3 to the surface
//! normal). For the Lorentzian line model the ωⱼ carry static Cauchy
//! detunings of half-width 1/T2* around the Larmor frequency, whose phase
//! average e^{−|t|/T2*} reproduces the stationary Lorentzian line exactly;
//! the δ model pins ωⱼ = ω_L.
//!
//! Positions are importance-sampled ∝ r⁻⁶ inside the truncation ball
//! (radius R = factor·(d+z1), centered on the sensor) intersected with the
//! layer slab, so the r⁻³ coupling cancels and every spin carries the same
//! statistical weight; the fraction of the layer's variance weight enclosed
//! by the ball is computed from the kernel integrals and gated before any
//! sampling runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{McError, ModelError};
use crate::lineshape::{kernel, SpectralDensity};
use crate::sequence::{xy8_filter_transform, PulseSequence};
use crate::spin::{larmor_frequency, SampleLayer, SensorConfig, GAMMA_E, HBAR, MU_0};

/// Bath-simulation settings.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    /// Independent bath realizations averaged over (at least 100).
    pub n_realizations: usize,
    /// Spins drawn per realization.
    pub n_spins: usize,
    pub seed: u64,
    /// Truncation ball radius in units of the closest approach d+z1.
    pub truncation_radius_factor: f64,
    pub model: SpectralDensity,
    /// Required fraction of the layer variance inside the truncation ball.
    pub min_enclosed_fraction: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_realizations: 1000,
            n_spins: 2000,
            seed: 7,
            truncation_radius_factor: 50.0,
            model: SpectralDensity::Lorentzian,
            min_enclosed_fraction: 0.99,
        }
    }
}

/// One sampled nuclear spin of a bath realization.
#[derive(Debug, Clone, Copy)]
pub struct BathSpin {
    /// Position relative to the sensor, m; the surface normal is +z.
    pub position: [f64; 3],
    /// Transverse precession phase at t = 0, uniform on [0, 2π).
    pub phase: f64,
    /// Dimensionless amplitude 3·u√(1−u²)/√2 of the sensor-axis field,
    /// u the direction cosine to the tilted sensor axis. The physical
    /// field amplitude is this times (μ₀ħγₙ/4π)·√(ρZ/n), Z the r⁻⁶
    /// integral over the sampled region.
    pub amplitude: f64,
}

/// A concrete draw of bath spins, as used by one MC realization.
#[derive(Debug, Clone)]
pub struct BathRealization {
    pub spins: Vec<BathSpin>,
    pub seed: u64,
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct McResult {
    /// ⟨cos θ⟩ over realizations, the simulated contrast.
    pub contrast: McEstimate,
    /// ⟨θ²⟩/2, the simulated decoherence exponent.
    pub chi_phase: McEstimate,
    /// Mean over realizations of the summed squared field amplitudes, T²;
    /// matches the kernel integral over the sampled region in expectation.
    pub sampled_field_variance: McEstimate,
    pub n_realizations: usize,
    pub n_spins: usize,
    /// Fraction of the layer's variance weight inside the truncation ball.
    pub enclosed_weight_fraction: f64,
    pub truncation_radius: f64,
    pub rng: &'static str,
}

// ∫ r⁻⁶ dV over the slab h1 < z < h2 clipped to the sensor-centered ball
// of the given radius: slices give (π/2)(z⁻⁴ − R⁻⁴), which integrates in
// closed form.
fn region_r6_integral(h1: f64, h2: f64, radius: f64) -> f64 {
    let z_max = h2.min(radius);
    if z_max <= h1 {
        return 0.0;
    }
    let r4 = radius.powi(-4);
    0.5 * PI * ((h1.powi(-3) - z_max.powi(-3)) / 3.0 - r4 * (z_max - h1))
}

const SENSOR_AXIS: (f64, f64) = (0.816496580927726, 0.577350269189626); // (sin α, cos α), cos²α = 1/3

struct BathGeometry {
    h1: f64,
    h2: f64,
    h1_inv3: f64,
    r_inv3: f64,
    radius: f64,
    /// ∫ r⁻⁶ over the sampled region, m⁻³.
    z_region: f64,
    enclosed: f64,
}

fn bath_geometry(
    layer: &SampleLayer,
    sensor: &SensorConfig,
    cfg: &McConfig,
) -> Result<BathGeometry, McError> {
    let h1 = sensor.depth + layer.z1;
    let h2 = sensor.depth + layer.z2;
    let radius = cfg.truncation_radius_factor * h1;
    if radius.is_nan() || radius <= h1 {
        return Err(McError::Model(ModelError::InvalidArgument(format!(
            "truncation radius factor must exceed 1, got {}",
            cfg.truncation_radius_factor
        ))));
    }
    let enclosed =
        kernel::ball_slab_weight(0.0, radius, h1, h2) / kernel::full_layer_weight(h1, h2);
    if enclosed < cfg.min_enclosed_fraction {
        return Err(McError::TruncationInsufficient {
            achieved: enclosed,
            required: cfg.min_enclosed_fraction,
        });
    }
    let z_region = region_r6_integral(h1, h2, radius);
    let z_shell = 4.0 * PI / 3.0 * (h1.powi(-3) - radius.powi(-3));
    let acceptance = z_region / z_shell;
    if acceptance.is_nan() || acceptance <= 1e-7 {
        return Err(McError::Model(ModelError::InvalidArgument(format!(
            "sampling acceptance {acceptance:.3e} too low; thicken the layer or shrink the ball"
        ))));
    }
    Ok(BathGeometry { h1, h2, h1_inv3: h1.powi(-3), r_inv3: radius.powi(-3), radius, z_region, enclosed })
}

// Draw one spin position ∝ r⁻⁶ on ball ∩ slab; returns (r, cos θ_z, azimuth).
fn draw_position(rng: &mut ChaCha8Rng, geom: &BathGeometry) -> (f64, f64, f64) {
    let (r, cos_z) = loop {
        let u: f64 = rng.gen();
        let r = (geom.h1_inv3 - u * (geom.h1_inv3 - geom.r_inv3)).powf(-1.0 / 3.0);
        let cos_z = 1.0 - 2.0 * rng.gen::<f64>();
        let z = r * cos_z;
        if z >= geom.h1 && z <= geom.h2 {
            break (r, cos_z);
        }
    };
    (r, cos_z, rng.gen::<f64>() * 2.0 * PI)
}

fn axis_amplitude(cos_z: f64, azimuth: f64) -> f64 {
    let (sin_a, cos_a) = SENSOR_AXIS;
    let sin_z = (1.0 - cos_z * cos_z).max(0.0).sqrt();
    let u = sin_z * azimuth.cos() * sin_a + cos_z * cos_a;
    3.0 * u * (1.0 - u * u).max(0.0).sqrt() / f64::sqrt(2.0)
}

/// Draw the bath spins one MC realization starts from (ChaCha8 stream
/// `realization + 1` of the seed). Exposes the sampled geometry for
/// distribution tests; `mc_contrast` streams the same position draws
/// without materializing them.
pub fn sample_bath(
    layer: &SampleLayer,
    sensor: &SensorConfig,
    cfg: &McConfig,
    realization: usize,
) -> Result<BathRealization, McError> {
    let geom = bath_geometry(layer, sensor, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(realization as u64 + 1);
    let spins = (0..cfg.n_spins)
        .map(|_| {
            let (r, cos_z, azimuth) = draw_position(&mut rng, &geom);
            let sin_z = (1.0 - cos_z * cos_z).max(0.0).sqrt();
            BathSpin {
                position: [r * sin_z * azimuth.cos(), r * sin_z * azimuth.sin(), r * cos_z],
                amplitude: axis_amplitude(cos_z, azimuth),
                phase: rng.gen::<f64>() * 2.0 * PI,
            }
        })
        .collect();
    Ok(BathRealization { spins, seed: cfg.seed })
}

struct RealizationOutput {
    cos_theta: f64,
    theta_sq: f64,
    beta_sq_sum: f64,
}

/// Simulate ⟨cos θ⟩ for one layer under one sequence.
///
/// Deterministic for a given seed and configuration regardless of thread
/// count: realization i uses ChaCha8 stream i+1 of the seed, and the
/// per-realization outputs are reduced in index order.
pub fn mc_contrast(
    layer: &SampleLayer,
    sensor: &SensorConfig,
    seq: &PulseSequence,
    cfg: &McConfig,
) -> Result<McResult, McError> {
    if cfg.n_realizations < 100 {
        return Err(McError::TooFew { what: "realizations", min: 100, got: cfg.n_realizations });
    }
    if cfg.n_spins < 1 {
        return Err(McError::TooFew { what: "spins per realization", min: 1, got: cfg.n_spins });
    }
    if cfg.model == SpectralDensity::Lorentzian && !layer.species.t2_star.is_finite() {
        return Err(McError::Model(ModelError::MissingT2Star(layer.species.name.clone())));
    }
    let geom = bath_geometry(layer, sensor, cfg)?;

    let coupling = MU_0 * HBAR * layer.species.gamma_n / (4.0 * PI);
    // dimensionful part of the per-spin amplitude; r⁻³ cancels against the
    // importance weight, the angular factor comes per spin
    let amp_base = coupling * (layer.density * geom.z_region / cfg.n_spins as f64).sqrt();
    let omega_l = larmor_frequency(&layer.species, sensor.b0);
    let line = match cfg.model {
        SpectralDensity::Lorentzian => {
            Some(Cauchy::new(0.0, 1.0 / layer.species.t2_star).expect("finite positive width"))
        }
        SpectralDensity::Delta => None,
    };
    let seq = *seq;

    let outputs: Vec<RealizationOutput> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(idx as u64 + 1);
            let mut theta = 0.0;
            let mut beta_sq_sum = 0.0;
            for _ in 0..cfg.n_spins {
                let (_r, cos_z, azimuth) = draw_position(&mut rng, &geom);
                let beta = amp_base * axis_amplitude(cos_z, azimuth);
                beta_sq_sum += beta * beta;
                let omega_j = match &line {
                    Some(cauchy) => omega_l + cauchy.sample(&mut rng),
                    None => omega_l,
                };
                // a negative sampled frequency is the same oscillator with
                // the opposite phase sign; |G| is even, so fold it back
                let g = xy8_filter_transform(omega_j.abs(), &seq);
                let phase0 = rng.gen::<f64>() * 2.0 * PI;
                theta += GAMMA_E * beta * (phase0.cos() * g.re + phase0.sin() * g.im);
            }
            RealizationOutput { cos_theta: theta.cos(), theta_sq: theta * theta, beta_sq_sum }
        })
        .collect();

    let m = cfg.n_realizations as f64;
    let stats = |f: &dyn Fn(&RealizationOutput) -> f64| -> McEstimate {
        let mean = outputs.iter().map(f).sum::<f64>() / m;
        let var = outputs.iter().map(|o| (f(o) - mean).powi(2)).sum::<f64>() / (m - 1.0);
        McEstimate { mean, std_error: (var / m).sqrt() }
    };
    let contrast = stats(&|o| o.cos_theta);
    let chi_raw = stats(&|o| o.theta_sq);
    let variance = stats(&|o| o.beta_sq_sum);

    Ok(McResult {
        contrast,
        chi_phase: McEstimate { mean: 0.5 * chi_raw.mean, std_error: 0.5 * chi_raw.std_error },
        sampled_field_variance: variance,
        n_realizations: cfg.n_realizations,
        n_spins: cfg.n_spins,
        enclosed_weight_fraction: geom.enclosed,
        truncation_radius: geom.radius,
        rng: "chacha8, one stream per realization",
    })
}
