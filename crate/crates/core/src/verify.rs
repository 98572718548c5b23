//! Self-check suite: runs every closed-form result in the crate against an
//! independent numerical route and reports one outcome per check.
//!
//! The suite is deterministic for a given seed and options, including the
//! report bytes (no timestamps, fixed formatting), so reruns can be diffed.
//! `quick` shrinks the Monte Carlo sizes for fast iteration; the full sizes
//! are the ones the tolerances were budgeted for.
//!
//! `corrupt_prefactor` deliberately scales the reference χ by 6/5 before
//! the Monte Carlo comparisons, the discrepancy a wrong angular average
//! over bath orientations would produce. A healthy suite must then fail
//! both Monte Carlo checks; this is the calibration that the statistical
//! tolerances actually resolve an error of that size.

use serde::Serialize;
use std::f64::consts::PI;

use crate::lineshape::{
    chi, chi_with_model, closed_form_i, equivalent_polarized_spins, SpectralDensity,
};
use crate::oracle::{
    chi_quadrature, mc_contrast, numerical_chi, overlap_quadrature, FilterRoute, McConfig,
};
use crate::sequence::{filter_function, sequence_for_frequency, PulseSequence};
use crate::spin::{larmor_frequency, NuclearSpecies, SampleLayer, SensorConfig};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Shrink Monte Carlo sizes for fast iteration.
    pub quick: bool,
    pub seed: u64,
    /// Scale the reference χ by 6/5 in the Monte Carlo checks; the suite
    /// must then fail them.
    pub corrupt_prefactor: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { quick: false, seed: 7, corrupt_prefactor: false }
    }
}

/// One check's verdict. `measured` is the deviation the check scored, in
/// the units the `detail` line states (a relative deviation, a z-score,
/// ...); `passed` means `measured <= tolerance`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub quick: bool,
    pub corrupt_prefactor: bool,
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

/// Run the whole suite in a fixed order.
pub fn run_all(opts: &VerifyOptions) -> VerifyReport {
    let checks = vec![
        check_overlap_against_quadrature(),
        check_chi_against_numerical(),
        check_filter_bandwidth(),
        check_equivalent_spins(),
        check_band_pass_model_error(),
        check_mc_concordance(opts),
        check_mc_prefactor(opts),
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    VerifyReport {
        seed: opts.seed,
        quick: opts.quick,
        corrupt_prefactor: opts.corrupt_prefactor,
        checks,
        all_passed,
    }
}

/// Closed-form overlap I(ω) against adaptive quadrature of the defining
/// integral on a 21×21 grid: line offsets β = (ω_L − ω)·T2* from −20 to 20,
/// durations x = T/T2* log-spaced over [0.01, 20].
pub fn check_overlap_against_quadrature() -> CheckOutcome {
    let t2 = 30e-6;
    let n_pulses = 32;
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, 0.0);
    let mut points = 0usize;
    for i in 0..21 {
        let x = 0.01 * 2000f64.powf(i as f64 / 20.0);
        let omega = f64::from(n_pulses) * PI / (x * t2);
        for j in 0..21 {
            let beta = -20.0 + 2.0 * j as f64;
            let omega_l = omega + beta / t2;
            let q = overlap_quadrature(omega, omega_l, t2, n_pulses);
            let cf = closed_form_i(omega, omega_l, t2, n_pulses);
            let dev = (cf / q.value - 1.0).abs();
            points += 1;
            if dev > worst {
                worst = dev;
                worst_at = (beta, x);
            }
        }
    }
    CheckOutcome {
        name: "overlap-closed-form-vs-quadrature",
        passed: worst <= 1e-4,
        measured: worst,
        tolerance: 1e-4,
        detail: format!(
            "max relative deviation {worst:.2e} over {points} grid points, worst at \
             line offset {} / duration {:.4} (both in units of T2*)",
            worst_at.0, worst_at.1
        ),
    }
}

/// Closed-form χ against the convergence-enforced quadrature χ for a
/// finite-linewidth layer at several detunings and for a δ-line layer.
pub fn check_chi_against_numerical() -> CheckOutcome {
    let sensor = SensorConfig::new(8e-9, 20e-3).expect("valid sensor");
    let mut worst = 0.0f64;
    let mut detail = String::from("relative deviations:");
    for (label, t2) in [("lorentzian", 30e-6), ("delta", f64::INFINITY)] {
        let layer = SampleLayer::new(NuclearSpecies::hydrogen(t2), 6e28, 0.0, f64::INFINITY)
            .expect("valid layer");
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        for detune in [0.0, 10e3, -10e3, 40e3] {
            let seq = sequence_for_frequency(nu_l + detune, 4).expect("valid sequence");
            let dev = match numerical_chi(&layer, &sensor, &seq) {
                Ok(num) => (chi(&layer, &sensor, &seq) / num - 1.0).abs(),
                Err(_) => f64::INFINITY,
            };
            worst = worst.max(dev);
            detail.push_str(&format!(" {label}{detune:+.0}Hz {dev:.1e}"));
        }
    }
    CheckOutcome {
        name: "chi-closed-form-vs-numerical",
        passed: worst <= 2e-6,
        measured: worst,
        tolerance: 2e-6,
        detail,
    }
}

fn half_crossing(seq: &PulseSequence, mut lo: f64, mut hi: f64, half: f64) -> f64 {
    // bisection on filter(ν) − half; `lo` is the side below half, which may
    // lie on either side of `hi`
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if filter_function(2.0 * PI * mid, seq) < half {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= f64::EPSILON * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Measured FWHM of the band-pass filter against 0.111/(kτ) for five
/// sequence orders.
pub fn check_filter_bandwidth() -> CheckOutcome {
    let tau = 500e-9;
    let mut worst = 0.0f64;
    let mut detail = String::from("FWHM / (0.111/(kτ)) − 1:");
    for k in [1u32, 2, 5, 10, 20] {
        let seq = PulseSequence::new(tau, k).expect("valid sequence");
        let nu0 = 1.0 / (2.0 * tau);
        let half = 0.5 * filter_function(2.0 * PI * nu0, &seq);
        let zero_off = 1.0 / seq.duration();
        let right = half_crossing(&seq, nu0 + zero_off, nu0, half);
        let left = half_crossing(&seq, nu0 - zero_off, nu0, half);
        let dev = (right - left) / seq.bandwidth_hz() - 1.0;
        worst = worst.max(dev.abs());
        detail.push_str(&format!(" k={k} {dev:+.2e}"));
    }
    CheckOutcome {
        name: "filter-bandwidth-coefficient",
        passed: worst <= 0.01,
        measured: worst,
        tolerance: 0.01,
        detail,
    }
}

/// √n statistical polarization: 20 000 spins in the detection volume must
/// act like 141 ± 1 fully polarized spins.
pub fn check_equivalent_spins() -> CheckOutcome {
    let count = equivalent_polarized_spins(20_000.0).expect("positive count");
    let dev = (count - 141.0).abs();
    CheckOutcome {
        name: "equivalent-polarized-spins",
        passed: dev <= 1.0,
        measured: dev,
        tolerance: 1.0,
        detail: format!("√20000 = {count:.3}, target 141 ± 1"),
    }
}

/// The layer and sensor every Monte Carlo check simulates: a semi-infinite
/// proton bath 8 nm under the sensor at 20 mT.
fn mc_scenario(density: f64, t2: f64) -> (SampleLayer, SensorConfig) {
    let layer = SampleLayer::new(NuclearSpecies::hydrogen(t2), density, 0.0, f64::INFINITY)
        .expect("valid layer");
    let sensor = SensorConfig::new(8e-9, 20e-3).expect("valid sensor");
    (layer, sensor)
}

const CONCORDANCE_FRACS: [f64; 5] = [0.0, 0.25, -0.25, 0.5, -0.5];

/// Monte Carlo bath contrast against exp(−χ) at five detunings across the
/// resonance dip, each within 3 standard errors of the simulation.
///
/// The reference χ is the defining decoherence integral with the actual
/// sequence's filter (the exact-route quadrature), since that is the model
/// the simulated baths realize. At 10⁴ realizations the standard errors
/// are small enough that the band-pass approximation alone would shift z
/// by ~2 at half a bandwidth off resonance; that model error is checked
/// separately and deterministically by [`check_band_pass_model_error`].
pub fn check_mc_concordance(opts: &VerifyOptions) -> CheckOutcome {
    let (layer, sensor) = mc_scenario(6e28, 30e-6);
    let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
    let seq0 = sequence_for_frequency(nu_l, 4).expect("valid sequence");
    let bandwidth = seq0.bandwidth_hz();
    let (n_realizations, n_spins) = if opts.quick { (1500, 1500) } else { (10_000, 4000) };
    let cfg = McConfig {
        n_realizations,
        n_spins,
        seed: opts.seed,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut detail = format!(
        "{n_realizations} realizations × {n_spins} spins; z at detunings (filter bandwidths):"
    );
    for frac in CONCORDANCE_FRACS {
        let seq = sequence_for_frequency(nu_l + frac * bandwidth, 4).expect("valid sequence");
        let mc = mc_contrast(&layer, &sensor, &seq, &cfg).expect("mc scenario is valid");
        let mut reference = chi_quadrature(&layer, &sensor, &seq, FilterRoute::Exact)
            .expect("mc scenario is valid")
            .value;
        if opts.corrupt_prefactor {
            reference *= 1.2;
        }
        let z = (mc.contrast.mean - (-reference).exp()) / mc.contrast.std_error;
        worst = worst.max(z.abs());
        detail.push_str(&format!(" {frac:+.2}: {z:+.2}"));
    }
    CheckOutcome {
        name: "mc-contrast-vs-exp-chi",
        passed: worst <= 3.0,
        measured: worst,
        tolerance: 3.0,
        detail,
    }
}

/// Closed-form band-pass χ against the exact-filter χ at the same five
/// detunings the Monte Carlo check uses: the band-pass model must stay
/// within 4% across the dip at k = 4 (its error is the documented
/// boundary-term asymmetry, odd in the detuning and shrinking as 1/k).
pub fn check_band_pass_model_error() -> CheckOutcome {
    let (layer, sensor) = mc_scenario(6e28, 30e-6);
    let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
    let seq0 = sequence_for_frequency(nu_l, 4).expect("valid sequence");
    let bandwidth = seq0.bandwidth_hz();
    let mut worst = 0.0f64;
    let mut detail = String::from("χ band-pass / χ exact − 1 at detunings (filter bandwidths):");
    for frac in CONCORDANCE_FRACS {
        let seq = sequence_for_frequency(nu_l + frac * bandwidth, 4).expect("valid sequence");
        let exact = chi_quadrature(&layer, &sensor, &seq, FilterRoute::Exact)
            .expect("scenario is valid")
            .value;
        let dev = chi(&layer, &sensor, &seq) / exact - 1.0;
        worst = worst.max(dev.abs());
        detail.push_str(&format!(" {frac:+.2}: {dev:+.4}"));
    }
    CheckOutcome {
        name: "band-pass-model-error-in-band",
        passed: worst <= 0.04,
        measured: worst,
        tolerance: 0.04,
        detail,
    }
}

/// Angular prefactor recovered from the bath simulation: the simulated
/// phase variance against the closed-form χ for a δ line on resonance,
/// where the filter value cancels exactly and the ratio isolates the
/// 5π/48 layer average. Must match within 5%.
pub fn check_mc_prefactor(opts: &VerifyOptions) -> CheckOutcome {
    let (layer, sensor) = mc_scenario(2e28, f64::INFINITY);
    let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
    let seq = sequence_for_frequency(nu_l, 4).expect("valid sequence");
    let (n_realizations, n_spins) = if opts.quick { (2000, 1000) } else { (20_000, 4000) };
    let cfg = McConfig {
        n_realizations,
        n_spins,
        seed: opts.seed.wrapping_add(1),
        model: SpectralDensity::Delta,
        ..Default::default()
    };
    let mc = mc_contrast(&layer, &sensor, &seq, &cfg).expect("mc scenario is valid");
    let mut reference = chi_with_model(&layer, &sensor, &seq, SpectralDensity::Delta);
    if opts.corrupt_prefactor {
        reference *= 1.2;
    }
    let ratio = mc.chi_phase.mean / reference;
    let prefactor = ratio * 5.0 * PI / 48.0;
    CheckOutcome {
        name: "mc-angular-prefactor",
        passed: (ratio - 1.0).abs() <= 0.05,
        measured: (ratio - 1.0).abs(),
        tolerance: 0.05,
        detail: format!(
            "{n_realizations} realizations × {n_spins} spins; recovered prefactor \
             {prefactor:.4} vs 5π/48 = {:.4} (ratio {ratio:.4})",
            5.0 * PI / 48.0
        ),
    }
}
