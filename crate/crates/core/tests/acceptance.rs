//! Release gate: one test per acceptance criterion. Each prints a single
//! PASS/FAIL line with the measured numbers (visible under --nocapture)
//! and asserts the stated tolerance, so `cargo test --test acceptance`
//! reports one verdict per criterion.

use std::f64::consts::PI;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use nvnmr::fitting::{
    baseline_correct, calibrate_depth, fit_gyromagnetic, fit_layer_thickness, fit_spectrum,
    log_contrast_fwhm, model_selection_layered_vs_isotropic, FitDataset, FitProblem,
    LayerTemplate, Param, FLUORINE_REFERENCE_DENSITY, PROTON_REFERENCE_DENSITY,
};
use nvnmr::imaging::{corner_mask, fit_map, pixel_spectra, synthesize_scene, NoiseModel, Scene};
use nvnmr::lineshape::{contrast_spectrum, SpectralDensity, Spectrum};
use nvnmr::sequence::sequence_for_frequency;
use nvnmr::spin::{
    larmor_frequency, NuclearSpecies, SampleLayer, SampleStack, SensorConfig, GAMMA_P31,
};
use nvnmr::verify::{
    check_equivalent_spins, check_filter_bandwidth, check_mc_concordance, check_mc_prefactor,
    check_overlap_against_quadrature, VerifyOptions,
};

fn gate(name: &str, passed: bool, detail: &str) {
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{name}: {detail}");
}

/// Uniform probe-frequency sweep turned into XY8-k sequences.
fn sweep(nu_lo: f64, nu_hi: f64, n: usize, k: u32) -> Vec<nvnmr::sequence::PulseSequence> {
    (0..n)
        .map(|i| nu_lo + (nu_hi - nu_lo) * i as f64 / (n - 1) as f64)
        .map(|nu| sequence_for_frequency(nu, k).expect("valid sweep point"))
        .collect()
}

#[test]
fn closed_form_overlap_matches_adaptive_quadrature() {
    let start = Instant::now();
    let check = check_overlap_against_quadrature();
    let elapsed = start.elapsed().as_secs_f64();
    gate(
        "closed-form-vs-quadrature",
        check.passed && elapsed <= 60.0,
        &format!("{} in {elapsed:.1} s (budget 60 s)", check.detail),
    );
}

#[test]
fn filter_fwhm_follows_the_bandwidth_rule_across_orders() {
    let check = check_filter_bandwidth();
    gate("filter-bandwidth", check.passed, &check.detail);
}

#[test]
fn twenty_thousand_unpolarized_spins_act_like_141_polarized() {
    let check = check_equivalent_spins();
    gate("statistical-polarization", check.passed, &check.detail);
}

#[test]
fn bath_monte_carlo_agrees_with_the_analytic_contrast() {
    let start = Instant::now();
    let opts = VerifyOptions::default();
    let concordance = check_mc_concordance(&opts);
    let prefactor = check_mc_prefactor(&opts);
    let elapsed = start.elapsed().as_secs_f64();
    gate(
        "monte-carlo-concordance",
        concordance.passed && prefactor.passed && elapsed <= 600.0,
        &format!("{}; {}; in {elapsed:.0} s (budget 600 s)", concordance.detail, prefactor.detail),
    );
}

fn oil_spectrum(depth: f64) -> Spectrum {
    let sensor = SensorConfig::new(depth, 20e-3).expect("valid sensor");
    let layer = SampleLayer::new(
        NuclearSpecies::hydrogen(30e-6),
        PROTON_REFERENCE_DENSITY,
        0.0,
        f64::INFINITY,
    )
    .expect("valid layer");
    let stack = SampleStack::new(vec![layer]).expect("valid stack");
    contrast_spectrum(&stack, &sensor, &sweep(700e3, 1020e3, 161, 8)).expect("valid spectrum")
}

#[test]
fn depth_calibration_round_trips_from_perturbed_starts() {
    let mut detail = String::from("fitted-depth relative errors —");
    let mut ok = true;
    for true_d in [3e-9, 8e-9, 15e-9] {
        let spectrum = oil_spectrum(true_d);
        for start_factor in [0.8, 1.2] {
            let mut layer = LayerTemplate::for_species(
                &NuclearSpecies::hydrogen(f64::INFINITY),
                SpectralDensity::Lorentzian,
            );
            layer.density = Param::fixed(PROTON_REFERENCE_DENSITY);
            layer.t2_star = Param::free("t2", 30e-6 * start_factor, 1e-7, 1e-1);
            let problem = FitProblem {
                datasets: vec![FitDataset {
                    spectrum: spectrum.clone(),
                    depth: Param::free("d", true_d * start_factor, 5e-10, 2e-7),
                    layers: vec![layer],
                }],
            };
            let fit = fit_spectrum(&problem).expect("depth fit");
            let rel = (fit.value("d") / true_d - 1.0).abs();
            ok &= fit.converged && rel <= 0.05;
            detail.push_str(&format!(
                " {:.0} nm from {:+.0}%: {rel:.1e};",
                true_d * 1e9,
                (start_factor - 1.0) * 100.0
            ));
        }
        let workflow = calibrate_depth(&spectrum, PROTON_REFERENCE_DENSITY).expect("calibration");
        let rel = (workflow.value("d") / true_d - 1.0).abs();
        ok &= workflow.converged && rel <= 0.05;
        detail.push_str(&format!(" {:.0} nm self-seeded: {rel:.1e};", true_d * 1e9));
    }
    gate("depth-calibration-round-trip", ok, detail.trim_end_matches(';'));
}

fn film_spectrum(depth: f64, t: f64) -> Spectrum {
    let sensor = SensorConfig::new(depth, 20e-3).expect("valid sensor");
    let hydrogen = SampleLayer::new(
        NuclearSpecies::hydrogen(f64::INFINITY),
        PROTON_REFERENCE_DENSITY,
        0.0,
        t,
    )
    .expect("valid layer");
    let fluorine = SampleLayer::new(
        NuclearSpecies::fluorine(f64::INFINITY),
        FLUORINE_REFERENCE_DENSITY,
        t,
        f64::INFINITY,
    )
    .expect("valid layer");
    let stack = SampleStack::new(vec![hydrogen, fluorine]).expect("valid stack");
    contrast_spectrum(&stack, &sensor, &sweep(700e3, 1000e3, 151, 8)).expect("valid spectrum")
}

#[test]
fn film_thickness_recovered_and_isotropic_mixture_rejected() {
    let t_true = 0.8e-9;
    let data = vec![
        (film_spectrum(7e-9, t_true), Param::fixed(7e-9)),
        (film_spectrum(12e-9, t_true), Param::fixed(12e-9)),
    ];
    let fit = fit_layer_thickness(&data, 2e-9).expect("thickness fit");
    let t = fit.value("t");
    let selection = model_selection_layered_vs_isotropic(&data, 4.0).expect("model selection");
    gate(
        "film-thickness-and-model-selection",
        fit.converged && (t - t_true).abs() <= 0.1e-9 && selection.isotropic_rejected,
        &format!(
            "t = {:.3} nm (true 0.800, tolerance 0.1); isotropic/layered RSS ratio {:.2e} \
             (rejection threshold 4)",
            t * 1e9,
            selection.rss_ratio
        ),
    );
}

/// Resonance points read off synthetic spectra: one semi-infinite layer of
/// the species, spectrum swept around its line, dip located by the
/// log-contrast width estimator.
fn dip_positions(species: &NuclearSpecies, fields: &[f64]) -> Vec<(f64, f64)> {
    fields
        .iter()
        .map(|&b0| {
            let sensor = SensorConfig::new(8e-9, b0).expect("valid sensor");
            let layer =
                SampleLayer::new(species.clone(), 4e28, 0.0, f64::INFINITY).expect("valid layer");
            let stack = SampleStack::new(vec![layer]).expect("valid stack");
            let nu_l = larmor_frequency(species, b0) / (2.0 * PI);
            let spectrum =
                contrast_spectrum(&stack, &sensor, &sweep(0.85 * nu_l, 1.15 * nu_l, 121, 8))
                    .expect("valid spectrum");
            let dip = log_contrast_fwhm(&spectrum).expect("dip present");
            (b0, dip.nu_hz)
        })
        .collect()
}

#[test]
fn gyromagnetic_ratios_recovered_and_bias_reported() {
    let fields = [17e-3, 20e-3, 23e-3];
    let mut detail = String::from("slope relative errors —");
    let mut ok = true;
    for species in [
        NuclearSpecies::hydrogen(30e-6),
        NuclearSpecies::fluorine(30e-6),
    ] {
        let fit = fit_gyromagnetic(&dip_positions(&species, &fields)).expect("gyro fit");
        let rel = (fit.gamma_over_2pi / (species.gamma_n / (2.0 * PI)) - 1.0).abs();
        ok &= rel <= 1e-3;
        detail.push_str(&format!(" {}: {rel:.1e};", species.name));
    }
    // A bound-phosphorus sample whose lines sit 4% above the bare-nucleus
    // frequency: the fit must report that shift against the tabulated ratio.
    let shifted = NuclearSpecies::new("31P-bound", 1.04 * GAMMA_P31, 30e-6).expect("valid species");
    let fit = fit_gyromagnetic(&dip_positions(&shifted, &fields)).expect("gyro fit");
    let bias = fit.gamma_over_2pi / (GAMMA_P31 / (2.0 * PI)) - 1.0;
    ok &= (bias - 0.04).abs() <= 2e-3;
    gate(
        "gyromagnetic-ratio-fits",
        ok,
        &format!("{} 31P set reads {bias:+.4} above tabulated (expected +0.04)", detail),
    );
}

#[test]
fn corner_mask_scene_classifies_fluorine_presence() {
    let start = Instant::now();
    let sensor = SensorConfig::new(6e-9, 20e-3).expect("valid sensor");
    let hydrogen_cap = SampleLayer::new(
        NuclearSpecies::hydrogen(f64::INFINITY),
        PROTON_REFERENCE_DENSITY,
        0.0,
        0.8e-9,
    )
    .expect("valid layer");
    let fluorine = |z1: f64| {
        SampleLayer::new(
            NuclearSpecies::fluorine(f64::INFINITY),
            FLUORINE_REFERENCE_DENSITY,
            z1,
            f64::INFINITY,
        )
        .expect("valid layer")
    };
    let bare = SampleStack::new(vec![hydrogen_cap.clone(), fluorine(0.8e-9)]).expect("stack");
    // Under the patterned mask the fluorine sits 90 nm further from the
    // sensor, far outside detection range; the proton cap is everywhere.
    let masked =
        SampleStack::new(vec![hydrogen_cap.clone(), fluorine(0.8e-9 + 90e-9)]).expect("stack");

    let (width, height, k) = (64usize, 64usize, 8u32);
    let delays: Vec<f64> =
        (0..51).map(|i| 730e3 + 4e3 * i as f64).map(|nu| 1.0 / (2.0 * nu)).collect();
    let scene = Scene {
        width,
        height,
        mask: corner_mask(width, height),
        masked_stack: masked,
        bare_stack: bare,
        sensor,
        k,
        delays_s: delays,
        pixel_pitch_m: 100e-9,
        mean_counts: 1e4,
        noise: NoiseModel::Poisson,
    };
    let stack = synthesize_scene(&scene, &mut ChaCha12Rng::seed_from_u64(42)).expect("synthesis");
    let grid = pixel_spectra(&stack).expect("pixel spectra");

    let windows: Vec<(f64, f64)> = [
        NuclearSpecies::hydrogen(f64::INFINITY),
        NuclearSpecies::fluorine(f64::INFINITY),
    ]
    .iter()
    .map(|s| {
        let nu = larmor_frequency(s, sensor.b0) / (2.0 * PI);
        let seq = sequence_for_frequency(nu, k).expect("valid sequence");
        (nu - 2.0 * seq.bandwidth_hz(), nu + 2.0 * seq.bandwidth_hz())
    })
    .collect();
    let corrected = nvnmr::imaging::SpectrumGrid {
        spectra: grid
            .spectra
            .iter()
            .map(|s| baseline_correct(s, &windows).expect("baseline"))
            .collect(),
        ..grid
    };

    let mut template_h =
        LayerTemplate::for_species(&NuclearSpecies::hydrogen(f64::INFINITY), SpectralDensity::Delta);
    template_h.density = Param::free("rho_h", 3e28, 0.0, 2e29);
    template_h.z2 = Param::fixed(0.8e-9);
    let mut template_f =
        LayerTemplate::for_species(&NuclearSpecies::fluorine(f64::INFINITY), SpectralDensity::Delta);
    template_f.density = Param::free("rho_f", 1e28, 0.0, 2e29);
    template_f.z1 = Param::fixed(0.8e-9);
    let template = FitProblem {
        datasets: vec![FitDataset {
            spectrum: corrected.spectra[0].clone(),
            depth: Param::fixed(sensor.depth),
            layers: vec![template_h, template_f],
        }],
    };
    let map = fit_map(&corrected, &template).expect("map fit");

    let rho_f = map.channel("rho_f").expect("rho_f channel");
    let rho_h = map.channel("rho_h").expect("rho_h channel");
    let threshold = 0.5 * FLUORINE_REFERENCE_DENSITY;
    let correct = (0..width * height)
        .filter(|&i| {
            let fluorine_seen = map.mask[i] && rho_f[i] > threshold;
            fluorine_seen != scene.mask[i]
        })
        .count();
    let accuracy = correct as f64 / (width * height) as f64;

    let (mut h_sum, mut h_sq, mut n) = (0.0, 0.0, 0.0);
    for i in 0..width * height {
        if map.mask[i] {
            h_sum += rho_h[i];
            h_sq += rho_h[i] * rho_h[i];
            n += 1.0;
        }
    }
    let h_mean = h_sum / n;
    let h_rel_sd = (h_sq / n - h_mean * h_mean).max(0.0).sqrt() / h_mean;
    let h_uniform = h_rel_sd <= 0.05 && (h_mean / PROTON_REFERENCE_DENSITY - 1.0).abs() <= 0.05;

    let elapsed = start.elapsed().as_secs_f64();
    gate(
        "imaging-end-to-end",
        accuracy >= 0.99 && h_uniform && elapsed <= 600.0,
        &format!(
            "fluorine classification {:.2}% over {} pixels (threshold 99%); proton map mean \
             {:.3e} ± {:.1}% rel (uniform within 5%); in {elapsed:.0} s (budget 600 s)",
            accuracy * 100.0,
            width * height,
            h_mean,
            h_rel_sd * 100.0
        ),
    );
}
