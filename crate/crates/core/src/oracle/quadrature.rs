//! Adaptive quadrature route to the filter–line overlap and χ.
//!
//! Everything here evaluates the defining integrals numerically, without
//! touching the closed-form expressions in [`crate::lineshape`], so the two
//! paths can be compared as independent implementations. The working
//! variable is y = (T/2)(Ω − ω): the filter is a unit-period structure in y
//! (sinc² lobes of width π) and the line is a Cauchy density centered at
//! y₀ = (T/2)(ω_L − ω) with half-width ε = T/(2·T2*), so
//!
//!   I(ω) = T² · ∫ sinc²(y) · Cauchy(y; y₀, ε) dy.
//!
//! Panels are split at every sinc lobe edge and geometrically refined
//! around the line center, then driven by a worst-first Gauss–Kronrod 7–15
//! refinement. The truncated tails are not evaluated; they are bounded
//! analytically (the integrand is below coeff·c(y)/y² beyond the window)
//! and the bound is folded into `error_bound`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use crate::error::{ModelError, OracleError};
use crate::sequence::{xy8_filter_transform, PulseSequence};
use crate::spin::{larmor_frequency, SampleLayer, SensorConfig, GAMMA_E};

/// A numerically integrated value with a conservative error bound.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureEstimate {
    pub value: f64,
    /// Accumulated panel error estimates plus the analytic tail bound.
    pub error_bound: f64,
    /// Integrand evaluations spent.
    pub evaluations: usize,
}

const XGK: [f64; 7] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

fn gauss_kronrod_15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = WGK[7] * fc;
    let mut resg = WG[3] * fc;
    for (i, &x) in XGK.iter().enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        resk += WGK[i] * pair;
        if i % 2 == 1 {
            resg += WG[i / 2] * pair;
        }
    }
    (resk * half, (resk - resg).abs() * half)
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    err: f64,
    val: f64,
    a: f64,
    b: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err).then(self.a.total_cmp(&other.a))
    }
}

fn cauchy_density(y: f64, y0: f64, eps: f64) -> f64 {
    let d = y - y0;
    eps / (PI * (d * d + eps * eps))
}

/// ∫ c(y; y₀, ε)·filter(y) dy over [−W, W] (W rounded up to a lobe edge),
/// with the remainder bounded by filter(y) ≤ tail_coeff/y² outside.
fn filtered_line_average(
    y0: f64,
    eps: f64,
    filter: impl Fn(f64) -> f64,
    half_window: f64,
    tail_coeff: f64,
) -> QuadratureEstimate {
    let lobes = (half_window / PI).ceil().max(1.0);
    let w = lobes * PI;
    let mut breaks: Vec<f64> = Vec::with_capacity(2 * lobes as usize + 32);
    let mut j = -lobes;
    while j <= lobes {
        breaks.push(j * PI);
        j += 1.0;
    }
    let push_clipped = |breaks: &mut Vec<f64>, y: f64| {
        if y > -w && y < w {
            breaks.push(y);
        }
    };
    push_clipped(&mut breaks, y0);
    let mut m = 0.5;
    while m * eps < 2.0 * w {
        push_clipped(&mut breaks, y0 - m * eps);
        push_clipped(&mut breaks, y0 + m * eps);
        m *= 2.0;
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * w);

    let mut evaluations = 0usize;
    let mut f = |y: f64| {
        evaluations += 1;
        cauchy_density(y, y0, eps) * filter(y)
    };

    let mut heap = BinaryHeap::with_capacity(breaks.len() + 4096);
    let mut total_val = 0.0;
    let mut total_err = 0.0;
    for pair in breaks.windows(2) {
        let (val, err) = gauss_kronrod_15(&mut f, pair[0], pair[1]);
        total_val += val;
        total_err += err;
        heap.push(Panel { err, val, a: pair[0], b: pair[1] });
    }
    for _ in 0..4000 {
        if total_err <= (1e-9 * total_val.abs()).max(1e-300) {
            break;
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        if worst.b - worst.a < 1e-15 * w {
            heap.push(worst);
            break;
        }
        let mid = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gauss_kronrod_15(&mut f, worst.a, mid);
        let (v2, e2) = gauss_kronrod_15(&mut f, mid, worst.b);
        total_val += v1 + v2 - worst.val;
        total_err += e1 + e2 - worst.err;
        heap.push(Panel { err: e1, val: v1, a: worst.a, b: mid });
        heap.push(Panel { err: e2, val: v2, a: mid, b: worst.b });
    }
    let value: f64 = heap.iter().map(|p| p.val).sum();
    let panel_err: f64 = heap.iter().map(|p| p.err).sum();

    // |∫_{|y|>W} c·filter| ≤ tail_coeff·(ε/π)·Σ± 1/(W²·(W ∓ y₀)); the
    // window construction keeps W − |y₀| > 0.
    let tail = tail_coeff * eps / PI * (1.0 / (w * w * (w - y0)) + 1.0 / (w * w * (w + y0)));
    QuadratureEstimate { value, error_bound: panel_err + tail.abs(), evaluations }
}

// Rerun with a doubled window while the total error bound (dominated by
// the analytic tail when the line sits far from the pass band) exceeds
// 1e-7 of the value. The tail falls off as 1/W³, so a few doublings always
// suffice when the panels themselves have converged.
fn converged_line_average(
    y0: f64,
    eps: f64,
    filter: impl Fn(f64) -> f64,
    half_window: f64,
    tail_coeff: f64,
) -> QuadratureEstimate {
    let mut w = half_window;
    let mut est = filtered_line_average(y0, eps, &filter, w, tail_coeff);
    let mut evaluations = est.evaluations;
    for _ in 0..4 {
        if est.error_bound <= 1e-7 * est.value.abs() {
            break;
        }
        w *= 2.0;
        est = filtered_line_average(y0, eps, &filter, w, tail_coeff);
        evaluations += est.evaluations;
    }
    QuadratureEstimate { evaluations, ..est }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn bandpass_window(y0: f64, eps: f64) -> f64 {
    y0.abs() + 60.0 * eps + 340.0 * PI
}

/// Filter–line overlap I(ω) by adaptive quadrature of the defining
/// integral. An infinite T2* collapses the line to a point and the value
/// T²·sinc²((T/2)(ω_L − ω)) is returned exactly.
pub fn overlap_quadrature(
    omega: f64,
    omega_l: f64,
    t2_star: f64,
    n_pulses: u32,
) -> QuadratureEstimate {
    let total_time = f64::from(n_pulses) * PI / omega;
    let y0 = 0.5 * total_time * (omega_l - omega);
    if t2_star.is_infinite() {
        let s = total_time * sinc(y0);
        return QuadratureEstimate { value: s * s, error_bound: 0.0, evaluations: 1 };
    }
    let eps = 0.5 * total_time / t2_star;
    let est = converged_line_average(
        y0,
        eps,
        |y| {
            let s = sinc(y);
            s * s
        },
        bandpass_window(y0, eps),
        1.0,
    );
    QuadratureEstimate {
        value: total_time * total_time * est.value,
        error_bound: total_time * total_time * est.error_bound,
        evaluations: est.evaluations,
    }
}

/// Which filter profile multiplies the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterRoute {
    /// The band-pass profile (4/π²)(Nτ)²·sinc²((Nτ/2)(Ω − π/τ)).
    BandPass,
    /// |G(Ω)|² of the actual pulse schedule, harmonics included.
    Exact,
}

/// χ of one layer by direct integration of the field spectral density
/// against the squared filter: χ = (γₑ²/4π)·∫S_B(Ω)|g(Ω)|²dΩ. The spectral
/// density is the area-normalized line at the layer's Larmor frequency
/// scaled by the total field variance, so this route exercises the
/// variance normalization and the filter but none of the closed-form
/// overlap algebra.
pub fn chi_quadrature(
    layer: &SampleLayer,
    sensor: &SensorConfig,
    seq: &PulseSequence,
    route: FilterRoute,
) -> Result<QuadratureEstimate, ModelError> {
    let omega = PI / seq.tau;
    let total_time = seq.duration();
    let omega_l = larmor_frequency(&layer.species, sensor.b0);
    let variance = crate::lineshape::field_variance_scale(layer, sensor);
    let scale = GAMMA_E * GAMMA_E * variance * total_time * total_time / (PI * PI);
    let y0 = 0.5 * total_time * (omega_l - omega);

    // normalized filter profile: the band-pass peak maps to f(0) = 1
    let profile = |y: f64| -> f64 {
        match route {
            FilterRoute::BandPass => {
                let s = sinc(y);
                s * s
            }
            FilterRoute::Exact => {
                let big_omega = (omega + 2.0 * y / total_time).abs();
                if big_omega * total_time < 1e-6 {
                    return 0.0;
                }
                let g = xy8_filter_transform(big_omega, seq);
                g.norm_sqr() * PI * PI / (4.0 * total_time * total_time)
            }
        }
    };

    let t2 = layer.species.t2_star;
    if t2.is_infinite() {
        let value = scale * profile(y0);
        return Ok(QuadratureEstimate { value, error_bound: 1e-12 * value, evaluations: 1 });
    }
    let eps = 0.5 * total_time / t2;
    let (window, tail_coeff) = match route {
        FilterRoute::BandPass => (bandpass_window(y0, eps), 1.0),
        FilterRoute::Exact => {
            let n1 = f64::from(seq.n_pulses()) + 1.0;
            (bandpass_window(y0, eps).max(2500.0), n1 * n1 * PI * PI / 4.0)
        }
    };
    let est = converged_line_average(y0, eps, profile, window, tail_coeff);
    Ok(QuadratureEstimate {
        value: scale * est.value,
        error_bound: scale * est.error_bound,
        evaluations: est.evaluations,
    })
}

/// The band-pass χ integral as a plain number, with convergence enforced:
/// errors out unless the quadrature's error bound is within 10⁻⁶ of the
/// value. This is the reference χ the closed form is validated against.
pub fn numerical_chi(
    layer: &SampleLayer,
    sensor: &SensorConfig,
    seq: &PulseSequence,
) -> Result<f64, OracleError> {
    let est = chi_quadrature(layer, sensor, seq, FilterRoute::BandPass)?;
    if est.error_bound > 1e-6 * est.value.abs() {
        return Err(OracleError::NotConverged {
            value: est.value,
            error_bound: est.error_bound,
            required_rel: 1e-6,
        });
    }
    Ok(est.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::{chi, closed_form_i};
    use crate::spin::NuclearSpecies;

    // Brute-force check on a uniform grid in θ after y = y₀ + ε·tan θ,
    // which flattens the Cauchy weight to 1/π exactly.
    fn overlap_simpson(omega: f64, omega_l: f64, t2: f64, n_pulses: u32, points: usize) -> f64 {
        let total_time = f64::from(n_pulses) * PI / omega;
        let y0 = 0.5 * total_time * (omega_l - omega);
        let eps = 0.5 * total_time / t2;
        let n = points | 1;
        let h = PI / (n as f64 - 1.0);
        let mut sum = 0.0;
        for i in 0..n {
            let theta = -0.5 * PI + h * i as f64;
            let y = y0 + eps * theta.tan();
            let s = if y.is_finite() { sinc(y) } else { 0.0 };
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * s * s;
        }
        total_time * total_time * sum * h / (3.0 * PI)
    }

    #[test]
    fn line_average_of_unity_is_enclosed_cauchy_mass() {
        for (y0, eps) in [(0.0, 0.3), (5.0, 0.01), (-40.0, 2.0)] {
            let w_req = bandpass_window(y0, eps);
            let w = (w_req / PI).ceil() * PI;
            let est = filtered_line_average(y0, eps, |_| 1.0, w_req, 0.0);
            let exact =
                (((w - y0) / eps).atan() + ((w + y0) / eps).atan()) / PI;
            assert!(
                (est.value - exact).abs() < 1e-9,
                "mass {} vs {}",
                est.value,
                exact
            );
        }
    }

    #[test]
    fn quadrature_matches_brute_force_grid() {
        let t2 = 30e-6;
        let tau = 0.6e-6;
        let omega = PI / tau;
        let n = 32;
        for beta in [0.0, 0.7, 3.0] {
            let omega_l = omega + beta / t2;
            let q = overlap_quadrature(omega, omega_l, t2, n);
            let s = overlap_simpson(omega, omega_l, t2, n, 4_000_001);
            assert!(
                (q.value / s - 1.0).abs() < 1e-4,
                "beta {beta}: quadrature {} vs grid {}",
                q.value,
                s
            );
        }
    }

    #[test]
    fn quadrature_error_bound_is_honest_against_closed_form() {
        // spot checks across the (β, x) plane, one per decade of x
        let t2 = 30e-6;
        for x in [0.01, 0.1, 1.0, 10.0] {
            for beta in [0.0, 1.0, 10.0, 20.0, -15.0] {
                let n = 32u32;
                let total_time = x * t2;
                let omega = f64::from(n) * PI / total_time;
                let omega_l = omega + beta / t2;
                let q = overlap_quadrature(omega, omega_l, t2, n);
                let cf = closed_form_i(omega, omega_l, t2, n);
                assert!(
                    (q.value - cf).abs() <= (3.0 * q.error_bound).max(1e-12 * cf),
                    "x {x} beta {beta}: {} vs {} bound {}",
                    q.value,
                    cf,
                    q.error_bound
                );
                assert!(q.error_bound < 1e-6 * cf.abs().max(q.value.abs()));
            }
        }
    }

    #[test]
    fn delta_line_limit_is_exact() {
        let tau = 0.5e-6;
        let omega = PI / tau;
        let q = overlap_quadrature(omega, omega * 1.0001, f64::INFINITY, 16);
        let t = 16.0 * tau;
        let s = t * sinc(0.5 * t * (omega * 1.0001 - omega));
        assert_eq!(q.value, s * s);
    }

    fn test_layer(t2: f64) -> (SampleLayer, SensorConfig) {
        let layer =
            SampleLayer::new(NuclearSpecies::hydrogen(t2), 6e28, 0.0, f64::INFINITY).unwrap();
        let sensor = SensorConfig::new(8e-9, 20e-3).unwrap();
        (layer, sensor)
    }

    #[test]
    fn chi_routes_agree_with_closed_form() {
        let (layer, sensor) = test_layer(30e-6);
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        for detune in [0.0, 5e3, -20e3, 80e3] {
            let seq = crate::sequence::sequence_for_frequency(nu_l + detune, 4).unwrap();
            let quad = chi_quadrature(&layer, &sensor, &seq, FilterRoute::BandPass).unwrap();
            let closed = chi(&layer, &sensor, &seq);
            assert!(
                (quad.value / closed - 1.0).abs() < 1e-6,
                "detune {detune}: {} vs {}",
                quad.value,
                closed
            );
        }
    }

    #[test]
    fn exact_filter_chi_matches_bandpass_in_band() {
        let (layer, sensor) = test_layer(30e-6);
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        let seq = crate::sequence::sequence_for_frequency(nu_l, 10).unwrap();
        let exact = chi_quadrature(&layer, &sensor, &seq, FilterRoute::Exact).unwrap();
        let bp = chi_quadrature(&layer, &sensor, &seq, FilterRoute::BandPass).unwrap();
        assert!(
            (exact.value / bp.value - 1.0).abs() < 0.05,
            "exact {} vs band-pass {}",
            exact.value,
            bp.value
        );
    }

    #[test]
    fn delta_species_chi_is_closed_form() {
        let (layer, sensor) = test_layer(f64::INFINITY);
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        let seq = crate::sequence::sequence_for_frequency(nu_l + 3e3, 4).unwrap();
        let quad = chi_quadrature(&layer, &sensor, &seq, FilterRoute::BandPass).unwrap();
        let closed = chi(&layer, &sensor, &seq);
        assert!((quad.value / closed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn numerical_chi_converges_and_matches_closed_form() {
        let (layer, sensor) = test_layer(30e-6);
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        let seq = crate::sequence::sequence_for_frequency(nu_l + 10e3, 4).unwrap();
        let value = numerical_chi(&layer, &sensor, &seq).unwrap();
        assert!((value / chi(&layer, &sensor, &seq) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn numerical_chi_of_empty_layer_is_zero() {
        let (mut layer, sensor) = test_layer(30e-6);
        layer.density = 0.0;
        let nu_l = larmor_frequency(&layer.species, sensor.b0) / (2.0 * PI);
        let seq = crate::sequence::sequence_for_frequency(nu_l, 4).unwrap();
        assert_eq!(numerical_chi(&layer, &sensor, &seq).unwrap(), 0.0);
    }
}
