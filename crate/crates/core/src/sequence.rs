//! XY8-k pulse timing and the resulting phase filter function.
//!
//! The sequence applies N = 8k π-pulses with inter-pulse delay τ, the first
//! pulse τ/2 after the initial π/2 and the final readout τ/2 after the last
//! π-pulse. Pulses are treated as instantaneous; only the timing matters
//! for the filter, so the XY8 phase pattern is not represented. With these
//! edge delays the pass band sits exactly at ν = 1/(2τ).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Fractional filter bandwidth: FWHM ≈ `BANDWIDTH_COEFF` / (k·τ) in Hz.
pub const BANDWIDTH_COEFF: f64 = 0.111;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    /// Inter-pulse delay τ, s.
    pub tau: f64,
    /// Number of 8-pulse blocks.
    pub k: u32,
}

impl PulseSequence {
    pub fn new(tau: f64, k: u32) -> Result<Self, ModelError> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(ModelError::InvalidSequence(format!(
                "tau must be finite and > 0, got {tau}"
            )));
        }
        if k == 0 {
            return Err(ModelError::InvalidSequence("k must be >= 1".into()));
        }
        Ok(Self { tau, k })
    }

    /// Number of π-pulses, N = 8k.
    pub fn n_pulses(&self) -> u32 {
        8 * self.k
    }

    /// Total phase-accumulation time N·τ, s.
    pub fn duration(&self) -> f64 {
        f64::from(self.n_pulses()) * self.tau
    }

    /// Nominal detection bandwidth (FWHM of the pass band), Hz.
    pub fn bandwidth_hz(&self) -> f64 {
        BANDWIDTH_COEFF / (f64::from(self.k) * self.tau)
    }
}

/// Center frequency of the pass band, ν = 1/(2τ) in Hz.
pub fn filter_center_frequency(seq: &PulseSequence) -> f64 {
    1.0 / (2.0 * seq.tau)
}

/// The sequence for a given center frequency: τ = 1/(2ν).
pub fn sequence_for_frequency(nu_hz: f64, k: u32) -> Result<PulseSequence, ModelError> {
    if !nu_hz.is_finite() || nu_hz <= 0.0 {
        return Err(ModelError::InvalidSequence(format!(
            "center frequency must be finite and > 0, got {nu_hz}"
        )));
    }
    PulseSequence::new(1.0 / (2.0 * nu_hz), k)
}

/// Explicit π-pulse times of an XY8-k block train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    /// Pulse times, s, strictly increasing; pulse m at (m − 1/2)·τ.
    pub pulse_times: Vec<f64>,
    /// Total duration N·τ, s.
    pub duration: f64,
}

/// Pulse times for the τ/2-edge convention: (m − 1/2)·τ, m = 1..N.
pub fn xy8_schedule(seq: &PulseSequence) -> PulseSchedule {
    let n = seq.n_pulses();
    let pulse_times = (1..=n).map(|m| (f64::from(m) - 0.5) * seq.tau).collect();
    PulseSchedule { pulse_times, duration: seq.duration() }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Band-pass approximation of the filter:
/// |g(Ω)|² ≈ (4/π²)(Nτ)² sinc²((Nτ/2)(Ω − π/τ)), with Ω in rad/s.
///
/// Keeps only the fundamental pass band of the toggling function; odd
/// harmonics (3π/τ, 5π/τ, …) are dropped.
pub fn filter_function(omega: f64, seq: &PulseSequence) -> f64 {
    let t = seq.duration();
    let s = sinc(0.5 * t * (omega - std::f64::consts::PI / seq.tau));
    4.0 / (std::f64::consts::PI * std::f64::consts::PI) * t * t * s * s
}

/// Exact |g(Ω)|² from an explicit schedule, where
/// g(Ω) = ∫₀ᵀ g(t)·e^{−iΩt} dt and g(t) is the ±1 toggling function that
/// starts at +1 and flips at each pulse.
///
/// Each constant segment [a, b] contributes s·(b−a)·sinc(Ω(b−a)/2)·e^{−iΩ(a+b)/2},
/// which is exact and cancellation-free down to Ω = 0, where the segments
/// sum to ∫g(t)dt = 0.
pub fn exact_filter_function(omega: f64, schedule: &PulseSchedule) -> f64 {
    let g = filter_transform(omega, schedule);
    g.norm_sqr()
}

/// The complex segment-sum transform underlying [`exact_filter_function`].
pub fn filter_transform(omega: f64, schedule: &PulseSchedule) -> Complex64 {
    if omega == 0.0 {
        // the toggling function has zero mean by construction; the segment
        // sum only reproduces that up to rounding in the pulse times
        return Complex64::new(0.0, 0.0);
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut a = 0.0;
    let mut sign = 1.0;
    let edge = |a: f64, b: f64, sign: f64| {
        let len = b - a;
        let mid = 0.5 * (a + b);
        sign * len * sinc(0.5 * omega * len) * Complex64::from_polar(1.0, -omega * mid)
    };
    for &t in &schedule.pulse_times {
        sum += edge(a, t, sign);
        a = t;
        sign = -sign;
    }
    sum += edge(a, schedule.duration, sign);
    sum
}

/// Closed form of [`filter_transform`] for XY8-k timing, O(1) in N.
///
/// Telescoping the segment sum over the (m − 1/2)τ pulse grid gives, for
/// even N,
///   g(Ω) = (1/iΩ)·[1 − e^{−iΩNτ} + 2·Σₘ (−1)^m e^{−iΩ(m−1/2)τ}],
/// and the sum is geometric in q = −e^{−iΩτ}.
pub fn xy8_filter_transform(omega: f64, seq: &PulseSequence) -> Complex64 {
    let n = seq.n_pulses();
    let tau = seq.tau;
    if omega == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let big_t = seq.duration();
    let q = -Complex64::from_polar(1.0, -omega * tau);
    let one_minus_q = Complex64::new(1.0, 0.0) - q;
    let series = if one_minus_q.norm() < 1e-9 {
        (1..=n)
            .map(|m| {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * Complex64::from_polar(1.0, -omega * (f64::from(m) - 0.5) * tau)
            })
            .sum::<Complex64>()
    } else {
        let qn = q.powu(n);
        Complex64::from_polar(1.0, 0.5 * omega * tau) * q * (Complex64::new(1.0, 0.0) - qn)
            / one_minus_q
    };
    let boundary = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, -omega * big_t);
    (boundary + 2.0 * series) / Complex64::new(0.0, omega)
}
