//! Nuclear species, layered sample geometry, and sensor parameters.
//!
//! All quantities are SI throughout the library: meters, seconds, tesla,
//! rad/s. Unit conversion (nm, µs, mT, MHz) happens only at the CLI and
//! file boundary.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Serde adapter for fields that may legitimately be infinite. JSON has no
/// Infinity literal (serde_json turns non-finite floats into `null`), so
/// such values cross the file boundary as the strings `"inf"`, `"-inf"`,
/// `"nan"`; finite values stay plain numbers.
mod extended_float {
    use std::fmt;

    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct Visitor;

    impl de::Visitor<'_> for Visitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a float or one of \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, s: &str) -> Result<f64, E> {
            match s {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(E::invalid_value(de::Unexpected::Str(s), &self)),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(Visitor)
    }
}

/// Vacuum permeability, T·m/A.
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Electron-spin gyromagnetic ratio magnitude, rad s⁻¹ T⁻¹ (2π × 28.025 GHz/T).
pub const GAMMA_E: f64 = 1.760_859_630_23e11;

/// ¹H gyromagnetic ratio, rad s⁻¹ T⁻¹ (2π × 42.5775 MHz/T).
pub const GAMMA_H1: f64 = 2.675_221_874_4e8;

/// ¹⁹F gyromagnetic ratio, rad s⁻¹ T⁻¹ (2π × 40.0766 MHz/T).
pub const GAMMA_F19: f64 = 2.518_148e8;

/// ³¹P gyromagnetic ratio, rad s⁻¹ T⁻¹ (2π × 17.2515 MHz/T). Free-nucleus
/// table value; effective values extracted from surface layers can deviate
/// by percent-scale amounts and should be fitted, not assumed.
pub const GAMMA_P31: f64 = 1.083_94e8;

/// A spin-1/2 nuclear species in the sample.
///
/// `t2_star` is the inhomogeneous dephasing time of the nuclear transverse
/// magnetization. `f64::INFINITY` selects the zero-linewidth limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpecies {
    pub name: String,
    /// Signed gyromagnetic ratio, rad s⁻¹ T⁻¹.
    pub gamma_n: f64,
    /// Transverse dephasing time, s. May be infinite.
    #[serde(with = "extended_float")]
    pub t2_star: f64,
}

impl NuclearSpecies {
    pub fn new(name: &str, gamma_n: f64, t2_star: f64) -> Result<Self, ModelError> {
        if gamma_n == 0.0 || !gamma_n.is_finite() {
            return Err(ModelError::InvalidSpecies {
                name: name.to_string(),
                reason: format!("gyromagnetic ratio must be finite and nonzero, got {gamma_n}"),
            });
        }
        if t2_star.is_nan() || t2_star <= 0.0 {
            return Err(ModelError::InvalidSpecies {
                name: name.to_string(),
                reason: format!("T2* must be positive (infinity allowed), got {t2_star}"),
            });
        }
        Ok(Self { name: name.to_string(), gamma_n, t2_star })
    }

    /// ¹H with the given T2*.
    pub fn hydrogen(t2_star: f64) -> Self {
        Self::new("1H", GAMMA_H1, t2_star).expect("valid constants")
    }

    /// ¹⁹F with the given T2*.
    pub fn fluorine(t2_star: f64) -> Self {
        Self::new("19F", GAMMA_F19, t2_star).expect("valid constants")
    }

    /// ³¹P with the given T2*.
    pub fn phosphorus(t2_star: f64) -> Self {
        Self::new("31P", GAMMA_P31, t2_star).expect("valid constants")
    }

    /// Looks up a built-in species by name (`"1H"`, `"19F"`, `"31P"`).
    pub fn builtin(name: &str, t2_star: f64) -> Option<Self> {
        match name {
            "1H" | "h" | "H" => Some(Self::hydrogen(t2_star)),
            "19F" | "f" | "F" => Some(Self::fluorine(t2_star)),
            "31P" | "p" | "P" => Some(Self::phosphorus(t2_star)),
            _ => None,
        }
    }
}

/// Nuclear Larmor angular frequency |γₙ|·B₀, rad/s.
pub fn larmor_frequency(species: &NuclearSpecies, b0: f64) -> f64 {
    species.gamma_n.abs() * b0
}

/// A homogeneous nuclear layer. Depths are measured from the diamond
/// surface into the sample; the sensor sits `SensorConfig::depth` below
/// the surface, so a spin at layer depth z is `depth + z` from the sensor
/// along the surface normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLayer {
    pub species: NuclearSpecies,
    /// Number density, m⁻³.
    pub density: f64,
    /// Near bound of the layer, m (>= 0).
    pub z1: f64,
    /// Far bound of the layer, m. `f64::INFINITY` for semi-infinite.
    #[serde(with = "extended_float")]
    pub z2: f64,
}

impl SampleLayer {
    pub fn new(species: NuclearSpecies, density: f64, z1: f64, z2: f64) -> Result<Self, ModelError> {
        if !density.is_finite() || density < 0.0 {
            return Err(ModelError::InvalidLayer(format!(
                "density must be finite and >= 0, got {density}"
            )));
        }
        if !z1.is_finite() || z1 < 0.0 {
            return Err(ModelError::InvalidLayer(format!("z1 must be finite and >= 0, got {z1}")));
        }
        if z2.is_nan() || z2 <= z1 {
            return Err(ModelError::InvalidLayer(format!("need z2 > z1, got [{z1}, {z2}]")));
        }
        Ok(Self { species, density, z1, z2 })
    }

    /// Layer thickness, m. Infinite for semi-infinite layers.
    pub fn thickness(&self) -> f64 {
        self.z2 - self.z1
    }
}

/// An ordered set of layers above one sensor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleStack {
    pub layers: Vec<SampleLayer>,
}

impl SampleStack {
    /// Builds a stack, rejecting same-species layers that overlap in z.
    /// Different species may share a depth range (mixtures).
    pub fn new(layers: Vec<SampleLayer>) -> Result<Self, ModelError> {
        for (i, a) in layers.iter().enumerate() {
            for (j, b) in layers.iter().enumerate().skip(i + 1) {
                if a.species.name == b.species.name && a.z1 < b.z2 && b.z1 < a.z2 {
                    return Err(ModelError::OverlappingLayers(i, j, a.species.name.clone()));
                }
            }
        }
        Ok(Self { layers })
    }
}

/// Sensor (NV center) parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Depth below the diamond surface, m.
    pub depth: f64,
    /// Static field along the sensor axis, T.
    pub b0: f64,
}

impl SensorConfig {
    pub fn new(depth: f64, b0: f64) -> Result<Self, ModelError> {
        if !depth.is_finite() || depth <= 0.0 {
            return Err(ModelError::InvalidSensor(format!(
                "depth must be finite and > 0, got {depth}"
            )));
        }
        if !b0.is_finite() || b0 <= 0.0 {
            return Err(ModelError::InvalidSensor(format!("b0 must be finite and > 0, got {b0}")));
        }
        Ok(Self { depth, b0 })
    }
}
