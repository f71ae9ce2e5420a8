//! Analyzer settings and the four setting pairs of a CH/CHSH test.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{invalid, Result};

/// One of the four local-setting combinations. The discriminant is the
/// index used in settings files and block records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum SettingPair {
    AB = 0,
    ABPrime = 1,
    APrimeB = 2,
    APrimeBPrime = 3,
}

impl SettingPair {
    pub const ALL: [SettingPair; 4] = [
        SettingPair::AB,
        SettingPair::ABPrime,
        SettingPair::APrimeB,
        SettingPair::APrimeBPrime,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| invalid("setting_index", format!("{index} is not in 0..=3")))
    }

    /// `false` for a, `true` for a′.
    pub fn alice_primed(self) -> bool {
        matches!(self, SettingPair::APrimeB | SettingPair::APrimeBPrime)
    }

    /// `false` for b, `true` for b′.
    pub fn bob_primed(self) -> bool {
        matches!(self, SettingPair::ABPrime | SettingPair::APrimeBPrime)
    }

    pub fn from_primes(alice_primed: bool, bob_primed: bool) -> Self {
        match (alice_primed, bob_primed) {
            (false, false) => SettingPair::AB,
            (false, true) => SettingPair::ABPrime,
            (true, false) => SettingPair::APrimeB,
            (true, true) => SettingPair::APrimeBPrime,
        }
    }

    /// Sign of this pair's coincidence term in the CH and CHSH combinations.
    pub fn sign(self) -> f64 {
        if self == SettingPair::APrimeBPrime {
            -1.0
        } else {
            1.0
        }
    }

    /// Key used in counts-table JSON.
    pub fn key(self) -> &'static str {
        match self {
            SettingPair::AB => "ab",
            SettingPair::ABPrime => "ab'",
            SettingPair::APrimeB => "a'b",
            SettingPair::APrimeBPrime => "a'b'",
        }
    }
}

impl fmt::Display for SettingPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl From<SettingPair> for u8 {
    fn from(p: SettingPair) -> u8 {
        p as u8
    }
}

impl TryFrom<u8> for SettingPair {
    type Error = crate::Error;
    fn try_from(v: u8) -> Result<Self> {
        SettingPair::from_index(v as usize)
    }
}

/// Analyzer transmission-axis angles in degrees from horizontal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl MeasurementSettings {
    pub fn new(a: f64, a_prime: f64, b: f64, b_prime: f64) -> Result<Self> {
        let s = MeasurementSettings {
            a,
            a_prime,
            b,
            b_prime,
        };
        s.validate()?;
        Ok(s)
    }

    /// Settings used for the accumulated loophole-free data set (r = 0.26).
    pub fn table1() -> Self {
        MeasurementSettings {
            a: 3.8,
            a_prime: -25.2,
            b: -3.8,
            b_prime: 25.2,
        }
    }

    /// CHSH-optimal angles for the maximally entangled state.
    pub fn chsh_optimal() -> Self {
        MeasurementSettings {
            a: -11.25,
            a_prime: 33.75,
            b: 11.25,
            b_prime: -33.75,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("a_prime", self.a_prime),
            ("b", self.b),
            ("b_prime", self.b_prime),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, "angle must be finite"));
            }
        }
        Ok(())
    }

    /// (Alice angle, Bob angle) for a setting pair.
    pub fn angles(&self, pair: SettingPair) -> (f64, f64) {
        let alice = if pair.alice_primed() {
            self.a_prime
        } else {
            self.a
        };
        let bob = if pair.bob_primed() {
            self.b_prime
        } else {
            self.b
        };
        (alice, bob)
    }

    /// Same analyzer axes with every angle folded into (-90°, 90°].
    pub fn canonical(&self) -> Self {
        MeasurementSettings {
            a: canonical_angle(self.a),
            a_prime: canonical_angle(self.a_prime),
            b: canonical_angle(self.b),
            b_prime: canonical_angle(self.b_prime),
        }
    }

    /// Simultaneous reflection of all four axes about horizontal.
    pub fn reflected(&self) -> Self {
        MeasurementSettings {
            a: -self.a,
            a_prime: -self.a_prime,
            b: -self.b,
            b_prime: -self.b_prime,
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.a, self.a_prime, self.b, self.b_prime]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        MeasurementSettings {
            a: x[0],
            a_prime: x[1],
            b: x[2],
            b_prime: x[3],
        }
    }
}

/// Polarizer axes are 180° periodic; fold into (-90, 90].
pub fn canonical_angle(deg: f64) -> f64 {
    if deg > -90.0 && deg <= 90.0 {
        return deg;
    }
    let mut x = deg.rem_euclid(180.0);
    if x > 90.0 {
        x -= 180.0;
    }
    x
}
