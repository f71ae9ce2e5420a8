//! Device-independent randomness accounting and a Toeplitz-hash extractor.

use std::io::{Read, Write};

use bitvec::field::BitField;
use bitvec::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::{Count, CountsTable};
use crate::error::{invalid, Error, Result};
use crate::stats::{ch_from_counts, SinglesEstimator};

pub type Bits = BitVec<u8, Lsb0>;

/// Largest CH value quantum mechanics allows, `1/√2 − 1/2`.
pub const CH_QUANTUM_MAX: f64 = std::f64::consts::FRAC_1_SQRT_2 - 0.5;

/// Bound on an adversary's probability of guessing one outcome given a CH
/// value `b`: `(1 + √(2 − (1 + 2b)²))/2`. Non-positive `b` certifies nothing.
pub fn guessing_probability(b: f64) -> Result<f64> {
    if !b.is_finite() {
        return Err(invalid("B", "must be finite"));
    }
    if b <= 0.0 {
        return Ok(1.0);
    }
    let x = (1.0 + 2.0 * b).powi(2);
    if x > 2.0 + 1e-12 {
        return Err(invalid(
            "B",
            format!("{b} exceeds the quantum maximum {CH_QUANTUM_MAX}"),
        ));
    }
    Ok((1.0 + (2.0 - x).max(0.0).sqrt()) / 2.0)
}

/// Min-entropy per event in bits.
pub fn min_entropy(b: f64) -> Result<f64> {
    Ok(-guessing_probability(b)?.log2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionPolicy {
    /// Keep half the raw entropy, no seed.
    ShaHalf,
    /// Seed-efficient extractor sizing: loses `4·log₂(1/ε)`, seed `⌈(log₂ n)³⌉`.
    TrevisanSized,
    /// Leftover-hash sizing for [`hash_extract`]: loses `2·log₂(1/ε)`.
    HashExtract,
}

impl std::str::FromStr for ExtractionPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sha-half" => Ok(ExtractionPolicy::ShaHalf),
            "trevisan-sized" => Ok(ExtractionPolicy::TrevisanSized),
            "hash-extract" => Ok(ExtractionPolicy::HashExtract),
            _ => Err(invalid(
                "policy",
                format!("`{s}` is not sha-half, trevisan-sized or hash-extract"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extractable {
    pub extractable_bits: u64,
    pub seed_bits: u64,
    pub warning: Option<String>,
}

/// Output and seed length for a policy. `raw_string_bits` is the length of
/// the raw bit string being hashed.
pub fn extractable_length(
    raw_entropy_bits: f64,
    policy: ExtractionPolicy,
    epsilon: Option<f64>,
    raw_string_bits: Option<u64>,
) -> Result<Extractable> {
    if !(raw_entropy_bits.is_finite() && raw_entropy_bits >= 0.0) {
        return Err(invalid("raw_entropy_bits", "must be non-negative"));
    }
    let eps = || -> Result<f64> {
        let e = epsilon.ok_or_else(|| invalid("epsilon", "required for this policy"))?;
        if !(e > 0.0 && e < 1.0) {
            return Err(invalid("epsilon", format!("{e} is not in (0, 1)")));
        }
        Ok(e)
    };
    let raw_len =
        || raw_string_bits.ok_or_else(|| invalid("raw_string_bits", "required for this policy"));
    let (length, seed_bits) = match policy {
        ExtractionPolicy::ShaHalf => ((raw_entropy_bits / 2.0).floor(), 0u64),
        ExtractionPolicy::TrevisanSized => {
            let n = raw_len()?;
            let seed = if n <= 1 {
                0
            } else {
                (n as f64).log2().powi(3).ceil() as u64
            };
            (
                (raw_entropy_bits - 4.0 * (1.0 / eps()?).log2()).floor(),
                seed,
            )
        }
        ExtractionPolicy::HashExtract => {
            let n = raw_len()?;
            let out = (raw_entropy_bits - 2.0 * (1.0 / eps()?).log2()).floor();
            let seed = if out > 0.0 { n + out as u64 - 1 } else { 0 };
            (out, seed)
        }
    };
    if length < 0.0 {
        return Ok(Extractable {
            extractable_bits: 0,
            seed_bits,
            warning: Some(format!(
                "entropy {raw_entropy_bits:.1} bits is below the extraction overhead; nothing extractable"
            )),
        });
    }
    Ok(Extractable {
        extractable_bits: length as u64,
        seed_bits,
        warning: None,
    })
}

/// Seed bits needed to hash `raw_len` bits to `out_len` bits.
pub fn toeplitz_seed_len(raw_len: usize, out_len: usize) -> usize {
    if out_len == 0 {
        0
    } else {
        raw_len + out_len - 1
    }
}

/// Toeplitz hashing over GF(2): output bit `i` is the parity of
/// `raw[j] & seed[i − j + n − 1]` over `j`, with `n = raw.len()`.
pub fn hash_extract(
    raw: &BitSlice<u8, Lsb0>,
    seed: &BitSlice<u8, Lsb0>,
    out_len: usize,
) -> Result<Bits> {
    let n = raw.len();
    if out_len > n {
        return Err(invalid(
            "out_len",
            format!("{out_len} output bits exceed the {n} raw bits"),
        ));
    }
    let need = toeplitz_seed_len(n, out_len);
    if seed.len() < need {
        return Err(invalid(
            "seed",
            format!("{} seed bits supplied, {need} required", seed.len()),
        ));
    }
    if out_len == 0 {
        return Ok(Bits::new());
    }
    // raw reversed, so output i is the parity of rev & seed[i..i+n]
    let mut rev: Bits = raw.to_bitvec();
    rev.reverse();
    let rev_words: Vec<u64> = rev.chunks(64).map(|c| c.load_le::<u64>()).collect();
    let out: Vec<bool> = (0..out_len)
        .into_par_iter()
        .map(|i| {
            let window = &seed[i..i + n];
            let ones: u32 = window
                .chunks(64)
                .zip(&rev_words)
                .map(|(c, w)| (c.load_le::<u64>() & w).count_ones())
                .sum();
            ones % 2 == 1
        })
        .collect();
    Ok(out.into_iter().collect())
}

/// [`hash_extract`] with the output length checked against the leftover-hash
/// bound for `entropy_bits` of min-entropy at security `epsilon`.
pub fn hash_extract_checked(
    raw: &BitSlice<u8, Lsb0>,
    seed: &BitSlice<u8, Lsb0>,
    out_len: usize,
    entropy_bits: f64,
    epsilon: f64,
) -> Result<Bits> {
    let bound = extractable_length(
        entropy_bits,
        ExtractionPolicy::HashExtract,
        Some(epsilon),
        Some(raw.len() as u64),
    )?
    .extractable_bits;
    if out_len as u64 > bound {
        return Err(invalid(
            "out_len",
            format!("{out_len} exceeds the leftover-hash bound of {bound} bits"),
        ));
    }
    hash_extract(raw, seed, out_len)
}

pub const BITS_MAGIC: &[u8; 8] = b"CHBELLX1";

/// Writes a 16-byte header (magic, little-endian u64 bit count) then the packed bits.
pub fn write_bits<W: Write>(mut w: W, bits: &BitSlice<u8, Lsb0>) -> Result<()> {
    w.write_all(BITS_MAGIC)?;
    w.write_all(&(bits.len() as u64).to_le_bytes())?;
    let mut packed = Bits::with_capacity(bits.len());
    packed.extend_from_bitslice(bits);
    w.write_all(packed.as_raw_slice())?;
    Ok(())
}

pub fn read_bits<R: Read>(mut r: R) -> Result<Bits> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..8] != BITS_MAGIC {
        return Err(Error::Malformed {
            position: "byte 0".into(),
            reason: "bad magic".into(),
        });
    }
    let len = u64::from_le_bytes(header[8..].try_into().expect("8 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != len.div_ceil(8) {
        return Err(Error::Malformed {
            position: "byte 16".into(),
            reason: format!(
                "expected {} payload bytes, found {}",
                len.div_ceil(8),
                body.len()
            ),
        });
    }
    let mut bits = Bits::from_vec(body);
    bits.truncate(len);
    Ok(bits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DireReport {
    #[serde(rename = "B")]
    pub b: f64,
    pub p_guess: f64,
    pub h_min: f64,
    pub n_events: u64,
    pub raw_entropy_bits: f64,
    pub raw_string_bits: u64,
    pub policy: ExtractionPolicy,
    pub epsilon: Option<f64>,
    pub extractable_bits: u64,
    pub seed_bits: u64,
    pub acquisition_s: f64,
    pub rate_bits_per_s: f64,
    pub caveat: String,
    pub warnings: Vec<String>,
}

pub const DEFAULT_BITS_PER_EVENT: u64 = 8;

/// CH value → min-entropy → extractable length → rate, for a table of counts.
pub fn dire_report<T: Count>(
    table: &CountsTable<T>,
    acquisition_s: f64,
    policy: ExtractionPolicy,
    epsilon: Option<f64>,
    bits_per_event: u64,
) -> Result<DireReport> {
    if !(acquisition_s.is_finite() && acquisition_s > 0.0) {
        return Err(invalid("acquisition_s", "must be positive"));
    }
    let b = ch_from_counts(table, SinglesEstimator::Pooled)?;
    let p_guess = guessing_probability(b)?;
    let h_min = -p_guess.log2();
    let n_events = table.total_trials().to_f64().round() as u64;
    let raw_entropy_bits = n_events as f64 * h_min;
    let raw_string_bits = n_events
        .checked_mul(bits_per_event)
        .ok_or(Error::Overflow)?;
    let ext = extractable_length(raw_entropy_bits, policy, epsilon, Some(raw_string_bits))?;
    Ok(DireReport {
        b,
        p_guess,
        h_min,
        n_events,
        raw_entropy_bits,
        raw_string_bits,
        policy,
        epsilon,
        extractable_bits: ext.extractable_bits,
        seed_bits: ext.seed_bits,
        acquisition_s,
        rate_bits_per_s: ext.extractable_bits as f64 / acquisition_s,
        caveat: "finite-size effects are neglected".into(),
        warnings: ext.warning.into_iter().collect(),
    })
}
