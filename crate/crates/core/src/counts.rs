//! Per-setting-pair trial, singles and coincidence counts.

use std::fmt::Debug;
use std::ops::{Add, Mul};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::settings::SettingPair;

/// Scalar usable as a count: exact integers or expected (fractional) counts.
pub trait Count:
    Copy + Default + PartialEq + Debug + Add<Output = Self> + Serialize + DeserializeOwned
{
    fn to_f64(self) -> f64;
    fn checked_add(self, other: Self) -> Result<Self>;
}

impl Count for u64 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn checked_add(self, other: Self) -> Result<Self> {
        u64::checked_add(self, other).ok_or(Error::Overflow)
    }
}

impl Count for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn checked_add(self, other: Self) -> Result<Self> {
        Ok(self + other)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Count")]
pub struct CountsRow<T: Count = u64> {
    pub n_trials: T,
    pub singles_a: T,
    pub singles_b: T,
    pub coincidences: T,
}

impl<T: Count> CountsRow<T> {
    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        Ok(CountsRow {
            n_trials: self.n_trials.checked_add(other.n_trials)?,
            singles_a: self.singles_a.checked_add(other.singles_a)?,
            singles_b: self.singles_b.checked_add(other.singles_b)?,
            coincidences: self.coincidences.checked_add(other.coincidences)?,
        })
    }

    pub fn to_f64(&self) -> CountsRow<f64> {
        CountsRow {
            n_trials: self.n_trials.to_f64(),
            singles_a: self.singles_a.to_f64(),
            singles_b: self.singles_b.to_f64(),
            coincidences: self.coincidences.to_f64(),
        }
    }
}

impl CountsRow<f64> {
    /// Expected counts for `n_trials` trials with the given per-trial rates.
    pub fn expected(n_trials: f64, singles_a: f64, singles_b: f64, coincidence: f64) -> Self {
        CountsRow {
            n_trials,
            singles_a: n_trials * singles_a,
            singles_b: n_trials * singles_b,
            coincidences: n_trials * coincidence,
        }
    }
}

impl Mul<f64> for CountsRow<f64> {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        CountsRow {
            n_trials: self.n_trials * k,
            singles_a: self.singles_a * k,
            singles_b: self.singles_b * k,
            coincidences: self.coincidences * k,
        }
    }
}

/// Four rows indexed by [`SettingPair`]. JSON form is an object keyed
/// `"ab"`, `"ab'"`, `"a'b"`, `"a'b'"`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Count", from = "TableRepr<T>", into = "TableRepr<T>")]
pub struct CountsTable<T: Count = u64> {
    pub rows: [CountsRow<T>; 4],
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "T: Count", deny_unknown_fields)]
struct TableRepr<T: Count> {
    ab: CountsRow<T>,
    #[serde(rename = "ab'")]
    ab_prime: CountsRow<T>,
    #[serde(rename = "a'b")]
    a_prime_b: CountsRow<T>,
    #[serde(rename = "a'b'")]
    a_prime_b_prime: CountsRow<T>,
}

impl<T: Count> From<TableRepr<T>> for CountsTable<T> {
    fn from(r: TableRepr<T>) -> Self {
        CountsTable {
            rows: [r.ab, r.ab_prime, r.a_prime_b, r.a_prime_b_prime],
        }
    }
}

impl<T: Count> From<CountsTable<T>> for TableRepr<T> {
    fn from(t: CountsTable<T>) -> Self {
        let [ab, ab_prime, a_prime_b, a_prime_b_prime] = t.rows;
        TableRepr {
            ab,
            ab_prime,
            a_prime_b,
            a_prime_b_prime,
        }
    }
}

impl<T: Count> CountsTable<T> {
    pub fn row(&self, pair: SettingPair) -> &CountsRow<T> {
        &self.rows[pair.index()]
    }

    pub fn row_mut(&mut self, pair: SettingPair) -> &mut CountsRow<T> {
        &mut self.rows[pair.index()]
    }

    pub fn checked_add(&self, other: &Self) -> Result<Self> {
        let mut out = *self;
        for (o, r) in out.rows.iter_mut().zip(other.rows.iter()) {
            *o = o.checked_add(r)?;
        }
        Ok(out)
    }

    pub fn total_trials(&self) -> T {
        self.rows
            .iter()
            .fold(T::default(), |acc, r| acc + r.n_trials)
    }

    pub fn to_f64(&self) -> CountsTable<f64> {
        CountsTable {
            rows: self.rows.map(|r| r.to_f64()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl CountsTable<u64> {
    /// Accumulated loophole-free data set: 111,259,682 trials at r = 0.26.
    pub fn table1() -> Self {
        let row = |singles_a, coincidences, singles_b, n_trials| CountsRow {
            n_trials,
            singles_a,
            singles_b,
            coincidences,
        };
        CountsTable {
            rows: [
                row(46_068, 29_173, 46_039, 27_153_020),
                row(48_076, 34_145, 146_205, 28_352_350),
                row(150_840, 34_473, 47_447, 27_827_318),
                row(150_505, 1_862, 144_070, 27_926_994),
            ],
        }
    }

    pub fn from_blocks(blocks: &[BlockRecord]) -> Result<Self> {
        let mut t = CountsTable::default();
        for b in blocks {
            b.validate()?;
            let row = t.row_mut(b.setting_pair);
            *row = row.checked_add(&b.counts())?;
        }
        Ok(t)
    }
}

/// Counts from one block of trials measured under a single setting pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub setting_pair: SettingPair,
    pub n_trials: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    pub coincidences: u64,
}

pub const BLOCK_CSV_HEADER: &str = "setting_index,n_trials,singles_a,singles_b,coincidences";

impl BlockRecord {
    pub fn counts(&self) -> CountsRow<u64> {
        CountsRow {
            n_trials: self.n_trials,
            singles_a: self.singles_a,
            singles_b: self.singles_b,
            coincidences: self.coincidences,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let max = self.singles_a.max(self.singles_b).max(self.coincidences);
        if max > self.n_trials {
            return Err(crate::error::invalid(
                "block",
                format!(
                    "a per-trial count ({max}) exceeds n_trials ({})",
                    self.n_trials
                ),
            ));
        }
        Ok(())
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.setting_pair.index(),
            self.n_trials,
            self.singles_a,
            self.singles_b,
            self.coincidences
        )
    }
}

pub fn blocks_to_csv(blocks: &[BlockRecord]) -> String {
    let mut out = String::with_capacity(32 * (blocks.len() + 1));
    out.push_str(BLOCK_CSV_HEADER);
    out.push('\n');
    for b in blocks {
        out.push_str(&b.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parses block CSV; the header line is optional, blank lines are skipped.
pub fn parse_blocks_csv(text: &str) -> Result<Vec<BlockRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == BLOCK_CSV_HEADER) {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            position: format!("line {}", lineno + 1),
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(malformed(format!(
                "expected 5 fields, found {}",
                fields.len()
            )));
        }
        let mut v = [0u64; 5];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|e| malformed(format!("field `{f}`: {e}")))?;
        }
        let setting_pair = SettingPair::from_index(v[0] as usize)
            .map_err(|_| malformed(format!("setting index {} out of range", v[0])))?;
        let rec = BlockRecord {
            setting_pair,
            n_trials: v[1],
            singles_a: v[2],
            singles_b: v[3],
            coincidences: v[4],
        };
        rec.validate().map_err(|e| malformed(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}
