//! Time-tagged detection streams and their CSV / binary encodings.
//!
//! CSV: one `channel,timestamp_ns` record per line.
//! Binary: repeated 9-byte records, little-endian `u64` timestamp then a channel byte.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Alice = 0,
    Bob = 1,
    Clock = 2,
}

impl Channel {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Alice),
            1 => Some(Channel::Bob),
            2 => Some(Channel::Clock),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimetagRecord {
    pub timestamp_ns: u64,
    pub channel: Channel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimetagFormat {
    Csv,
    Binary,
}

/// Ordered detection and trial-clock records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimetagStream {
    /// Trial period when known from the producer; not stored in either file format.
    pub trial_period_ns: Option<f64>,
    pub records: Vec<TimetagRecord>,
}

pub const BINARY_RECORD_LEN: usize = 9;

impl TimetagStream {
    pub fn new(records: Vec<TimetagRecord>) -> Result<Self> {
        check_monotonic(&records)?;
        Ok(TimetagStream {
            trial_period_ns: None,
            records,
        })
    }

    pub fn with_trial_period(mut self, period_ns: f64) -> Self {
        self.trial_period_ns = Some(period_ns);
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.records.iter().filter(|r| r.channel == channel).count()
    }

    /// Trial period taken from the header, else the median spacing of clock markers.
    pub fn inferred_trial_period(&self) -> Option<f64> {
        if self.trial_period_ns.is_some() {
            return self.trial_period_ns;
        }
        let clocks: Vec<u64> = self
            .records
            .iter()
            .filter(|r| r.channel == Channel::Clock)
            .map(|r| r.timestamp_ns)
            .collect();
        let mut gaps: Vec<u64> = clocks.windows(2).map(|w| w[1] - w[0]).collect();
        if gaps.is_empty() {
            return None;
        }
        gaps.sort_unstable();
        Some(gaps[gaps.len() / 2] as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 12);
        for r in &self.records {
            let _ = writeln!(out, "{},{}", r.channel.code(), r.timestamp_ns);
        }
        out
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * BINARY_RECORD_LEN);
        for r in &self.records {
            out.extend_from_slice(&r.timestamp_ns.to_le_bytes());
            out.push(r.channel.code());
        }
        out
    }

    pub fn encode(&self, format: TimetagFormat) -> Vec<u8> {
        match format {
            TimetagFormat::Csv => self.to_csv().into_bytes(),
            TimetagFormat::Binary => self.to_binary(),
        }
    }
}

fn check_monotonic(records: &[TimetagRecord]) -> Result<()> {
    for (i, w) in records.windows(2).enumerate() {
        if w[1].timestamp_ns < w[0].timestamp_ns {
            return Err(Error::TimestampRegression {
                index: i + 1,
                previous: w[0].timestamp_ns,
                current: w[1].timestamp_ns,
            });
        }
    }
    Ok(())
}

pub fn parse_timetags(input: &[u8], format: TimetagFormat) -> Result<TimetagStream> {
    let records = match format {
        TimetagFormat::Csv => parse_csv(input)?,
        TimetagFormat::Binary => parse_binary(input)?,
    };
    TimetagStream::new(records)
}

fn parse_csv(input: &[u8]) -> Result<Vec<TimetagRecord>> {
    let text = std::str::from_utf8(input).map_err(|e| Error::Malformed {
        position: format!("byte {}", e.valid_up_to()),
        reason: "input is not UTF-8".into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::Malformed {
            position: format!("line {}", i + 1),
            reason,
        };
        let (ch, ts) = line
            .split_once(',')
            .ok_or_else(|| malformed("expected `channel,timestamp_ns`".into()))?;
        let code: u8 = ch
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad channel `{ch}`")))?;
        let channel =
            Channel::from_code(code).ok_or_else(|| malformed(format!("unknown channel {code}")))?;
        let timestamp_ns = ts
            .trim()
            .parse()
            .map_err(|_| malformed(format!("bad timestamp `{ts}`")))?;
        out.push(TimetagRecord {
            timestamp_ns,
            channel,
        });
    }
    Ok(out)
}

fn parse_binary(input: &[u8]) -> Result<Vec<TimetagRecord>> {
    if !input.len().is_multiple_of(BINARY_RECORD_LEN) {
        return Err(Error::Malformed {
            position: format!("record {}", input.len() / BINARY_RECORD_LEN),
            reason: format!(
                "truncated record ({} trailing bytes)",
                input.len() % BINARY_RECORD_LEN
            ),
        });
    }
    input
        .chunks_exact(BINARY_RECORD_LEN)
        .enumerate()
        .map(|(i, rec)| {
            let timestamp_ns = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
            let channel = Channel::from_code(rec[8]).ok_or_else(|| Error::Malformed {
                position: format!("record {i}"),
                reason: format!("unknown channel {}", rec[8]),
            })?;
            Ok(TimetagRecord {
                timestamp_ns,
                channel,
            })
        })
        .collect()
}
