//! Turning timetag streams into per-setting counts.
//!
//! Clock windowing assigns every detection to the trial opened by the most
//! recent clock marker. Event windowing pairs detections that fall within a
//! window of each other, which lets a timed local source choose which
//! setting pairs show coincidences.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::str::FromStr;

use crate::counts::CountsTable;
use crate::error::{invalid, Error, Result};
use crate::settings::SettingPair;
use crate::timetag::{Channel, TimetagStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WindowPolicy {
    Clock,
    Event { window_ns: f64 },
}

impl FromStr for WindowPolicy {
    type Err = Error;
    /// `clock` or `event:<ns>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clock" => Ok(WindowPolicy::Clock),
            other => {
                let ns = other.strip_prefix("event:").ok_or_else(|| {
                    invalid("window", format!("`{s}` is not `clock` or `event:NS`"))
                })?;
                let window_ns: f64 = ns
                    .parse()
                    .map_err(|_| invalid("window", format!("bad window length `{ns}`")))?;
                if !(window_ns.is_finite() && window_ns > 0.0) {
                    return Err(invalid("window", "window_ns must be positive"));
                }
                Ok(WindowPolicy::Event { window_ns })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowDiagnostics {
    pub n_trials: usize,
    /// Detections preceding the first clock marker; excluded from counts.
    pub before_first_marker: usize,
    pub alice_detections: usize,
    pub bob_detections: usize,
}

/// Sound counting: per trial, an arm clicks if it has any detection, and a
/// coincidence is both arms clicking. `schedule[i]` is the setting pair of trial `i`.
pub fn clock_windowed_counts(
    stream: &TimetagStream,
    schedule: &[SettingPair],
) -> Result<(CountsTable, WindowDiagnostics)> {
    let mut table = CountsTable::default();
    let mut diag = WindowDiagnostics::default();
    let mut current: Option<(SettingPair, bool, bool)> = None;

    let close = |table: &mut CountsTable, trial: Option<(SettingPair, bool, bool)>| {
        if let Some((pair, a, b)) = trial {
            let row = table.row_mut(pair);
            row.n_trials += 1;
            row.singles_a += a as u64;
            row.singles_b += b as u64;
            row.coincidences += (a && b) as u64;
        }
    };

    for rec in &stream.records {
        match rec.channel {
            Channel::Clock => {
                close(&mut table, current.take());
                let pair = *schedule
                    .get(diag.n_trials)
                    .ok_or(Error::MissingSchedule(diag.n_trials))?;
                current = Some((pair, false, false));
                diag.n_trials += 1;
            }
            ch => match current.as_mut() {
                None => diag.before_first_marker += 1,
                Some((_, a, b)) => {
                    if ch == Channel::Alice {
                        *a = true;
                        diag.alice_detections += 1;
                    } else {
                        *b = true;
                        diag.bob_detections += 1;
                    }
                }
            },
        }
    }
    close(&mut table, current);
    Ok((table, diag))
}

/// Detection-relative counting with greedy earliest-first one-to-one pairing:
/// each detection pairs with the oldest unpaired detection on the other arm
/// no more than `window_ns` earlier. Singles count every detection; a
/// coincidence is booked to the trial of its earlier detection.
pub fn event_windowed_counts(
    stream: &TimetagStream,
    window_ns: f64,
    schedule: &[SettingPair],
) -> Result<(CountsTable, WindowDiagnostics)> {
    if !(window_ns.is_finite() && window_ns > 0.0) {
        return Err(invalid("window_ns", "must be positive"));
    }
    if let Some(period) = stream.inferred_trial_period() {
        if window_ns >= period / 2.0 {
            return Err(invalid(
                "window_ns",
                format!("{window_ns} ns is not below half the trial period ({period} ns)"),
            ));
        }
    }

    let mut table = CountsTable::default();
    let mut diag = WindowDiagnostics::default();
    let mut trial: Option<usize> = None;
    // unpaired detections: (timestamp, trial index)
    let mut pending: [VecDeque<(u64, usize)>; 2] = [VecDeque::new(), VecDeque::new()];

    let pair_of = |i: usize| schedule.get(i).copied().ok_or(Error::MissingSchedule(i));

    for rec in &stream.records {
        let side = match rec.channel {
            Channel::Clock => {
                let i = diag.n_trials;
                table.row_mut(pair_of(i)?).n_trials += 1;
                trial = Some(i);
                diag.n_trials += 1;
                continue;
            }
            Channel::Alice => 0,
            Channel::Bob => 1,
        };
        let Some(i) = trial else {
            diag.before_first_marker += 1;
            continue;
        };
        let pair = pair_of(i)?;
        if side == 0 {
            table.row_mut(pair).singles_a += 1;
            diag.alice_detections += 1;
        } else {
            table.row_mut(pair).singles_b += 1;
            diag.bob_detections += 1;
        }
        let other = &mut pending[1 - side];
        while let Some(&(t, _)) = other.front() {
            if (rec.timestamp_ns - t) as f64 > window_ns {
                other.pop_front();
            } else {
                break;
            }
        }
        match other.pop_front() {
            Some((_, earlier_trial)) => {
                table.row_mut(pair_of(earlier_trial)?).coincidences += 1;
            }
            None => pending[side].push_back((rec.timestamp_ns, i)),
        }
    }
    Ok((table, diag))
}

pub fn windowed_counts(
    stream: &TimetagStream,
    policy: WindowPolicy,
    schedule: &[SettingPair],
) -> Result<(CountsTable, WindowDiagnostics)> {
    match policy {
        WindowPolicy::Clock => clock_windowed_counts(stream, schedule),
        WindowPolicy::Event { window_ns } => event_windowed_counts(stream, window_ns, schedule),
    }
}
