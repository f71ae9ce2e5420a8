//! Local-realistic adversaries: instruction-set strategies, a timed emitter
//! that exploits detection-relative coincidence windows, and source-intensity
//! drift under a fixed cyclic setting order.

use serde::{Deserialize, Serialize};

use crate::counts::{CountsRow, CountsTable};
use crate::error::{invalid, Error, Result};
use crate::quantum::{
    pair_detection, trial_probabilities_from_pair, Arm, DetectionModel, ForwardModel,
    PolarizationState,
};
use crate::settings::{MeasurementSettings, SettingPair};
use crate::timetag::{Channel, TimetagRecord, TimetagStream};

/// Pair class: `fires_a[i]` says whether Alice's photon is detected under
/// setting `i` (0 = unprimed, 1 = primed); likewise for Bob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LhvClass {
    pub weight: u64,
    pub fires_a: [bool; 2],
    pub fires_b: [bool; 2],
}

impl LhvClass {
    pub fn new(weight: u64, fires_a: [bool; 2], fires_b: [bool; 2]) -> Self {
        LhvClass {
            weight,
            fires_a,
            fires_b,
        }
    }

    pub fn fires(&self, pair: SettingPair) -> (bool, bool) {
        (
            self.fires_a[pair.alice_primed() as usize],
            self.fires_b[pair.bob_primed() as usize],
        )
    }
}

/// Weighted instruction-set table. Weights are pair counts per setting combination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LhvClass>", into = "Vec<LhvClass>")]
pub struct LhvStrategy {
    classes: Vec<LhvClass>,
}

impl TryFrom<Vec<LhvClass>> for LhvStrategy {
    type Error = Error;
    fn try_from(classes: Vec<LhvClass>) -> Result<Self> {
        LhvStrategy::new(classes)
    }
}

impl From<LhvStrategy> for Vec<LhvClass> {
    fn from(s: LhvStrategy) -> Self {
        s.classes
    }
}

const A: [bool; 2] = [true, false];
const A_PRIME: [bool; 2] = [false, true];
const BOTH: [bool; 2] = [true, true];
const NONE: [bool; 2] = [false, false];

impl LhvStrategy {
    pub fn new(classes: Vec<LhvClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(invalid("classes", "strategy needs at least one class"));
        }
        Ok(LhvStrategy { classes })
    }

    pub fn classes(&self) -> &[LhvClass] {
        &self.classes
    }

    pub fn total_weight(&self) -> Result<u64> {
        self.classes
            .iter()
            .try_fold(0u64, |acc, c| acc.checked_add(c.weight))
            .ok_or(Error::Overflow)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Best local model for ideal detectors mimicking the maximally entangled
    /// state at CHSH-optimal angles (4000 pairs per combination).
    pub fn ideal_detector_table() -> Self {
        LhvStrategy {
            classes: vec![
                LhvClass::new(73, BOTH, BOTH),
                LhvClass::new(177, BOTH, A),
                LhvClass::new(177, A, BOTH),
                LhvClass::new(177, A, A_PRIME),
                LhvClass::new(177, A_PRIME, A),
                LhvClass::new(73, A_PRIME, NONE),
                LhvClass::new(73, NONE, A_PRIME),
            ],
        }
    }

    /// Local model reproducing the quantum counts exactly at 82% efficiency.
    pub fn efficiency_82_table() -> Self {
        LhvStrategy {
            classes: vec![
                LhvClass::new(49, BOTH, BOTH),
                LhvClass::new(119, BOTH, A),
                LhvClass::new(119, A, BOTH),
                LhvClass::new(119, A, A_PRIME),
                LhvClass::new(119, A_PRIME, A),
                LhvClass::new(123, A_PRIME, NONE),
                LhvClass::new(123, NONE, A_PRIME),
                LhvClass::new(4, A, NONE),
                LhvClass::new(4, NONE, A),
            ],
        }
    }

    /// Per-pair detection probabilities `(P(A), P(B), P(A∧B))` under one
    /// setting pair, treating weights as class frequencies.
    pub fn pair_detection(&self, pair: SettingPair) -> Result<(f64, f64, f64)> {
        let total = self.total_weight()?;
        if total == 0 {
            return Err(invalid("classes", "total weight is zero"));
        }
        let (mut qa, mut qb, mut qab) = (0.0, 0.0, 0.0);
        for c in &self.classes {
            let w = c.weight as f64 / total as f64;
            let (fa, fb) = c.fires(pair);
            qa += w * fa as u8 as f64;
            qb += w * fb as u8 as f64;
            qab += w * (fa && fb) as u8 as f64;
        }
        Ok((qa, qb, qab))
    }
}

/// Exact counts when every combination receives `trials_per_combo` pairs,
/// `weight` of which belong to each class.
pub fn counts_from_strategy(strategy: &LhvStrategy, trials_per_combo: u64) -> Result<CountsTable> {
    if trials_per_combo == 0 {
        return Err(invalid("trials_per_combo", "must be at least 1"));
    }
    let total = strategy.total_weight()?;
    if total > trials_per_combo {
        return Err(invalid(
            "trials_per_combo",
            format!("class weights sum to {total}, more than {trials_per_combo} trials"),
        ));
    }
    let mut table = CountsTable::default();
    for pair in SettingPair::ALL {
        let mut row = CountsRow {
            n_trials: trials_per_combo,
            ..Default::default()
        };
        for c in strategy.classes() {
            let (fa, fb) = c.fires(pair);
            // bounded by `total`, so no overflow
            row.singles_a += c.weight * fa as u64;
            row.singles_b += c.weight * fb as u64;
            row.coincidences += c.weight * (fa && fb) as u64;
        }
        *table.row_mut(pair) = row;
    }
    Ok(table)
}

/// All 16 deterministic one-detector-per-arm strategies.
pub fn deterministic_strategies() -> impl Iterator<Item = ([bool; 2], [bool; 2])> {
    (0u8..16).map(|m| ([m & 1 != 0, m & 2 != 0], [m & 4 != 0, m & 8 != 0]))
}

fn deterministic_terms(fa: [bool; 2], fb: [bool; 2]) -> (f64, f64) {
    let c = |i: usize, j: usize| (fa[i] && fb[j]) as u8 as f64;
    let coinc = c(0, 0) + c(0, 1) + c(1, 0) - c(1, 1);
    let singles = fa[0] as u8 as f64 + fb[0] as u8 as f64;
    (coinc, singles)
}

/// Maximum CH value over deterministic strategies; the local bound, 0.
pub fn max_deterministic_ch() -> f64 {
    deterministic_strategies()
        .map(|(fa, fb)| {
            let (c, s) = deterministic_terms(fa, fb);
            c - s
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum of the ratio form over deterministic strategies with a nonzero
/// singles denominator; the local bound, 1.
pub fn max_deterministic_ch_ratio() -> f64 {
    deterministic_strategies()
        .filter_map(|(fa, fb)| {
            let (c, s) = deterministic_terms(fa, fb);
            (s > 0.0).then(|| c / s)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One emission of the timed source: at `offset`·T into the trial, a photon
/// goes to `target` and is detected only under the flagged local settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEmission {
    pub offset: f64,
    pub target: Arm,
    pub fires_under: [bool; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedEmissionSchedule {
    pub emissions: Vec<TimedEmission>,
    /// Trial period in units of T.
    pub period_multiple: f64,
}

impl Default for TimedEmissionSchedule {
    /// Four emissions at T, 2T, 3T, 4T chosen so that every setting pair except
    /// (a′, b′) produces detections one T apart, and (a′, b′) three T apart.
    fn default() -> Self {
        let e = |offset, target, fires_under| TimedEmission {
            offset,
            target,
            fires_under,
        };
        TimedEmissionSchedule {
            emissions: vec![
                e(1.0, Arm::A, A_PRIME),
                e(2.0, Arm::B, A),
                e(3.0, Arm::A, A),
                e(4.0, Arm::B, A_PRIME),
            ],
            period_multiple: 10.0,
        }
    }
}

impl TimedEmissionSchedule {
    pub fn empty() -> Self {
        TimedEmissionSchedule {
            emissions: Vec::new(),
            period_multiple: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period_multiple.is_finite() && self.period_multiple > 0.0) {
            return Err(invalid("period_multiple", "must be positive"));
        }
        for (i, e) in self.emissions.iter().enumerate() {
            if !(e.offset.is_finite() && e.offset >= 0.0) {
                return Err(invalid(
                    "emissions",
                    format!("offset {i} must be non-negative"),
                ));
            }
            if e.offset >= self.period_multiple {
                return Err(invalid(
                    "emissions",
                    format!(
                        "offset {} exceeds the trial period of {} T",
                        e.offset, self.period_multiple
                    ),
                ));
            }
            if i > 0 && e.offset <= self.emissions[i - 1].offset {
                return Err(invalid("emissions", "offsets must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Detection stream produced by the timed emitter with one clock marker per trial.
pub fn coincidence_time_stream(
    schedule: &TimedEmissionSchedule,
    settings_per_trial: &[SettingPair],
    t_ns: f64,
    n_trials: usize,
) -> Result<TimetagStream> {
    if !(t_ns.is_finite() && t_ns > 0.0) {
        return Err(invalid("T_ns", "must be positive"));
    }
    schedule.validate()?;
    if settings_per_trial.len() < n_trials {
        return Err(Error::MissingSchedule(settings_per_trial.len()));
    }
    let period = schedule.period_multiple * t_ns;
    let mut records = Vec::with_capacity(n_trials * (1 + schedule.emissions.len() / 2));
    for (k, &pair) in settings_per_trial[..n_trials].iter().enumerate() {
        let start = (k as f64 * period).round() as u64;
        records.push(TimetagRecord {
            timestamp_ns: start,
            channel: Channel::Clock,
        });
        for e in &schedule.emissions {
            let (primed, channel) = match e.target {
                Arm::A => (pair.alice_primed(), Channel::Alice),
                Arm::B => (pair.bob_primed(), Channel::Bob),
            };
            if e.fires_under[primed as usize] {
                records.push(TimetagRecord {
                    timestamp_ns: start + (e.offset * t_ns).round() as u64,
                    channel,
                });
            }
        }
    }
    Ok(TimetagStream::new(records)?.with_trial_period(period))
}

/// Shape of the intensity decay across one measurement cycle of four periods.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayKind {
    /// Period k has intensity `f^(k/3)`.
    #[default]
    PiecewiseGeometric,
    /// `f^t` for t ∈ [0, 1] over the cycle, averaged over each quarter.
    ContinuousExponential,
    /// Period k has intensity `1 − (1 − f)·k/3`.
    LinearRamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub setting_order: [SettingPair; 4],
    pub decay_kind: DecayKind,
    /// End-of-cycle intensity relative to the start.
    pub final_fraction: f64,
}

impl DriftModel {
    pub fn new(
        setting_order: [SettingPair; 4],
        decay_kind: DecayKind,
        final_fraction: f64,
    ) -> Result<Self> {
        let d = DriftModel {
            setting_order,
            decay_kind,
            final_fraction,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return Err(invalid(
                "final_fraction",
                format!("{} is not in (0, 1]", self.final_fraction),
            ));
        }
        let mut seen = [false; 4];
        for p in self.setting_order {
            seen[p.index()] = true;
        }
        if seen.contains(&false) {
            return Err(invalid(
                "setting_order",
                "must be a permutation of the four setting pairs",
            ));
        }
        Ok(())
    }

    /// Intensity multiplier of each of the four periods in a cycle.
    pub fn intensities(&self) -> [f64; 4] {
        let f = self.final_fraction;
        match self.decay_kind {
            DecayKind::PiecewiseGeometric => [0, 1, 2, 3].map(|k| f.powf(k as f64 / 3.0)),
            DecayKind::LinearRamp => [0, 1, 2, 3].map(|k| 1.0 - (1.0 - f) * k as f64 / 3.0),
            DecayKind::ContinuousExponential => {
                if f == 1.0 {
                    return [1.0; 4];
                }
                let ln = f.ln();
                [0, 1, 2, 3]
                    .map(|k| 4.0 * (f.powf((k + 1) as f64 / 4.0) - f.powf(k as f64 / 4.0)) / ln)
            }
        }
    }
}

/// Source whose counts are drifted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftSource {
    Quantum(PolarizationState),
    /// Class flags already include detection, so efficiencies are not applied.
    Strategy(LhvStrategy),
}

impl DriftSource {
    fn pair_detection(
        &self,
        settings: &MeasurementSettings,
        pair: SettingPair,
        det: &DetectionModel,
    ) -> Result<(f64, f64, f64)> {
        match self {
            DriftSource::Quantum(state) => {
                let (x, y) = settings.angles(pair);
                Ok(pair_detection(state, x, y, det))
            }
            DriftSource::Strategy(s) => s.pair_detection(pair),
        }
    }
}

/// Expected counts with `trials_per_pair` trials under each setting pair.
pub fn expected_counts(
    source: &DriftSource,
    settings: &MeasurementSettings,
    det: &DetectionModel,
    model: ForwardModel,
    trials_per_pair: f64,
) -> Result<CountsTable<f64>> {
    let mut table = CountsTable::default();
    for pair in SettingPair::ALL {
        let p =
            trial_probabilities_from_pair(source.pair_detection(settings, pair, det)?, det, model);
        *table.row_mut(pair) =
            CountsRow::expected(trials_per_pair, p.singles_a, p.singles_b, p.coincidence);
    }
    Ok(table)
}

/// Expected counts when settings are visited in the drift model's fixed
/// order, each for `trials_per_period` trials, with the pair rate and
/// backgrounds scaled by that period's intensity. Decay restarts every cycle.
pub fn drifted_counts(
    source: &DriftSource,
    settings: &MeasurementSettings,
    det: &DetectionModel,
    drift: &DriftModel,
    cycles: u64,
    trials_per_period: f64,
    model: ForwardModel,
) -> Result<CountsTable<f64>> {
    if cycles == 0 {
        return Err(invalid("cycles", "must be at least 1"));
    }
    drift.validate()?;
    det.validate()?;
    let mut table = CountsTable::default();
    for (&pair, intensity) in drift.setting_order.iter().zip(drift.intensities()) {
        let scaled = det.scaled(intensity);
        let p = trial_probabilities_from_pair(
            source.pair_detection(settings, pair, &scaled)?,
            &scaled,
            model,
        );
        *table.row_mut(pair) =
            CountsRow::expected(trials_per_period, p.singles_a, p.singles_b, p.coincidence)
                * cycles as f64;
    }
    Ok(table)
}
