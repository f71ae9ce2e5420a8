//! Monte-Carlo simulation of the pulsed experiment.
//!
//! Each trial draws a Poissonian number of pairs; every pair passes the
//! analyzers according to the joint quantum outcome distribution and each
//! transmitted photon is detected with the arm efficiency. Independent
//! background clicks are added per arm. Blocks use independent ChaCha8
//! streams keyed by block index, so parallel and sequential runs agree bit
//! for bit, and timing draws use a separate generator so that the timetag
//! and block paths produce identical clicks.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counts::BlockRecord;
use crate::error::{invalid, Error, Result};
use crate::lhv::DriftModel;
use crate::quantum::{DetectionModel, PolarizationState};
use crate::settings::{MeasurementSettings, SettingPair};
use crate::timetag::{Channel, TimetagRecord, TimetagStream};

const SCHEDULE_STREAM: u64 = u64::MAX;
const TIMING_KEY: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    RandomPerBlock,
    Cyclic {
        #[serde(default = "default_order")]
        order: [SettingPair; 4],
    },
    /// Settings file: one index 0–3 per line, one line per block.
    File { path: PathBuf },
}

fn default_order() -> [SettingPair; 4] {
    SettingPair::ALL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: PolarizationState,
    pub settings: MeasurementSettings,
    #[serde(default)]
    pub det: DetectionModel,
    #[serde(default)]
    pub schedule_kind: ScheduleKind,
    #[serde(default = "default_trials_per_block")]
    pub trials_per_block: u64,
    pub n_blocks: usize,
    #[serde(default)]
    pub rng_seed: u64,
    /// Source intensity drift; block `i` sits at phase `i mod 4` of the cycle.
    #[serde(default)]
    pub drift: Option<DriftModel>,
    /// Polarizer extinction ratio; absent means ideal polarizers.
    #[serde(default)]
    pub extinction_ratio: Option<f64>,
}

fn default_trials_per_block() -> u64 {
    25_000
}

impl Default for ExperimentConfig {
    /// r = 0.26 at the loophole-free settings, 40 one-second blocks.
    fn default() -> Self {
        ExperimentConfig {
            state: PolarizationState::eberhard(0.26).expect("valid r"),
            settings: MeasurementSettings::table1(),
            det: DetectionModel::default(),
            schedule_kind: ScheduleKind::RandomPerBlock,
            trials_per_block: default_trials_per_block(),
            n_blocks: 40,
            rng_seed: 0,
            drift: None,
            extinction_ratio: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.det.validate()?;
        if self.trials_per_block == 0 {
            return Err(invalid("trials_per_block", "must be at least 1"));
        }
        if self.n_blocks == 0 {
            return Err(invalid("n_blocks", "must be at least 1"));
        }
        if let Some(d) = &self.drift {
            d.validate()?;
        }
        if let Some(er) = self.extinction_ratio {
            if !(er.is_finite() && er >= 1.0) {
                return Err(invalid("extinction_ratio", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn total_trials(&self) -> u64 {
        self.trials_per_block * self.n_blocks as u64
    }

    fn intensity(&self, block: usize) -> f64 {
        self.drift
            .as_ref()
            .map_or(1.0, |d| d.intensities()[block % 4])
    }
}

pub fn parse_settings(text: &str) -> Result<Vec<SettingPair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let malformed = |reason: String| Error::Malformed {
                position: format!("line {}", i + 1),
                reason,
            };
            let idx: usize = l
                .trim()
                .parse()
                .map_err(|_| malformed(format!("`{}` is not an index", l.trim())))?;
            SettingPair::from_index(idx).map_err(|_| malformed(format!("index {idx} out of range")))
        })
        .collect()
}

pub fn settings_to_text(schedule: &[SettingPair]) -> String {
    let mut s = String::with_capacity(2 * schedule.len());
    for p in schedule {
        s.push(char::from(b'0' + p.index() as u8));
        s.push('\n');
    }
    s
}

/// Setting pair of each block.
pub fn setting_schedule(
    kind: &ScheduleKind,
    n_blocks: usize,
    rng_seed: u64,
) -> Result<Vec<SettingPair>> {
    match kind {
        ScheduleKind::RandomPerBlock => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(SCHEDULE_STREAM);
            Ok((0..n_blocks)
                .map(|_| SettingPair::ALL[rng.random_range(0..4)])
                .collect())
        }
        ScheduleKind::Cyclic { order } => Ok((0..n_blocks).map(|i| order[i % 4]).collect()),
        ScheduleKind::File { path } => {
            let text = std::fs::read_to_string(path)?;
            let all = parse_settings(&text)?;
            if all.len() < n_blocks {
                return Err(Error::MissingSchedule(all.len()));
            }
            Ok(all)
        }
    }
}

/// Per-trial schedule from a per-block schedule.
pub fn expand_schedule(blocks: &[SettingPair], trials_per_block: u64) -> Vec<SettingPair> {
    blocks
        .iter()
        .flat_map(|&p| std::iter::repeat_n(p, trials_per_block as usize))
        .collect()
}

/// Detection outcome of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PairOutcome {
    Both,
    AliceOnly,
    BobOnly,
    Neither,
}

/// Per-trial sampler for one block.
struct TrialSampler {
    pairs: Option<Poisson<f64>>,
    /// Cumulative probabilities of Both, AliceOnly, BobOnly.
    cumulative: [f64; 3],
    bg_a: f64,
    bg_b: f64,
}

enum Detection {
    Pair(PairOutcome),
    BackgroundA,
    BackgroundB,
}

impl TrialSampler {
    fn new(cfg: &ExperimentConfig, pair: SettingPair, intensity: f64) -> Result<Self> {
        let det = cfg.det.scaled(intensity);
        let (x, y) = cfg.settings.angles(pair);
        let [tt, tb, bt, _] = cfg.state.joint_outcomes(x, y, cfg.extinction_ratio);
        let (ea, eb) = (det.eta_a, det.eta_b);
        let both = ea * eb * tt;
        let a_only = ea * (tt * (1.0 - eb) + tb);
        let b_only = eb * (tt * (1.0 - ea) + bt);
        let pairs = if det.pair_mean > 0.0 {
            Some(Poisson::new(det.pair_mean).map_err(|e| Error::Numerical(e.to_string()))?)
        } else {
            None
        };
        Ok(TrialSampler {
            pairs,
            cumulative: [both, both + a_only, both + a_only + b_only],
            bg_a: det.bg_a,
            bg_b: det.bg_b,
        })
    }

    /// Returns (alice clicked, bob clicked); `on` sees every detection.
    fn trial<R: Rng>(&self, rng: &mut R, mut on: impl FnMut(Detection)) -> (bool, bool) {
        let (mut a, mut b) = (false, false);
        let n = self.pairs.as_ref().map_or(0, |p| p.sample(rng) as u64);
        for _ in 0..n {
            let u: f64 = rng.random();
            let outcome = if u < self.cumulative[0] {
                PairOutcome::Both
            } else if u < self.cumulative[1] {
                PairOutcome::AliceOnly
            } else if u < self.cumulative[2] {
                PairOutcome::BobOnly
            } else {
                PairOutcome::Neither
            };
            match outcome {
                PairOutcome::Both => {
                    a = true;
                    b = true;
                }
                PairOutcome::AliceOnly => a = true,
                PairOutcome::BobOnly => b = true,
                PairOutcome::Neither => continue,
            }
            on(Detection::Pair(outcome));
        }
        if rng.random::<f64>() < self.bg_a {
            a = true;
            on(Detection::BackgroundA);
        }
        if rng.random::<f64>() < self.bg_b {
            b = true;
            on(Detection::BackgroundB);
        }
        (a, b)
    }
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

fn block_schedule(cfg: &ExperimentConfig) -> Result<Vec<SettingPair>> {
    cfg.validate()?;
    let mut s = setting_schedule(&cfg.schedule_kind, cfg.n_blocks, cfg.rng_seed)?;
    s.truncate(cfg.n_blocks);
    Ok(s)
}

pub fn simulate_blocks(cfg: &ExperimentConfig) -> Result<Vec<BlockRecord>> {
    let schedule = block_schedule(cfg)?;
    schedule
        .par_iter()
        .enumerate()
        .map(|(i, &pair)| {
            let sampler = TrialSampler::new(cfg, pair, cfg.intensity(i))?;
            let mut rng = block_rng(cfg.rng_seed, i);
            let mut rec = BlockRecord {
                setting_pair: pair,
                n_trials: cfg.trials_per_block,
                singles_a: 0,
                singles_b: 0,
                coincidences: 0,
            };
            for _ in 0..cfg.trials_per_block {
                let (a, b) = sampler.trial(&mut rng, |_| {});
                rec.singles_a += a as u64;
                rec.singles_b += b as u64;
                rec.coincidences += (a && b) as u64;
            }
            Ok(rec)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingDiagnostics {
    /// Detections whose jittered time fell outside their trial and were clamped to its edge.
    pub clamped: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedStream {
    pub stream: TimetagStream,
    /// Setting pair of each block.
    pub schedule: Vec<SettingPair>,
    pub diagnostics: TimingDiagnostics,
}

/// Timetag version of [`simulate_blocks`]: same clicks, placed on pulses of
/// a burst centred in each trial and smeared by Gaussian jitter, with a
/// clock marker at the start of every trial.
pub fn simulate_timetags(cfg: &ExperimentConfig) -> Result<SimulatedStream> {
    let schedule = block_schedule(cfg)?;
    let det = &cfg.det;
    let period = det.trial_period_ns;
    let burst_offset = (period - det.pulses_per_trial as f64 * det.pulse_period_ns) / 2.0;
    let jitter = if det.jitter_sigma_ns > 0.0 {
        Some(Normal::new(0.0, det.jitter_sigma_ns).map_err(|e| Error::Numerical(e.to_string()))?)
    } else {
        None
    };

    let per_block: Vec<(Vec<TimetagRecord>, u64)> = schedule
        .par_iter()
        .enumerate()
        .map(|(i, &pair)| {
            let sampler = TrialSampler::new(cfg, pair, cfg.intensity(i))?;
            let mut rng = block_rng(cfg.rng_seed, i);
            let mut timing = block_rng(cfg.rng_seed ^ TIMING_KEY, i);
            let mut records = Vec::with_capacity(cfg.trials_per_block as usize + 16);
            let mut clamped = 0u64;
            let mut trial_events: Vec<TimetagRecord> = Vec::new();
            for t in 0..cfg.trials_per_block {
                let k = i as u64 * cfg.trials_per_block + t;
                let start = (k as f64 * period).round();
                let last = (start + period).round() - 1.0;
                trial_events.clear();
                let mut place = |pulse: u32, channel: Channel, timing: &mut ChaCha8Rng| {
                    let mut ts = start + burst_offset + pulse as f64 * det.pulse_period_ns;
                    if let Some(j) = &jitter {
                        ts += j.sample(timing);
                    }
                    if ts < start || ts > last {
                        clamped += 1;
                        ts = ts.clamp(start, last);
                    }
                    trial_events.push(TimetagRecord {
                        timestamp_ns: ts.round() as u64,
                        channel,
                    });
                };
                sampler.trial(&mut rng, |d| {
                    let pulse = timing.random_range(0..det.pulses_per_trial);
                    match d {
                        Detection::Pair(o) => {
                            if matches!(o, PairOutcome::Both | PairOutcome::AliceOnly) {
                                place(pulse, Channel::Alice, &mut timing);
                            }
                            if matches!(o, PairOutcome::Both | PairOutcome::BobOnly) {
                                place(pulse, Channel::Bob, &mut timing);
                            }
                        }
                        Detection::BackgroundA => place(pulse, Channel::Alice, &mut timing),
                        Detection::BackgroundB => place(pulse, Channel::Bob, &mut timing),
                    }
                });
                records.push(TimetagRecord {
                    timestamp_ns: start as u64,
                    channel: Channel::Clock,
                });
                trial_events.sort_by_key(|r| r.timestamp_ns);
                records.extend_from_slice(&trial_events);
            }
            Ok((records, clamped))
        })
        .collect::<Result<_>>()?;

    let mut diagnostics = TimingDiagnostics::default();
    let mut records = Vec::with_capacity(per_block.iter().map(|b| b.0.len()).sum());
    for (r, c) in per_block {
        records.extend(r);
        diagnostics.clamped += c;
    }
    Ok(SimulatedStream {
        stream: TimetagStream::new(records)?.with_trial_period(period),
        schedule,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coincidence::clock_windowed_counts;
    use crate::counts::CountsTable;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            trials_per_block: 2_000,
            n_blocks: 8,
            rng_seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn cyclic_schedule() {
        let s = setting_schedule(
            &ScheduleKind::Cyclic {
                order: SettingPair::ALL,
            },
            8,
            0,
        )
        .unwrap();
        let idx: Vec<usize> = s.iter().map(|p| p.index()).collect();
        assert_eq!(idx, [0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn settings_file_parse() {
        let s = parse_settings("0\n3\n1\n").unwrap();
        assert_eq!(
            s,
            [
                SettingPair::AB,
                SettingPair::APrimeBPrime,
                SettingPair::ABPrime
            ]
        );
        assert_eq!(settings_to_text(&s), "0\n3\n1\n");
        assert!(parse_settings("0\n4\n").is_err());
        assert!(parse_settings("x\n").is_err());
    }

    #[test]
    fn random_schedule_reproducible() {
        let a = setting_schedule(&ScheduleKind::RandomPerBlock, 100, 5).unwrap();
        let b = setting_schedule(&ScheduleKind::RandomPerBlock, 100, 5).unwrap();
        let c = setting_schedule(&ScheduleKind::RandomPerBlock, 100, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn vacuum_gives_zero_counts() {
        let mut cfg = small_cfg();
        cfg.state = PolarizationState::eberhard(0.0).unwrap();
        cfg.settings = MeasurementSettings::new(0.0, 0.0, 0.0, 0.0).unwrap();
        cfg.det = DetectionModel::symmetric(1.0, 0.0, 0.0);
        for b in simulate_blocks(&cfg).unwrap() {
            assert_eq!((b.singles_a, b.singles_b, b.coincidences), (0, 0, 0));
        }
        let s = simulate_timetags(&cfg).unwrap();
        assert_eq!(s.stream.len(), cfg.total_trials() as usize);
        assert_eq!(s.stream.count(Channel::Clock), s.stream.len());
    }

    #[test]
    fn deterministic_and_consistent() {
        let cfg = small_cfg();
        let a = simulate_blocks(&cfg).unwrap();
        assert_eq!(a, simulate_blocks(&cfg).unwrap());
        let s = simulate_timetags(&cfg).unwrap();
        let trials = expand_schedule(&s.schedule, cfg.trials_per_block);
        let (from_tags, diag) = clock_windowed_counts(&s.stream, &trials).unwrap();
        assert_eq!(from_tags, CountsTable::from_blocks(&a).unwrap());
        assert_eq!(diag.before_first_marker, 0);
    }

    #[test]
    fn zero_jitter_pairs_share_timestamps() {
        let mut cfg = small_cfg();
        cfg.state = PolarizationState::eberhard(1.0).unwrap();
        cfg.settings = MeasurementSettings::new(0.0, 0.0, 0.0, 0.0).unwrap();
        cfg.det = DetectionModel::symmetric(1.0, 1.0, 0.0);
        cfg.det.jitter_sigma_ns = 0.0;
        let s = simulate_timetags(&cfg).unwrap();
        let mut alice = Vec::new();
        let mut bob = Vec::new();
        for r in &s.stream.records {
            match r.channel {
                Channel::Alice => alice.push(r.timestamp_ns),
                Channel::Bob => bob.push(r.timestamp_ns),
                Channel::Clock => {}
            }
        }
        assert!(!alice.is_empty());
        alice.sort_unstable();
        bob.sort_unstable();
        assert_eq!(alice, bob);
        assert_eq!(s.diagnostics.clamped, 0);
    }

    #[test]
    fn config_json() {
        let js = r#"{
            "state": {"kind": "eberhard-pure", "r": 0.26},
            "settings": {"a": 3.8, "a_prime": -25.2, "b": -3.8, "b_prime": 25.2},
            "det": {"eta_a": 0.8},
            "schedule_kind": {"kind": "cyclic"},
            "n_blocks": 4
        }"#;
        let cfg = ExperimentConfig::from_json(js).unwrap();
        assert_eq!(cfg.det.eta_a, 0.8);
        assert_eq!(cfg.det.eta_b, DetectionModel::default().eta_b);
        assert_eq!(cfg.trials_per_block, 25_000);
        assert!(
            ExperimentConfig::from_json(&js.replace("\"n_blocks\": 4", "\"n_blocks\": 0")).is_err()
        );
        assert!(ExperimentConfig::from_json(&js.replace("0.8", "1.8")).is_err());
    }
}
