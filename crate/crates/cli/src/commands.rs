use std::fmt;
use std::path::Path;

use anyhow::{bail, Result};
use serde_json::json;

use chbell::coincidence::{windowed_counts, WindowPolicy};
use chbell::counts::blocks_to_csv;
use chbell::dire::{
    dire_report, extractable_length, hash_extract_checked, read_bits, write_bits, ExtractionPolicy,
};
use chbell::lhv::{
    coincidence_time_stream, counts_from_strategy, drifted_counts, DecayKind, DriftModel,
    DriftSource, LhvStrategy, TimedEmissionSchedule,
};
use chbell::optimizer::{
    bprime_vs_r_sweep, optimize, sweep_to_csv, violation_interval, Objective, OptimizerOptions,
};
use chbell::sim::{
    setting_schedule, settings_to_text, simulate_blocks, simulate_timetags, ExperimentConfig,
    ScheduleKind,
};
use chbell::stats::{bell_result, binomial_sigma, partition_sigma, PartitionMode};
use chbell::timetag::TimetagFormat;
use chbell::{
    CountsTable, DetectionModel, ForwardModel, MeasurementSettings, PolarizationState, SettingPair,
    SinglesEstimator,
};

use crate::input::{self, Loaded};
use crate::manifest::Outputs;
use crate::{
    AnalyzeArgs, Cli, Command, DetectorArgs, DireArgs, Estimator, LhvDemoArgs, ModelArg,
    ObjectiveArg, OptimizeArgs, SimulateArgs, StreamFormat, SweepArgs,
};

/// Bad arguments or input detected by the front end.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// 2 validation, 3 I/O, 4 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use chbell::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) => 3,
                E::Numerical(_) | E::Overflow | E::ZeroDenominator(_) => 4,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    4
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Analyze(a) => analyze(cli, a),
        Command::Optimize(a) => cmd_optimize(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::LhvDemo(a) => lhv_demo(cli, a),
        Command::Dire(a) => dire(cli, a),
    }
}

fn echo(cli: &Cli, text: &str) {
    if !cli.quiet {
        println!("{text}");
    }
}

fn note(cli: &Cli, text: &str) {
    if !cli.quiet {
        eprintln!("{text}");
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_json(&input::read_text(&a.config)?)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if let ScheduleKind::File { path } = &mut cfg.schedule_kind {
        if path.is_relative() {
            if let Some(dir) = a.config.parent() {
                *path = dir.join(&*path);
            }
        }
    }

    let mut out = Outputs::create(&cli.out)?;
    let blocks = simulate_blocks(&cfg)?;
    let table = CountsTable::from_blocks(&blocks)?;
    let schedule: Vec<SettingPair> = blocks.iter().map(|b| b.setting_pair).collect();
    out.write("blocks.csv", blocks_to_csv(&blocks))?;
    out.write("counts.json", table.to_json()?)?;
    out.write("settings.txt", settings_to_text(&schedule))?;
    if a.timetags {
        let sim = simulate_timetags(&cfg)?;
        let (name, format) = match a.timetag_format {
            StreamFormat::Csv => ("timetags.csv", TimetagFormat::Csv),
            StreamFormat::Binary => ("timetags.bin", TimetagFormat::Binary),
        };
        out.write(name, sim.stream.encode(format))?;
        if sim.diagnostics.clamped > 0 {
            note(
                cli,
                &format!(
                    "{} detections clamped to their trial edges",
                    sim.diagnostics.clamped
                ),
            );
        }
    }
    let result = bell_result(
        &table,
        SinglesEstimator::Pooled,
        Some(binomial_sigma(&table)?),
    )?;
    echo(cli, &serde_json::to_string_pretty(&result)?);
    out.finish("simulate", Some(&a.config), Some(cfg.rng_seed))
}

fn estimator(e: Estimator) -> SinglesEstimator {
    match e {
        Estimator::Pooled => SinglesEstimator::Pooled,
        Estimator::Conditional => SinglesEstimator::Conditional,
    }
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let policy: WindowPolicy = a.window.parse()?;
    let est = estimator(a.estimator);
    let (table, sigma, diagnostics) = match input::load(&a.input, a.input_kind)? {
        Loaded::Counts(t) => {
            let s = binomial_sigma(&t)?;
            (t, s, None)
        }
        Loaded::Blocks(blocks) => {
            let t = CountsTable::from_blocks(&blocks)?;
            let s = match a.partitions {
                Some(k) => partition_sigma(&blocks, k, PartitionMode::Strided, est)?,
                None => binomial_sigma(&t)?,
            };
            (t, s, None)
        }
        Loaded::Timetags(stream) => {
            let Some(settings_path) = &a.settings else {
                bail!(Invalid("timetag input needs --settings".into()));
            };
            if a.trials_per_block == 0 {
                bail!(Invalid("--trials-per-block must be at least 1".into()));
            }
            let schedule = input::per_trial_settings(settings_path, a.trials_per_block)?;
            if let WindowPolicy::Event { window_ns } = policy {
                note(
                    cli,
                    &format!(
                        "warning: event-relative coincidence window ({window_ns} ns) is open to the \
                         coincidence-time loophole; a local source can fake a violation. Use --window clock."
                    ),
                );
            }
            let (t, diag) = windowed_counts(&stream, policy, &schedule)?;
            let s = binomial_sigma(&t)?;
            (t, s, Some(diag))
        }
    };
    let sigma = match a.sigma {
        Some(s) if !(s.is_finite() && s > 0.0) => bail!(Invalid("--sigma must be positive".into())),
        Some(s) => s,
        None => sigma,
    };
    let result = bell_result(&table, est, Some(sigma))?;
    let mut out = Outputs::create(&cli.out)?;
    out.write("counts.json", table.to_json()?)?;
    let report = json!({
        "result": result,
        "window": policy,
        "diagnostics": diagnostics,
        "counts": serde_json::to_value(table)?,
    });
    out.write("analysis.json", serde_json::to_string_pretty(&report)?)?;
    echo(cli, &serde_json::to_string_pretty(&result)?);
    out.finish("analyze", Some(&a.input), None)
}

fn forward_model(m: ModelArg) -> ForwardModel {
    match m {
        ModelArg::Linearized => ForwardModel::Linearized,
        ModelArg::Poisson => ForwardModel::Poisson,
    }
}

fn detector(d: &DetectorArgs) -> Result<(DetectionModel, OptimizerOptions)> {
    let det = DetectionModel::symmetric(d.eta, d.pair_mean, d.bg);
    det.validate()?;
    Ok((det, OptimizerOptions::with_model(forward_model(d.model))))
}

fn cmd_optimize(cli: &Cli, a: &OptimizeArgs) -> Result<()> {
    let (det, opts) = detector(&a.det)?;
    let objective = match a.objective {
        ObjectiveArg::B => Objective::B,
        ObjectiveArg::BPrime => Objective::BPrime,
        ObjectiveArg::Significance => Objective::BOverSigma { trials: a.trials },
    };
    let result = optimize(&det, objective, a.fix_r, &opts)?;
    let text = serde_json::to_string_pretty(&result)?;
    let mut out = Outputs::create(&cli.out)?;
    out.write("optimize.json", &text)?;
    echo(cli, &text);
    out.finish("optimize", None, None)
}

/// `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Invalid(format!("bad --r-grid `{s}`"));
    let grid: Vec<f64> = if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [start, stop, step] = parts[..] else {
            bail!(bad())
        };
        if !(step > 0.0 && stop >= start) {
            bail!(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + i as f64 * step).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?
    };
    if grid.is_empty() || grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        bail!(Invalid(format!(
            "--r-grid values must lie in (0, 1]: `{s}`"
        )));
    }
    Ok(grid)
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let (det, opts) = detector(&a.det)?;
    let grid = parse_grid(&a.r_grid)?;
    let points = bprime_vs_r_sweep(&det, &grid, &opts)?;
    let csv = sweep_to_csv(&points);
    let mut out = Outputs::create(&cli.out)?;
    out.write("sweep.csv", &csv)?;
    echo(cli, csv.trim_end());
    let best = points.iter().max_by(|x, y| x.b_prime.total_cmp(&y.b_prime));
    match best.filter(|p| p.b_prime > 1.0) {
        Some(p) => {
            if let Some((lo, hi)) = violation_interval(&points, p.r) {
                note(cli, &format!("B' > 1 for r in ({lo:.3}, {hi:.3})"));
            }
        }
        None => note(cli, "no violation on this grid"),
    }
    out.finish("sweep", None, None)
}

fn lhv_demo(cli: &Cli, a: &LhvDemoArgs) -> Result<()> {
    use SettingPair::*;
    let seed = cli.seed.unwrap_or(0);
    let mut out = Outputs::create(&cli.out)?;
    let pooled = SinglesEstimator::Pooled;
    let summary = |t: &CountsTable<f64>, est: SinglesEstimator| -> Result<serde_json::Value> {
        Ok(json!({
            "B": chbell::stats::ch_from_counts(t, est)?,
            "B_prime": chbell::stats::chprime_from_counts(t, est)?,
        }))
    };

    let ideal = counts_from_strategy(&LhvStrategy::ideal_detector_table(), 4000)?;
    let eff = counts_from_strategy(&LhvStrategy::efficiency_82_table(), 4000)?;
    out.write("ideal_table.json", ideal.to_json()?)?;
    out.write("efficiency82_table.json", eff.to_json()?)?;

    let settings = setting_schedule(&ScheduleKind::RandomPerBlock, a.trials, seed)?;
    let stream = coincidence_time_stream(
        &TimedEmissionSchedule::default(),
        &settings,
        a.t_ns,
        a.trials,
    )?;
    out.write("timed_emitter.csv", stream.to_csv())?;
    out.write("timed_emitter_settings.txt", settings_to_text(&settings))?;
    let window = 1.5 * a.t_ns;
    let (event, _) = windowed_counts(
        &stream,
        WindowPolicy::Event { window_ns: window },
        &settings,
    )?;
    let (clock, _) = windowed_counts(&stream, WindowPolicy::Clock, &settings)?;

    let conditional = SinglesEstimator::Conditional;
    let separable = drifted_counts(
        &DriftSource::Quantum(PolarizationState::mixed_hh_vv()),
        &MeasurementSettings::new(33.75, -11.25, -33.75, 11.25)?,
        &DetectionModel::ideal(),
        &DriftModel::new(
            [AB, APrimeB, ABPrime, APrimeBPrime],
            DecayKind::LinearRamp,
            0.03,
        )?,
        1,
        1e6,
        ForwardModel::Linearized,
    )?;
    let entangled = drifted_counts(
        &DriftSource::Quantum(PolarizationState::eberhard(0.3)?),
        &MeasurementSettings::new(4.4, -28.0, -5.4, 25.9)?,
        &DetectionModel::symmetric(0.762, 1.0, 0.006),
        &DriftModel::new(
            [AB, APrimeBPrime, ABPrime, APrimeB],
            DecayKind::LinearRamp,
            0.82,
        )?,
        1,
        1e6,
        ForwardModel::Linearized,
    )?;
    out.write("drift_separable.json", separable.to_json()?)?;
    out.write("drift_r030.json", entangled.to_json()?)?;

    let report = json!({
        "ideal_table": summary(&ideal.to_f64(), pooled)?,
        "efficiency82_table": summary(&eff.to_f64(), pooled)?,
        "timed_emitter": {
            "event_window_ns": window,
            "event": summary(&event.to_f64(), pooled)?,
            "clock": summary(&clock.to_f64(), pooled)?,
        },
        "drift_separable": summary(&separable, conditional)?,
        "drift_r030": summary(&entangled, conditional)?,
    });
    let text = serde_json::to_string_pretty(&report)?;
    out.write("lhv_demo.json", &text)?;
    echo(cli, &text);
    out.finish("lhv-demo", None, Some(seed))
}

fn dire(cli: &Cli, a: &DireArgs) -> Result<()> {
    let table = input::load_table(&a.counts)?;
    let policy: ExtractionPolicy = a.policy.parse()?;
    let report = dire_report(&table, a.seconds, policy, a.epsilon, a.bits_per_event)?;
    for w in &report.warnings {
        note(cli, &format!("warning: {w}"));
    }
    let mut out = Outputs::create(&cli.out)?;
    if let (Some(raw_path), Some(seed_path)) = (&a.extract, &a.seed_file) {
        if policy != ExtractionPolicy::HashExtract {
            bail!(Invalid("--extract requires --policy hash-extract".into()));
        }
        let Some(eps) = a.epsilon else {
            bail!(Invalid("--extract requires --epsilon".into()));
        };
        let raw = read_bits(std::fs::File::open(raw_path).map_err(|e| io_context(e, raw_path))?)?;
        let seed =
            read_bits(std::fs::File::open(seed_path).map_err(|e| io_context(e, seed_path))?)?;
        let sized = extractable_length(
            report.raw_entropy_bits,
            policy,
            Some(eps),
            Some(raw.len() as u64),
        )?;
        let out_len = (sized.extractable_bits as usize).min(raw.len());
        let bits = hash_extract_checked(&raw, &seed, out_len, report.raw_entropy_bits, eps)?;
        let mut buf = Vec::new();
        write_bits(&mut buf, &bits)?;
        out.write("extracted.bits", buf)?;
    }
    let text = serde_json::to_string_pretty(&report)?;
    out.write("dire.json", &text)?;
    echo(cli, &text);
    out.finish("dire", Some(&a.counts), None)
}

fn io_context(e: std::io::Error, path: &Path) -> std::io::Error {
    std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}
