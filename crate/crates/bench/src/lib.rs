//! Shared inputs for the pipeline benchmarks.

use chbell::sim::{expand_schedule, simulate_timetags, ExperimentConfig};
use chbell::{SettingPair, TimetagStream};

/// Default experiment scaled to `n_blocks` blocks of 25 000 trials.
pub fn config(n_blocks: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_blocks,
        ..ExperimentConfig::default()
    }
}

/// Simulated timetags and the per-trial settings needed to window them.
pub fn stream(n_blocks: usize) -> (TimetagStream, Vec<SettingPair>) {
    let cfg = config(n_blocks);
    let sim = simulate_timetags(&cfg).expect("valid default config");
    let per_trial = expand_schedule(&sim.schedule, cfg.trials_per_block);
    (sim.stream, per_trial)
}
