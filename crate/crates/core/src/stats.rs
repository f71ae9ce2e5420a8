//! CH estimators from counts, uncertainty estimates and significance bounds.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::counts::{BlockRecord, Count, CountsTable};
use crate::error::{invalid, Error, Result};
use crate::settings::SettingPair::{self, *};

/// How the single-arm detection probabilities are estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SinglesEstimator {
    /// `p1(a) = [S1(a|b) + S1(a|b′)] / [N(a,b) + N(a,b′)]`, likewise for Bob.
    #[default]
    Pooled,
    /// `p1(a) = S1(a|b′)/N(a,b′)`, `p2(b) = S2(b|a′)/N(a′,b)`.
    Conditional,
}

/// Estimated per-trial probabilities entering the CH combination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChTerms {
    pub coincidence_sum: f64,
    pub p1: f64,
    pub p2: f64,
}

fn ratio(num: f64, den: f64, what: &'static str) -> Result<f64> {
    if den <= 0.0 {
        return Err(Error::ZeroDenominator(what));
    }
    Ok(num / den)
}

pub fn ch_terms<T: Count>(table: &CountsTable<T>, est: SinglesEstimator) -> Result<ChTerms> {
    let r = |p: SettingPair| table.row(p).to_f64();
    for p in SettingPair::ALL {
        if r(p).n_trials <= 0.0 {
            return Err(Error::ZeroTrials(p.key()));
        }
    }
    let coincidence_sum = SettingPair::ALL
        .iter()
        .map(|&p| p.sign() * r(p).coincidences / r(p).n_trials)
        .sum();
    let (p1, p2) = match est {
        SinglesEstimator::Pooled => (
            ratio(
                r(AB).singles_a + r(ABPrime).singles_a,
                r(AB).n_trials + r(ABPrime).n_trials,
                "p1(a)",
            )?,
            ratio(
                r(AB).singles_b + r(APrimeB).singles_b,
                r(AB).n_trials + r(APrimeB).n_trials,
                "p2(b)",
            )?,
        ),
        SinglesEstimator::Conditional => (
            r(ABPrime).singles_a / r(ABPrime).n_trials,
            r(APrimeB).singles_b / r(APrimeB).n_trials,
        ),
    };
    Ok(ChTerms {
        coincidence_sum,
        p1,
        p2,
    })
}

/// CH value: three coincidence rates minus the fourth, minus both singles rates.
pub fn ch_from_counts<T: Count>(table: &CountsTable<T>, est: SinglesEstimator) -> Result<f64> {
    let t = ch_terms(table, est)?;
    Ok(t.coincidence_sum - t.p1 - t.p2)
}

/// Ratio form: signed coincidence sum over the singles sum; local bound 1.
pub fn chprime_from_counts<T: Count>(table: &CountsTable<T>, est: SinglesEstimator) -> Result<f64> {
    let t = ch_terms(table, est)?;
    ratio(t.coincidence_sum, t.p1 + t.p2, "singles sum")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellResult {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "B_prime")]
    pub b_prime: f64,
    #[serde(rename = "sigma_B")]
    pub sigma_b: Option<f64>,
    pub significance: Option<f64>,
    pub estimator: SinglesEstimator,
}

pub fn bell_result<T: Count>(
    table: &CountsTable<T>,
    est: SinglesEstimator,
    sigma_b: Option<f64>,
) -> Result<BellResult> {
    let b = ch_from_counts(table, est)?;
    let b_prime = chprime_from_counts(table, est)?;
    Ok(BellResult {
        b,
        b_prime,
        sigma_b,
        significance: sigma_b.filter(|s| *s > 0.0).map(|s| b / s),
        estimator: est,
    })
}

/// Standard error of the pooled CH estimator for independent trials, using
/// the table's own rates as the per-trial probabilities.
///
/// Within a row every trial contributes `α·C + β·A + γ·B` where the click
/// indicators satisfy `C = A·B`, so the per-trial variance follows from the
/// three observed rates.
pub fn binomial_sigma<T: Count>(table: &CountsTable<T>) -> Result<f64> {
    let r = |p: SettingPair| table.row(p).to_f64();
    for p in SettingPair::ALL {
        if r(p).n_trials <= 0.0 {
            return Err(Error::ZeroTrials(p.key()));
        }
    }
    let na = r(AB).n_trials + r(ABPrime).n_trials;
    let nb = r(AB).n_trials + r(APrimeB).n_trials;
    let mut var = 0.0;
    for p in SettingPair::ALL {
        let row = r(p);
        let n = row.n_trials;
        let alpha = p.sign() / n;
        let beta = if p.alice_primed() { 0.0 } else { -1.0 / na };
        let gamma = if p.bob_primed() { 0.0 } else { -1.0 / nb };
        let (pc, pa, pb) = (row.coincidences / n, row.singles_a / n, row.singles_b / n);
        let mean = alpha * pc + beta * pa + gamma * pb;
        let second = alpha * alpha * pc
            + beta * beta * pa
            + gamma * gamma * pb
            + 2.0 * (alpha * beta + alpha * gamma + beta * gamma) * pc;
        var += n * (second - mean * mean);
    }
    Ok(var.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// Partition j holds blocks j, j+k, j+2k, ...
    Strided,
    /// Contiguous runs of blocks.
    Sequential,
}

/// Per-partition count tables.
pub fn partition_tables(
    blocks: &[BlockRecord],
    k: usize,
    mode: PartitionMode,
) -> Result<Vec<CountsTable>> {
    if k < 2 {
        return Err(invalid("k", "need at least 2 partitions"));
    }
    if blocks.len() < 4 * k {
        return Err(Error::InsufficientData(format!(
            "{} blocks cannot fill {k} partitions",
            blocks.len()
        )));
    }
    let mut parts = vec![Vec::new(); k];
    match mode {
        PartitionMode::Strided => {
            for (i, b) in blocks.iter().enumerate() {
                parts[i % k].push(*b);
            }
        }
        PartitionMode::Sequential => {
            let n = blocks.len();
            for (j, part) in parts.iter_mut().enumerate() {
                part.extend_from_slice(&blocks[j * n / k..(j + 1) * n / k]);
            }
        }
    }
    parts
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let t = CountsTable::from_blocks(p)?;
            if let Some(row) = t.rows.iter().position(|r| r.n_trials == 0) {
                return Err(Error::InsufficientData(format!(
                    "partition {j} has no trials for setting pair {}",
                    SettingPair::ALL[row]
                )));
            }
            Ok(t)
        })
        .collect()
}

/// Standard error of the full-data CH value from the scatter of `k`
/// partition estimates: their standard deviation divided by √(k−1).
pub fn partition_sigma(
    blocks: &[BlockRecord],
    k: usize,
    mode: PartitionMode,
    est: SinglesEstimator,
) -> Result<f64> {
    let values = partition_tables(blocks, k, mode)?
        .iter()
        .map(|t| ch_from_counts(t, est))
        .collect::<Result<Vec<f64>>>()?;
    let kf = k as f64;
    let mean = values.iter().sum::<f64>() / kf;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = (ss / kf).sqrt();
    Ok(sd / (kf - 1.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub per_k: Vec<(usize, f64)>,
    pub mean: f64,
    /// Sample standard deviation of the per-k estimates.
    pub spread: f64,
}

pub fn partition_sigma_sweep(
    blocks: &[BlockRecord],
    ks: impl IntoIterator<Item = usize>,
    mode: PartitionMode,
    est: SinglesEstimator,
) -> Result<SigmaSweep> {
    let per_k = ks
        .into_iter()
        .map(|k| Ok((k, partition_sigma(blocks, k, mode, est)?)))
        .collect::<Result<Vec<_>>>()?;
    if per_k.is_empty() {
        return Err(invalid("ks", "empty sweep"));
    }
    let n = per_k.len() as f64;
    let mean = per_k.iter().map(|x| x.1).sum::<f64>() / n;
    let spread = if per_k.len() > 1 {
        (per_k.iter().map(|x| (x.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(SigmaSweep {
        per_k,
        mean,
        spread,
    })
}

/// Number of partitions with a positive CH value, for each requested partition count.
pub fn violation_profile(
    blocks: &[BlockRecord],
    ks: impl IntoIterator<Item = usize>,
    mode: PartitionMode,
    est: SinglesEstimator,
) -> Result<Vec<(usize, usize)>> {
    ks.into_iter()
        .map(|k| {
            let v = partition_tables(blocks, k, mode)?
                .iter()
                .map(|t| ch_from_counts(t, est))
                .collect::<Result<Vec<f64>>>()?;
            Ok((k, v.iter().filter(|&&b| b > 0.0).count()))
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `P(X ≥ n_violations)` for `X ~ Binomial(n_cycles, p)`, summed exactly in log space.
pub fn hacker_bound(n_cycles: u64, n_violations: u64, p: f64) -> Result<f64> {
    if n_violations > n_cycles {
        return Err(invalid("n_violations", "exceeds n_cycles"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("p_guess_per_cycle", "not a probability"));
    }
    if n_violations == 0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    // ln C(n, k) by the multiplicative recurrence from k = 0
    let n = n_cycles as f64;
    let mut ln_binom = 0.0;
    for k in 0..n_violations {
        ln_binom += (n - k as f64).ln() - (k as f64 + 1.0).ln();
    }
    let mut terms = Vec::with_capacity((n_cycles - n_violations + 1) as usize);
    for k in n_violations..=n_cycles {
        let kf = k as f64;
        terms.push(ln_binom + kf * lp + (n - kf) * lq);
        ln_binom += (n - kf).ln() - (kf + 1.0).ln();
    }
    Ok(log_sum_exp(&terms).exp().min(1.0))
}

/// log₂ of `(1/2)^n_cycles`, the chance of reproducing any particular
/// per-cycle violation pattern by guessing.
pub fn distribution_floor(n_cycles: u64) -> Result<f64> {
    if n_cycles == 0 {
        return Err(invalid("n_cycles", "must be at least 1"));
    }
    Ok(-(n_cycles as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperQuantumBound {
    pub s_upper: f64,
    /// Maximum duty cycle of a model saturating S = 4.
    pub on_fraction: f64,
}

pub fn superquantum_bounds(
    s_measured: f64,
    sigma_s: f64,
    n_sigma: f64,
) -> Result<SuperQuantumBound> {
    if !(sigma_s.is_finite() && sigma_s >= 0.0) {
        return Err(invalid("sigma_s", "must be non-negative"));
    }
    let s_upper = s_measured + n_sigma * sigma_s;
    let tsirelson = 2.0 * SQRT_2;
    Ok(SuperQuantumBound {
        s_upper,
        on_fraction: ((s_upper - tsirelson) / (4.0 - tsirelson)).clamp(0.0, 1.0),
    })
}
