//! Search over the state ratio and analyzer angles for the largest CH violation.
//!
//! A coarse grid over mirror-symmetric settings (b = −a, b′ = −a′) picks a
//! start point, then compass search over all four angles (and r when free)
//! halves its step until it drops below the angular tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::counts::{CountsRow, CountsTable};
use crate::error::{invalid, Error, Result};
use crate::quantum::{ch_prediction, DetectionModel, ForwardModel, PolarizationState};
use crate::settings::MeasurementSettings;
use crate::stats::binomial_sigma;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Objective {
    B,
    BPrime,
    /// B divided by its binomial standard error for `trials` trials split
    /// evenly over the four setting pairs.
    BOverSigma {
        trials: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    pub model: ForwardModel,
    pub grid_step_deg: f64,
    pub grid_range_deg: f64,
    /// Candidate ratios for the coarse grid when r is free.
    pub r_grid: Vec<f64>,
    pub tol_deg: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            model: ForwardModel::Linearized,
            grid_step_deg: 0.5,
            grid_range_deg: 45.0,
            r_grid: (1..=50).map(|i| i as f64 * 0.02).collect(),
            tol_deg: 1e-3,
        }
    }
}

impl OptimizerOptions {
    pub fn with_model(model: ForwardModel) -> Self {
        OptimizerOptions {
            model,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.grid_step_deg > 0.0 && self.grid_range_deg > 0.0 && self.tol_deg > 0.0) {
            return Err(invalid(
                "optimizer",
                "grid step, range and tolerance must be positive",
            ));
        }
        if self.r_grid.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("r_grid", "ratios must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub r: f64,
    pub settings: MeasurementSettings,
    pub objective: Objective,
    pub value: f64,
    #[serde(rename = "predicted_B")]
    pub predicted_b: f64,
    #[serde(rename = "predicted_B_prime")]
    pub predicted_b_prime: f64,
}

const R_MIN: f64 = 1e-4;
/// r moves this many units per degree of angular step during refinement.
const R_PER_DEG: f64 = 0.04;

/// Objective value at one point.
pub fn evaluate(
    r: f64,
    settings: &MeasurementSettings,
    det: &DetectionModel,
    objective: Objective,
    model: ForwardModel,
) -> f64 {
    let state = PolarizationState::EberhardPure { r, phase: 0.0 };
    let pred = ch_prediction(&state, settings, det, model);
    match objective {
        Objective::B => pred.b,
        Objective::BPrime => pred.b_prime,
        Objective::BOverSigma { trials } => {
            let n = trials / 4.0;
            let table = CountsTable {
                rows: pred
                    .rows
                    .map(|p| CountsRow::expected(n, p.singles_a, p.singles_b, p.coincidence)),
            };
            match binomial_sigma(&table) {
                Ok(s) if s > 0.0 => pred.b / s,
                _ => f64::NAN,
            }
        }
    }
}

fn grid(step: f64, range: f64) -> Vec<f64> {
    let n = (range / step).round() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

/// Maximize `objective` over angles, and over r unless `fix_r` is given.
pub fn optimize(
    det: &DetectionModel,
    objective: Objective,
    fix_r: Option<f64>,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    det.validate()?;
    opts.validate()?;
    if let Some(r) = fix_r {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("fix_r", format!("{r} must be positive")));
        }
    }
    if let Objective::BOverSigma { trials } = objective {
        if !(trials.is_finite() && trials > 0.0) {
            return Err(invalid("trials", "must be positive"));
        }
    }
    let rs: Vec<f64> = match fix_r {
        Some(r) => vec![r],
        None => opts.r_grid.clone(),
    };
    let angles = grid(opts.grid_step_deg, opts.grid_range_deg);
    let na = angles.len();
    let eval = |r: f64, s: &MeasurementSettings| evaluate(r, s, det, objective, opts.model);

    // (value, flat index); ties go to the lower index so the result does not
    // depend on how rayon splits the work
    let better = |x: (f64, usize), y: (f64, usize)| {
        let xv = if x.0.is_nan() { f64::NEG_INFINITY } else { x.0 };
        let yv = if y.0.is_nan() { f64::NEG_INFINITY } else { y.0 };
        if xv > yv || (xv == yv && x.1 < y.1) {
            x
        } else {
            y
        }
    };
    let (best_val, best_idx) = (0..rs.len() * na * na)
        .into_par_iter()
        .map(|idx| {
            let (ri, rest) = (idx / (na * na), idx % (na * na));
            let (a, ap) = (angles[rest / na], angles[rest % na]);
            let s = MeasurementSettings::from_array([a, ap, -a, -ap]);
            (eval(rs[ri], &s), idx)
        })
        .reduce(|| (f64::NAN, usize::MAX), better);
    if !best_val.is_finite() {
        return Err(Error::Numerical(format!(
            "objective is not finite anywhere on the grid (best {best_val})"
        )));
    }
    let (ri, rest) = (best_idx / (na * na), best_idx % (na * na));
    let (a, ap) = (angles[rest / na], angles[rest % na]);

    let mut x = [a, ap, -a, -ap];
    let mut r = rs[ri];
    let mut val = best_val;
    let mut step = opts.grid_step_deg;
    while step >= opts.tol_deg {
        let mut improved = false;
        for coord in 0..5 {
            if coord == 4 && fix_r.is_some() {
                continue;
            }
            for dir in [1.0, -1.0] {
                let (mut xt, mut rt) = (x, r);
                if coord < 4 {
                    xt[coord] += dir * step;
                } else {
                    rt = (r + dir * step * R_PER_DEG).clamp(R_MIN, 1.0);
                    if rt == r {
                        continue;
                    }
                }
                let v = eval(rt, &MeasurementSettings::from_array(xt));
                if v > val {
                    x = xt;
                    r = rt;
                    val = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    let settings = MeasurementSettings::from_array(x);
    let state = PolarizationState::EberhardPure { r, phase: 0.0 };
    let pred = ch_prediction(&state, &settings, det, opts.model);
    Ok(OptimizationResult {
        r,
        settings,
        objective,
        value: val,
        predicted_b: pred.b,
        predicted_b_prime: pred.b_prime,
    })
}

/// Largest CH value over angles at fixed r.
pub fn max_ch(r: f64, det: &DetectionModel, opts: &OptimizerOptions) -> Result<f64> {
    Ok(optimize(det, Objective::B, Some(r), opts)?.value)
}

/// Smallest symmetric detection efficiency giving a CH violation for the
/// Eberhard state with ratio `r`. Background is `bg_fraction` of the pair
/// rate singles (`bg = bg_fraction·η`, one pair per trial).
pub fn critical_efficiency(r: f64, bg_fraction: f64, opts: &OptimizerOptions) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid("r", format!("{r} is not in (0, 1]")));
    }
    let f = |eta: f64| max_ch(r, &DetectionModel::symmetric(eta, 1.0, bg_fraction), opts);
    let (mut lo, mut hi) = (0.5, 1.0);
    if f(hi)? <= 0.0 || f(lo)? > 0.0 {
        return Err(Error::Numerical(format!(
            "no sign change of the maximal CH value on η ∈ [{lo}, {hi}]"
        )));
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r: f64,
    #[serde(rename = "B_prime")]
    pub b_prime: f64,
    pub settings: MeasurementSettings,
}

/// Angle-optimized ratio form at each r.
pub fn bprime_vs_r_sweep(
    det: &DetectionModel,
    r_grid: &[f64],
    opts: &OptimizerOptions,
) -> Result<Vec<SweepPoint>> {
    if r_grid.is_empty() {
        return Err(invalid("r_grid", "empty"));
    }
    r_grid
        .iter()
        .map(|&r| {
            let o = optimize(det, Objective::BPrime, Some(r), opts)?;
            Ok(SweepPoint {
                r,
                b_prime: o.value,
                settings: o.settings,
            })
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "r,B_prime,a,a_prime,b,b_prime";

pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for p in points {
        let x = p.settings;
        let _ = writeln!(
            s,
            "{},{:.8},{:.4},{:.4},{:.4},{:.4}",
            p.r, p.b_prime, x.a, x.a_prime, x.b, x.b_prime
        );
    }
    s
}

/// Maximal r-interval around `inside` on which the sweep exceeds 1, with
/// endpoints linearly interpolated between grid points.
pub fn violation_interval(points: &[SweepPoint], inside: f64) -> Option<(f64, f64)> {
    let i = points
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.r - inside)
                .abs()
                .partial_cmp(&(b.1.r - inside).abs())
                .expect("finite r")
        })?
        .0;
    if points[i].b_prime <= 1.0 {
        return None;
    }
    let cross = |p: &SweepPoint, q: &SweepPoint| {
        p.r + (1.0 - p.b_prime) * (q.r - p.r) / (q.b_prime - p.b_prime)
    };
    let mut lo = i;
    while lo > 0 && points[lo - 1].b_prime > 1.0 {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < points.len() && points[hi + 1].b_prime > 1.0 {
        hi += 1;
    }
    let left = if lo == 0 {
        points[0].r
    } else {
        cross(&points[lo - 1], &points[lo])
    };
    let right = if hi + 1 == points.len() {
        points[hi].r
    } else {
        cross(&points[hi], &points[hi + 1])
    };
    Some((left, right))
}
