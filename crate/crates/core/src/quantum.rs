//! Analytic quantum predictions for polarization-entangled photon pairs.
//!
//! States are either the Eberhard family `(r|HH⟩ + e^{iφ}|VV⟩)/√(1+r²)`
//! or a general two-qubit density matrix in the basis `HH, HV, VH, VV`.
//! All angles at this interface are degrees from horizontal.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Error, Result};
use crate::settings::{MeasurementSettings, SettingPair};

pub type C64 = Complex64;

const STATE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// H/V
    HV,
    /// D/A (±45°)
    DA,
}

/// Two-qubit density matrix, validated Hermitian, PSD and unit trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct DensityMatrix(Matrix4<C64>);

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    re: [[f64; 4]; 4],
    im: [[f64; 4]; 4],
}

impl TryFrom<MatrixRepr> for DensityMatrix {
    type Error = Error;
    fn try_from(m: MatrixRepr) -> Result<Self> {
        let rho = Matrix4::from_fn(|i, j| C64::new(m.re[i][j], m.im[i][j]));
        DensityMatrix::new(rho)
    }
}

impl From<DensityMatrix> for MatrixRepr {
    fn from(d: DensityMatrix) -> Self {
        let mut re = [[0.0; 4]; 4];
        let mut im = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                re[i][j] = d.0[(i, j)].re;
                im[i][j] = d.0[(i, j)].im;
            }
        }
        MatrixRepr { re, im }
    }
}

impl DensityMatrix {
    pub fn new(rho: Matrix4<C64>) -> Result<Self> {
        if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite matrix entry".into()));
        }
        let herm_err = (rho - rho.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm_err > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (max deviation {herm_err:e})"
            )));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let eig = SymmetricEigen::new(rho);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -STATE_TOL {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite (eigenvalue {min:e})"
            )));
        }
        Ok(DensityMatrix(rho))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    /// Classical mixture (|HH⟩⟨HH| + |VV⟩⟨VV|)/2.
    pub fn mixed_hh_vv() -> Self {
        let mut m = Matrix4::zeros();
        m[(0, 0)] = C64::new(0.5, 0.0);
        m[(3, 3)] = C64::new(0.5, 0.0);
        DensityMatrix(m)
    }

    fn expectation(&self, op: &Matrix4<C64>) -> f64 {
        (self.0 * op).trace().re
    }
}

/// Polarization state of a photon pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", try_from = "StateRepr")]
pub enum PolarizationState {
    EberhardPure { r: f64, phase: f64 },
    DensityMatrix { rho: DensityMatrix },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum StateRepr {
    EberhardPure {
        r: f64,
        #[serde(default)]
        phase: f64,
    },
    DensityMatrix {
        rho: DensityMatrix,
    },
}

impl TryFrom<StateRepr> for PolarizationState {
    type Error = Error;
    fn try_from(s: StateRepr) -> Result<Self> {
        match s {
            StateRepr::EberhardPure { r, phase } => make_eberhard_state(r, phase),
            StateRepr::DensityMatrix { rho } => Ok(PolarizationState::DensityMatrix { rho }),
        }
    }
}

/// `(r|HH⟩ + e^{iφ}|VV⟩)/√(1+r²)`; `phase` in radians.
pub fn make_eberhard_state(r: f64, phase: f64) -> Result<PolarizationState> {
    if !r.is_finite() || r < 0.0 {
        return Err(invalid("r", format!("{r} must be finite and non-negative")));
    }
    if !phase.is_finite() {
        return Err(invalid("phase", "must be finite"));
    }
    Ok(PolarizationState::EberhardPure { r, phase })
}

fn projector(angle_deg: f64) -> Matrix2<C64> {
    let t = angle_deg.to_radians();
    let (s, c) = t.sin_cos();
    Matrix2::new(
        C64::new(c * c, 0.0),
        C64::new(c * s, 0.0),
        C64::new(c * s, 0.0),
        C64::new(s * s, 0.0),
    )
}

/// Transmission operator of a polarizer with finite extinction ratio
/// `T_max/T_min`; `None` is an ideal projector.
pub fn analyzer_operator(angle_deg: f64, extinction_ratio: Option<f64>) -> Matrix2<C64> {
    let p = projector(angle_deg);
    match extinction_ratio {
        None => p,
        Some(er) => {
            let leak = 1.0 / er;
            p + projector(angle_deg + 90.0) * C64::new(leak, 0.0)
        }
    }
}

fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

impl PolarizationState {
    pub fn eberhard(r: f64) -> Result<Self> {
        make_eberhard_state(r, 0.0)
    }

    pub fn from_density_matrix(rho: Matrix4<C64>) -> Result<Self> {
        Ok(PolarizationState::DensityMatrix {
            rho: DensityMatrix::new(rho)?,
        })
    }

    pub fn mixed_hh_vv() -> Self {
        PolarizationState::DensityMatrix {
            rho: DensityMatrix::mixed_hh_vv(),
        }
    }

    /// Normalized (HH, VV) amplitudes of an Eberhard state.
    pub fn amplitudes(&self) -> Option<(C64, C64)> {
        match *self {
            PolarizationState::EberhardPure { r, phase } => {
                let n = (1.0 + r * r).sqrt();
                Some((C64::new(r / n, 0.0), C64::from_polar(1.0 / n, phase)))
            }
            PolarizationState::DensityMatrix { .. } => None,
        }
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        match self {
            PolarizationState::EberhardPure { .. } => {
                let (hh, vv) = self.amplitudes().expect("pure state");
                let v = [hh, C64::new(0.0, 0.0), C64::new(0.0, 0.0), vv];
                DensityMatrix(Matrix4::from_fn(|i, j| v[i] * v[j].conj()))
            }
            PolarizationState::DensityMatrix { rho } => rho.clone(),
        }
    }

    /// Probability that the photon on `arm` passes an analyzer at `angle`.
    pub fn singles_prob(&self, angle: f64, arm: Arm) -> f64 {
        match *self {
            PolarizationState::EberhardPure { r, .. } => {
                let (s, c) = angle.to_radians().sin_cos();
                (r * r * c * c + s * s) / (1.0 + r * r)
            }
            PolarizationState::DensityMatrix { ref rho } => {
                let id = Matrix2::identity();
                let p = projector(angle);
                let op = match arm {
                    Arm::A => kron(&p, &id),
                    Arm::B => kron(&id, &p),
                };
                rho.expectation(&op)
            }
        }
    }

    /// Probability that both photons pass analyzers at `alpha` (A) and `beta` (B).
    pub fn coincidence_prob(&self, alpha: f64, beta: f64) -> f64 {
        match *self {
            PolarizationState::EberhardPure { r, phase } => {
                let (sa, ca) = alpha.to_radians().sin_cos();
                let (sb, cb) = beta.to_radians().sin_cos();
                let amp = C64::new(r * ca * cb, 0.0) + C64::from_polar(sa * sb, phase);
                amp.norm_sqr() / (1.0 + r * r)
            }
            PolarizationState::DensityMatrix { ref rho } => {
                rho.expectation(&kron(&projector(alpha), &projector(beta)))
            }
        }
    }

    /// Joint transmit/block probabilities `[tt, tb, bt, bb]` (A first) for
    /// analyzers with an optional finite extinction ratio.
    pub fn joint_outcomes(&self, alpha: f64, beta: f64, extinction_ratio: Option<f64>) -> [f64; 4] {
        let (p11, p1, p2) = match extinction_ratio {
            None => (
                self.coincidence_prob(alpha, beta),
                self.singles_prob(alpha, Arm::A),
                self.singles_prob(beta, Arm::B),
            ),
            Some(_) => {
                let rho = self.to_density_matrix();
                let ta = analyzer_operator(alpha, extinction_ratio);
                let tb = analyzer_operator(beta, extinction_ratio);
                let id = Matrix2::identity();
                (
                    rho.expectation(&kron(&ta, &tb)),
                    rho.expectation(&kron(&ta, &id)),
                    rho.expectation(&kron(&id, &tb)),
                )
            }
        };
        let tb = (p1 - p11).max(0.0);
        let bt = (p2 - p11).max(0.0);
        let bb = (1.0 - p11 - tb - bt).max(0.0);
        [p11, tb, bt, bb]
    }

    /// Polarization correlation with both analyzer ports read out.
    pub fn correlation_e(&self, alpha: f64, beta: f64) -> f64 {
        self.coincidence_prob(alpha, beta) + self.coincidence_prob(alpha + 90.0, beta + 90.0)
            - self.coincidence_prob(alpha, beta + 90.0)
            - self.coincidence_prob(alpha + 90.0, beta)
    }

    pub fn concurrence(&self) -> f64 {
        match *self {
            PolarizationState::EberhardPure { r, .. } => 2.0 * r / (1.0 + r * r),
            PolarizationState::DensityMatrix { ref rho } => wootters_concurrence(rho),
        }
    }

    /// Coincidence fringe visibility with the fixed analyzer in `basis`;
    /// the larger of the two fixed positions is reported.
    pub fn visibility(&self, basis: Basis) -> f64 {
        let fixed = match basis {
            Basis::HV => 0.0,
            Basis::DA => 45.0,
        };
        [fixed, fixed + 90.0]
            .iter()
            .filter_map(|&f| {
                let same = self.coincidence_prob(f, f);
                let cross = self.coincidence_prob(f, f + 90.0);
                let sum = same + cross;
                (sum > 1e-15).then(|| ((same - cross) / sum).abs())
            })
            .fold(0.0, f64::max)
    }
}

fn wootters_concurrence(rho: &DensityMatrix) -> f64 {
    let m = rho.matrix();
    let mut yy = Matrix4::<C64>::zeros();
    yy[(0, 3)] = C64::new(-1.0, 0.0);
    yy[(1, 2)] = C64::new(1.0, 0.0);
    yy[(2, 1)] = C64::new(1.0, 0.0);
    yy[(3, 0)] = C64::new(-1.0, 0.0);
    let tilde = yy * m.map(|z| z.conj()) * yy;

    let eig = SymmetricEigen::new(*m);
    let sqrt_vals = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    let sqrt_rho =
        eig.eigenvectors * Matrix4::from_diagonal(&sqrt_vals) * eig.eigenvectors.adjoint();
    let r = sqrt_rho * tilde * sqrt_rho;
    let r = (r + r.adjoint()) * C64::new(0.5, 0.0);
    let mut s: Vec<f64> = SymmetricEigen::new(r)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    (s[0] - s[1] - s[2] - s[3]).max(0.0)
}

pub fn singles_prob(state: &PolarizationState, angle: f64, arm: Arm) -> f64 {
    state.singles_prob(angle, arm)
}

pub fn coincidence_prob(state: &PolarizationState, alpha: f64, beta: f64) -> f64 {
    state.coincidence_prob(alpha, beta)
}

pub fn correlation_e(state: &PolarizationState, alpha: f64, beta: f64) -> f64 {
    state.correlation_e(alpha, beta)
}

/// S = E(a,b) + E(a,b′) + E(a′,b) − E(a′,b′).
pub fn chsh_value(state: &PolarizationState, settings: &MeasurementSettings) -> f64 {
    SettingPair::ALL
        .iter()
        .map(|&p| {
            let (x, y) = settings.angles(p);
            p.sign() * state.correlation_e(x, y)
        })
        .sum()
}

pub fn concurrence(state: &PolarizationState) -> f64 {
    state.concurrence()
}

pub fn visibility(state: &PolarizationState, basis: Basis) -> f64 {
    state.visibility(basis)
}

/// Per-arm losses, backgrounds, pair statistics and pulsed-trial timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionModel {
    pub eta_a: f64,
    pub eta_b: f64,
    /// Mean number of pairs produced per trial.
    pub pair_mean: f64,
    /// Unpolarized background-click probability per trial.
    pub bg_a: f64,
    pub bg_b: f64,
    pub pulses_per_trial: u32,
    pub pulse_period_ns: f64,
    pub trial_period_ns: f64,
    pub jitter_sigma_ns: f64,
}

impl Default for DetectionModel {
    /// 75% efficiency, 0.033 pairs/trial, background at 0.2% of the
    /// pair-rate singles, 240 pulses at 120 MHz in a 40 µs trial, 500 ns jitter.
    fn default() -> Self {
        DetectionModel::symmetric(0.75, 0.033, 0.002)
    }
}

impl DetectionModel {
    /// Equal arms; background given as a fraction of the singles rate an
    /// aligned analyzer would see (`bg = fraction · η · μ`).
    pub fn symmetric(eta: f64, pair_mean: f64, bg_fraction: f64) -> Self {
        let bg = bg_fraction * eta * pair_mean;
        DetectionModel {
            eta_a: eta,
            eta_b: eta,
            pair_mean,
            bg_a: bg,
            bg_b: bg,
            pulses_per_trial: 240,
            pulse_period_ns: 1e3 / 120.0,
            trial_period_ns: 40_000.0,
            jitter_sigma_ns: 500.0,
        }
    }

    /// Unit efficiency, one pair per trial, no background.
    pub fn ideal() -> Self {
        DetectionModel::symmetric(1.0, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("eta_a", self.eta_a)?;
        check_probability("eta_b", self.eta_b)?;
        check_probability("bg_a", self.bg_a)?;
        check_probability("bg_b", self.bg_b)?;
        if !(self.pair_mean.is_finite() && self.pair_mean >= 0.0) {
            return Err(invalid("pair_mean", "must be finite and non-negative"));
        }
        for (name, v) in [
            ("pulse_period_ns", self.pulse_period_ns),
            ("trial_period_ns", self.trial_period_ns),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(self.jitter_sigma_ns.is_finite() && self.jitter_sigma_ns >= 0.0) {
            return Err(invalid("jitter_sigma_ns", "must be non-negative"));
        }
        if self.pulses_per_trial == 0 {
            return Err(invalid("pulses_per_trial", "must be at least 1"));
        }
        if self.pulses_per_trial as f64 * self.pulse_period_ns > self.trial_period_ns {
            return Err(invalid(
                "pulses_per_trial",
                "pulse burst is longer than the trial period",
            ));
        }
        Ok(())
    }

    /// Pair rate and backgrounds scaled by a source intensity multiplier.
    pub fn scaled(&self, intensity: f64) -> Self {
        DetectionModel {
            pair_mean: self.pair_mean * intensity,
            bg_a: self.bg_a * intensity,
            bg_b: self.bg_b * intensity,
            ..self.clone()
        }
    }
}

/// How per-trial click probabilities are formed from pair-level probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardModel {
    /// First order in the pair rate; background enters singles only.
    #[default]
    Linearized,
    /// Exact click probabilities for Poissonian pairs plus independent
    /// Bernoulli background, including multi-pair and background accidentals.
    Poisson,
}

/// Per-trial click probabilities for one setting pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialProbabilities {
    pub singles_a: f64,
    pub singles_b: f64,
    pub coincidence: f64,
}

/// Pair-level detection probabilities `(P(A), P(B), P(A∧B))` for one pair.
pub fn pair_detection(
    state: &PolarizationState,
    alpha: f64,
    beta: f64,
    det: &DetectionModel,
) -> (f64, f64, f64) {
    let p1 = state.singles_prob(alpha, Arm::A);
    let p2 = state.singles_prob(beta, Arm::B);
    let p12 = state.coincidence_prob(alpha, beta);
    (det.eta_a * p1, det.eta_b * p2, det.eta_a * det.eta_b * p12)
}

/// Click probabilities per trial given pair-level detection probabilities.
pub fn trial_probabilities_from_pair(
    pair: (f64, f64, f64),
    det: &DetectionModel,
    model: ForwardModel,
) -> TrialProbabilities {
    let (qa, qb, qab) = pair;
    let mu = det.pair_mean;
    match model {
        ForwardModel::Linearized => TrialProbabilities {
            singles_a: mu * qa + det.bg_a,
            singles_b: mu * qb + det.bg_b,
            coincidence: mu * qab,
        },
        ForwardModel::Poisson => {
            let none_a = (1.0 - det.bg_a) * (-mu * qa).exp();
            let none_b = (1.0 - det.bg_b) * (-mu * qb).exp();
            let none_ab = (1.0 - det.bg_a) * (1.0 - det.bg_b) * (-mu * (qa + qb - qab)).exp();
            TrialProbabilities {
                singles_a: 1.0 - none_a,
                singles_b: 1.0 - none_b,
                coincidence: (1.0 - none_a - none_b + none_ab).max(0.0),
            }
        }
    }
}

pub fn trial_probabilities(
    state: &PolarizationState,
    alpha: f64,
    beta: f64,
    det: &DetectionModel,
    model: ForwardModel,
) -> TrialProbabilities {
    trial_probabilities_from_pair(pair_detection(state, alpha, beta, det), det, model)
}

/// Expected CH quantities for a state, settings and detection model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChPrediction {
    pub b: f64,
    pub b_prime: f64,
    pub rows: [TrialProbabilities; 4],
}

pub fn ch_prediction(
    state: &PolarizationState,
    settings: &MeasurementSettings,
    det: &DetectionModel,
    model: ForwardModel,
) -> ChPrediction {
    let rows = SettingPair::ALL.map(|p| {
        let (x, y) = settings.angles(p);
        trial_probabilities(state, x, y, det, model)
    });
    ch_from_rows(&rows)
}

/// CH combination of per-row trial probabilities; singles are pooled over
/// both rows sharing the local setting.
pub fn ch_from_rows(rows: &[TrialProbabilities; 4]) -> ChPrediction {
    let coinc: f64 = SettingPair::ALL
        .iter()
        .map(|&p| p.sign() * rows[p.index()].coincidence)
        .sum();
    let s1 = 0.5
        * (rows[SettingPair::AB.index()].singles_a + rows[SettingPair::ABPrime.index()].singles_a);
    let s2 = 0.5
        * (rows[SettingPair::AB.index()].singles_b + rows[SettingPair::APrimeB.index()].singles_b);
    ChPrediction {
        b: coinc - s1 - s2,
        b_prime: coinc / (s1 + s2),
        rows: *rows,
    }
}

/// Expected per-trial CH value, first order in the pair rate.
pub fn ch_value(
    state: &PolarizationState,
    settings: &MeasurementSettings,
    det: &DetectionModel,
) -> f64 {
    ch_prediction(state, settings, det, ForwardModel::Linearized).b
}
