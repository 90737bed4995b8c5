//! Time integration of the mean-field master equation under piecewise
//! constant drive, with seeded coherence noise, onset detection and the
//! drive–wait–drive memory experiment.

mod rk;
mod tableau;

pub use rk::{StepControl, StepStats, Stepper};

use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{fit_exponential, ExpFit, OpticsConfig};
use crate::model::{
    build_superoperators, coords_to_matrix, inversion, matrix_to_coords, CMatrix4, Coords, DensityState,
    ModelParams, ParamError, CompiledFlow, C64, PAIRS,
};

pub const POSITIVITY_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_TOTAL_MS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("StepSizeUnderflow at t = {t_us} µs (h = {h_us:e} µs)")]
    StepSizeUnderflow { t_us: f64, h_us: f64 },
    #[error("PositivityViolation at t = {t_us} µs (ρ + {tol:e}·I is not positive definite)")]
    PositivityViolation { t_us: f64, tol: f64 },
    #[error("invalid drive sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(&'static str),
    #[error("invalid initial state: {0}")]
    InvalidInitial(&'static str),
    #[error(transparent)]
    InvalidParams(#[from] ParamError),
}

/// Drive level of one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drive {
    /// Input power, mW; converted through the model's calibration.
    PowerMw(f64),
    /// Rabi frequency of the primary transition, rad/µs.
    OmegaA(f64),
}

impl Drive {
    pub fn omega_a(&self, params: &ModelParams) -> f64 {
        match *self {
            Drive::PowerMw(p) => params.with_power(p).omega_a,
            Drive::OmegaA(o) => o,
        }
    }

    fn value(&self) -> f64 {
        match *self {
            Drive::PowerMw(v) | Drive::OmegaA(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_ms: f64,
    pub drive: Drive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSequence {
    pub segments: Vec<Segment>,
}

impl DriveSequence {
    pub fn new(segments: Vec<Segment>, max_total_ms: f64) -> Result<Self, DynamicsError> {
        let seq = Self { segments };
        seq.validate(max_total_ms)?;
        Ok(seq)
    }

    pub fn constant(duration_ms: f64, drive: Drive) -> Result<Self, DynamicsError> {
        Self::new(vec![Segment { duration_ms, drive }], f64::INFINITY)
    }

    pub fn validate(&self, max_total_ms: f64) -> Result<(), DynamicsError> {
        if self.segments.is_empty() {
            return Err(DynamicsError::InvalidSequence("no segments".into()));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration_ms.is_finite() && s.duration_ms > 0.0) {
                return Err(DynamicsError::InvalidSequence(format!("segment {i}: duration must be > 0")));
            }
            if !(s.drive.value().is_finite() && s.drive.value() >= 0.0) {
                return Err(DynamicsError::InvalidSequence(format!("segment {i}: drive must be finite and ≥ 0")));
            }
        }
        let total = self.total_ms();
        if total > max_total_ms {
            return Err(DynamicsError::InvalidSequence(format!(
                "total duration {total} ms exceeds the limit of {max_total_ms} ms"
            )));
        }
        Ok(())
    }

    pub fn total_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    /// Segment boundaries in µs, starting with 0.
    pub fn boundaries_us(&self) -> Vec<f64> {
        let mut b = vec![0.0];
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.duration_ms;
            b.push(acc * 1e3);
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Rotation angle scale ε of each kick.
    pub amplitude: f64,
    /// µs
    pub kick_interval_us: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { amplitude: 1e-6, kick_interval_us: 0.1, seed: 0 }
    }
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self { amplitude: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(DynamicsError::InvalidNoise("amplitude must be finite and ≥ 0"));
        }
        if !(self.kick_interval_us.is_finite() && self.kick_interval_us > 0.0) {
            return Err(DynamicsError::InvalidNoise("kick interval must be > 0"));
        }
        Ok(())
    }

    /// Independent stream per work item so results do not depend on scheduling.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step_us: f64,
    pub min_step_us: f64,
    pub sample_interval_us: f64,
    pub max_samples: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_step_us: f64::INFINITY,
            min_step_us: 1e-9,
            sample_interval_us: 0.1,
            max_samples: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    fn control(&self) -> StepControl {
        StepControl { rtol: self.rtol, atol: self.atol, max_step: self.max_step_us, min_step: self.min_step_us }
    }

    /// Sample spacing widened so that at most `max_samples` are kept.
    pub fn effective_interval(&self, total_us: f64) -> f64 {
        let cap = self.max_samples.max(2) - 1;
        self.sample_interval_us.max(total_us / cap as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// µs
    pub times: Vec<f64>,
    pub states: Vec<Coords>,
    /// ω_a per sample, rad/µs
    pub drive: Vec<f64>,
    /// Segment boundaries, µs.
    pub boundaries: Vec<f64>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn inversion(&self) -> Vec<f64> {
        self.states.iter().map(inversion).collect()
    }

    pub fn transmission(&self, opt: &OpticsConfig) -> Vec<f64> {
        self.states.iter().map(|x| opt.transmission(inversion(x))).collect()
    }

    pub fn state(&self, i: usize) -> DensityState {
        DensityState::new(self.states[i])
    }

    pub fn last(&self) -> DensityState {
        DensityState::new(*self.states.last().expect("non-empty trajectory"))
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.states.iter().map(|x| (x[0] + x[1] + x[2] + x[3] - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.states.iter().map(|x| DensityState::new(*x).min_eigenvalue()).fold(f64::INFINITY, f64::min)
    }

    /// Sample index range `[start, end]` inside segment `k`, boundaries included.
    pub fn segment_range(&self, k: usize) -> std::ops::Range<usize> {
        let (a, b) = (self.boundaries[k], self.boundaries[k + 1]);
        let start = self.times.partition_point(|&t| t < a - 1e-9);
        let end = self.times.partition_point(|&t| t <= b + 1e-9);
        start..end
    }

    pub fn sample_interval(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }
}

fn positive_within(x: &Coords, tol: f64) -> bool {
    let m: CMatrix4 = coords_to_matrix(x) + CMatrix4::identity() * C64::new(tol, 0.0);
    Cholesky::new(m).is_some()
}

/// `ρ → UρU†` with `U = exp(−iεH)` to second order in ε, where `H` is a
/// random Hermitian matrix with zero diagonal. On a diagonal state the
/// first-order change is confined to the coherences.
fn kick(x: &mut Coords, eps: f64, rng: &mut ChaCha8Rng, dist: &Normal<f64>) {
    let mut h = CMatrix4::zeros();
    for (i, j) in PAIRS {
        let z = C64::new(dist.sample(rng), dist.sample(rng)) * std::f64::consts::FRAC_1_SQRT_2;
        h[(i, j)] = z;
        h[(j, i)] = z.conj();
    }
    let rho = coords_to_matrix(x);
    let c1 = h * rho - rho * h;
    let c2 = h * c1 - c1 * h;
    let out = rho - c1 * C64::new(0.0, eps) - c2 * C64::from(0.5 * eps * eps);
    *x = matrix_to_coords(&out);
    let tr = x[0] + x[1] + x[2] + x[3];
    *x /= tr;
}

pub fn integrate(
    initial: &DensityState,
    seq: &DriveSequence,
    noise: &NoiseConfig,
    params: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, DynamicsError> {
    integrate_stream(initial, seq, noise, params, cfg, 0)
}

/// As [`integrate`], drawing noise from RNG stream `stream`.
pub fn integrate_stream(
    initial: &DensityState,
    seq: &DriveSequence,
    noise: &NoiseConfig,
    params: &ModelParams,
    cfg: &IntegratorConfig,
    stream: u64,
) -> Result<Trajectory, DynamicsError> {
    params.validate()?;
    noise.validate()?;
    seq.validate(f64::INFINITY)?;
    if initial.coords.iter().any(|v| !v.is_finite()) || (initial.trace() - 1.0).abs() > 1e-9 {
        return Err(DynamicsError::InvalidInitial("state must be finite with unit trace"));
    }

    let boundaries = seq.boundaries_us();
    let total = *boundaries.last().unwrap();
    let dt_s = cfg.effective_interval(total);
    let n_expected = (total / dt_s).ceil() as usize + 1;
    let noisy = noise.amplitude > 0.0;
    let dist = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = noise.rng(stream);

    let omegas: Vec<f64> = seq.segments.iter().map(|s| s.drive.omega_a(params)).collect();
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_expected),
        states: Vec::with_capacity(n_expected),
        drive: Vec::with_capacity(n_expected),
        boundaries: boundaries.clone(),
        stats: StepStats::default(),
    };

    let mut x = initial.coords;
    let mut t = 0.0;
    let mut seg = 0;
    let mut flow = CompiledFlow::new(&build_superoperators(&params.with_drive(omegas[0])));
    let mut stepper = Stepper::new(cfg.control());
    let mut k_sample = 1u64;
    let mut k_kick = 1u64;

    traj.times.push(0.0);
    traj.states.push(x);
    traj.drive.push(omegas[0]);

    while t < total {
        let seg_end = boundaries[seg + 1];
        let mut next_sample = k_sample as f64 * dt_s;
        if total - next_sample < 1e-9 * dt_s {
            next_sample = total;
        }
        let next_kick = if noisy { k_kick as f64 * noise.kick_interval_us } else { f64::INFINITY };
        let stop = seg_end.min(next_sample).min(next_kick);

        let rhs = |y: &Coords| flow.rhs(y);
        stepper
            .advance(&rhs, &mut t, &mut x, stop)
            .map_err(|u| DynamicsError::StepSizeUnderflow { t_us: u.t, h_us: u.h })?;

        if stop == next_kick {
            kick(&mut x, noise.amplitude, &mut rng, &dist);
            stepper.invalidate();
            k_kick += 1;
        }
        if stop == seg_end && seg + 1 < seq.segments.len() {
            seg += 1;
            flow = CompiledFlow::new(&build_superoperators(&params.with_drive(omegas[seg])));
            stepper.invalidate();
        }
        if stop == next_sample {
            if !positive_within(&x, POSITIVITY_TOL) {
                return Err(DynamicsError::PositivityViolation { t_us: t, tol: POSITIVITY_TOL });
            }
            traj.times.push(t);
            traj.states.push(x);
            traj.drive.push(omegas[seg]);
            k_sample += 1;
        }
    }
    traj.stats = stepper.stats;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnsetConfig {
    pub window_ms: f64,
    pub threshold: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self { window_ms: 0.05, threshold: 5.0 }
    }
}

pub const ONSET_FLOOR: f64 = 1e-12;
pub const ONSET_REFERENCE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetReport {
    pub tau_ms: Option<f64>,
    pub window_ms: f64,
    pub threshold: f64,
    /// Largest rolling std within the reference part of the segment.
    pub reference: f64,
}

fn window_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Onset on a uniformly sampled series starting at the segment start.
/// Times are µs; the reported delay is the end of the first window whose
/// standard deviation exceeds `threshold·(reference + floor)`.
pub fn detect_onset_series(times_us: &[f64], signal: &[f64], cfg: &OnsetConfig) -> OnsetReport {
    let mut report = OnsetReport { tau_ms: None, window_ms: cfg.window_ms, threshold: cfg.threshold, reference: 0.0 };
    let n = signal.len().min(times_us.len());
    if n < 2 {
        return report;
    }
    let t0 = times_us[0];
    let dt = times_us[1] - times_us[0];
    let m = ((cfg.window_ms * 1e3 / dt).round() as usize).clamp(2, n);
    let ref_end_t = t0 + ONSET_REFERENCE_FRACTION * (times_us[n - 1] - t0);
    // windows ending at index i cover [i+1-m, i]
    let mut last_ref = m - 1;
    while last_ref + 1 < n && times_us[last_ref + 1] <= ref_end_t {
        last_ref += 1;
    }
    report.reference = (m - 1..=last_ref).map(|i| window_std(&signal[i + 1 - m..=i])).fold(0.0, f64::max);
    let limit = cfg.threshold * (report.reference + ONSET_FLOOR);
    report.tau_ms = (last_ref + 1..n)
        .find(|&i| window_std(&signal[i + 1 - m..=i]) > limit)
        .map(|i| (times_us[i] - t0) * 1e-3);
    report
}

/// Onset in segment `segment` of a trajectory, observed through `optics`.
pub fn detect_onset(traj: &Trajectory, segment: usize, optics: &OpticsConfig, cfg: &OnsetConfig) -> OnsetReport {
    let r = traj.segment_range(segment);
    let signal: Vec<f64> = traj.states[r.clone()].iter().map(|x| optics.transmission(inversion(x))).collect();
    let times: Vec<f64> = traj.times[r].iter().map(|t| t - traj.boundaries[segment]).collect();
    detect_onset_series(&times, &signal, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPulseConfig {
    pub pulse_ms: f64,
    pub tw_ms: Vec<f64>,
    pub drive: Drive,
    pub noise: NoiseConfig,
    pub integrator: IntegratorConfig,
    pub optics: OpticsConfig,
    pub onset: OnsetConfig,
}

impl Default for TwoPulseConfig {
    fn default() -> Self {
        Self {
            pulse_ms: 20.0,
            tw_ms: vec![1.0, 5.0, 10.0, 20.0, 50.0, 110.0],
            drive: Drive::PowerMw(6.25),
            noise: NoiseConfig::default(),
            integrator: IntegratorConfig::default(),
            optics: OpticsConfig::default(),
            onset: OnsetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPulseRow {
    pub tw_ms: f64,
    pub tau1_ms: Option<f64>,
    pub tau2_ms: Option<f64>,
    /// Set when either pulse shows no onset.
    pub onset_missing: bool,
}

impl TwoPulseRow {
    pub fn memory_ms(&self) -> Option<f64> {
        Some(self.tau1_ms? - self.tau2_ms?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPulseResult {
    pub rows: Vec<TwoPulseRow>,
    /// Exponential fit of τ1−τ2 against the wait time.
    pub fit: Option<ExpFit>,
    pub fit_error: Option<String>,
}

pub fn two_pulse_row(
    params: &ModelParams,
    cfg: &TwoPulseConfig,
    tw_ms: f64,
    stream: u64,
) -> Result<TwoPulseRow, DynamicsError> {
    let seq = DriveSequence::new(
        vec![
            Segment { duration_ms: cfg.pulse_ms, drive: cfg.drive },
            Segment { duration_ms: tw_ms, drive: Drive::OmegaA(0.0) },
            Segment { duration_ms: cfg.pulse_ms, drive: cfg.drive },
        ],
        f64::INFINITY,
    )?;
    let traj = integrate_stream(&DensityState::ground(), &seq, &cfg.noise, params, &cfg.integrator, stream)?;
    let tau1 = detect_onset(&traj, 0, &cfg.optics, &cfg.onset).tau_ms;
    let tau2 = detect_onset(&traj, 2, &cfg.optics, &cfg.onset).tau_ms;
    Ok(TwoPulseRow { tw_ms, tau1_ms: tau1, tau2_ms: tau2, onset_missing: tau1.is_none() || tau2.is_none() })
}

/// Drive–wait–drive runs for every wait time, in parallel; row `i` uses
/// noise stream `i`.
pub fn two_pulse_experiment(params: &ModelParams, cfg: &TwoPulseConfig) -> Result<TwoPulseResult, DynamicsError> {
    let rows = cfg
        .tw_ms
        .par_iter()
        .enumerate()
        .map(|(i, &tw)| two_pulse_row(params, cfg, tw, i as u64))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.tw_ms, r.memory_ms()?))).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (fit, fit_error) = match fit_exponential(&x, &y) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(TwoPulseResult { rows, fit, fit_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mhz_to_rad_per_us;

    fn free(duration_ms: f64) -> DriveSequence {
        DriveSequence::constant(duration_ms, Drive::OmegaA(0.0)).unwrap()
    }

    #[test]
    fn excited_decay_matches_lifetime() {
        let p = ModelParams::default();
        let t1_ms = 1.0 / p.gamma_opt_decay * 1e-3;
        let traj = integrate(
            &DensityState::diagonal([0.0, 0.0, 1.0, 0.0]),
            &free(t1_ms),
            &NoiseConfig::off(),
            &p,
            &IntegratorConfig { sample_interval_us: 10.0, ..Default::default() },
        )
        .unwrap();
        let last = traj.last();
        assert!((traj.times.last().unwrap() - t1_ms * 1e3).abs() < 1e-9);
        let rel = (last.populations()[2] / (-1f64).exp() - 1.0).abs();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn sequence_validation() {
        let d = Drive::OmegaA(1.0);
        assert!(DriveSequence::new(vec![], 100.0).is_err());
        assert!(DriveSequence::new(vec![Segment { duration_ms: 0.0, drive: d }], 100.0).is_err());
        assert!(DriveSequence::new(vec![Segment { duration_ms: 60.0, drive: d }; 2], 100.0).is_err());
        assert!(DriveSequence::new(vec![Segment { duration_ms: 40.0, drive: d }; 2], DEFAULT_MAX_TOTAL_MS).is_ok());
        assert!(DriveSequence::new(vec![Segment { duration_ms: 1.0, drive: Drive::PowerMw(-1.0) }], 100.0).is_err());
    }

    #[test]
    fn samples_are_decimated() {
        let cfg = IntegratorConfig { sample_interval_us: 0.1, max_samples: 1001, ..Default::default() };
        let traj = integrate(&DensityState::ground(), &free(1.0), &NoiseConfig::off(), &ModelParams::default(), &cfg)
            .unwrap();
        assert!(traj.len() <= 1001);
        assert!((traj.sample_interval() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitary_limit_conserves_purity() {
        let p = ModelParams {
            gamma_opt_decay: 0.0,
            gamma_spin: 0.0,
            gamma_phi_opt: 0.0,
            gamma_phi_spin: 0.0,
            ..ModelParams::default()
        }
        .with_detuning(mhz_to_rad_per_us(2.0))
        .with_drive(mhz_to_rad_per_us(0.5));
        let start = DensityState::diagonal([0.9, 0.1, 0.0, 0.0]);
        let traj = integrate(
            &start,
            &DriveSequence::constant(0.02, Drive::OmegaA(p.omega_a)).unwrap(),
            &NoiseConfig::off(),
            &p,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let p0 = start.purity();
        for i in 0..traj.len() {
            assert!((traj.state(i).purity() - p0).abs() < 1e-8, "{} {}", traj.times[i], traj.state(i).purity() - p0);
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = ModelParams::default().with_detuning(mhz_to_rad_per_us(5.0));
        let seq = DriveSequence::constant(0.02, Drive::OmegaA(mhz_to_rad_per_us(0.25))).unwrap();
        let noise = NoiseConfig { seed: 9, ..Default::default() };
        let cfg = IntegratorConfig::default();
        let a = integrate(&DensityState::ground(), &seq, &noise, &p, &cfg).unwrap();
        let b = integrate(&DensityState::ground(), &seq, &noise, &p, &cfg).unwrap();
        assert_eq!(a.states, b.states);
        let c = integrate_stream(&DensityState::ground(), &seq, &noise, &p, &cfg, 1).unwrap();
        assert_ne!(a.states, c.states);
        assert!(a.max_trace_drift() < 1e-12);
    }

    #[test]
    fn noisy_ground_state_stays_physical() {
        let traj = integrate(
            &DensityState::ground(),
            &free(0.5),
            &NoiseConfig { amplitude: 1e-3, ..Default::default() },
            &ModelParams::default(),
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!(traj.min_eigenvalue() >= -1e-7);
        assert!(traj.max_trace_drift() < 1e-12);
        let coh = traj.states.iter().map(|x| x.rows(4, 12).amax()).fold(0.0, f64::max);
        assert!(coh > 1e-5, "{coh}");
    }

    #[test]
    fn onset_constant_is_absent() {
        let t: Vec<f64> = (0..20000).map(|i| i as f64 * 0.1).collect();
        let r = detect_onset_series(&t, &vec![0.3; t.len()], &OnsetConfig::default());
        assert_eq!(r.tau_ms, None);
    }

    #[test]
    fn onset_of_injected_sine() {
        let t: Vec<f64> = (0..20000).map(|i| i as f64 * 0.1).collect();
        let t0 = 1200.0;
        let amp = 100.0 * ONSET_FLOOR;
        let s: Vec<f64> = t
            .iter()
            .map(|&x| if x < t0 { 0.5 } else { 0.6 + amp * (2.0 * std::f64::consts::PI * x).sin() })
            .collect();
        let cfg = OnsetConfig::default();
        let tau = detect_onset_series(&t, &s, &cfg).tau_ms.unwrap();
        assert!((tau - t0 * 1e-3).abs() <= cfg.window_ms, "{tau}");
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseConfig { amplitude: -1.0, ..Default::default() }.validate().is_err());
        assert!(NoiseConfig { kick_interval_us: 0.0, ..Default::default() }.validate().is_err());
    }
}
