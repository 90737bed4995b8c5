//! Observables derived from trajectories: Beer–Lambert transmission proxy,
//! Welch power spectra, intensity histograms and least-squares fits.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

pub const DEFAULT_REFLECTIVITY: f64 = 0.988;
pub const DEFAULT_OPTICAL_DEPTH: f64 = 1.0;
pub const DEFAULT_SEGMENT_LEN: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("TooShort: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("invalid optics: {0}")]
    InvalidOptics(&'static str),
    #[error("fit needs at least {needed} points, got {len}")]
    TooFewPoints { len: usize, needed: usize },
    #[error("fit abscissae must be strictly increasing")]
    NotIncreasing,
    #[error("fit input contains non-finite values")]
    NonFinite,
    #[error("SingularFit: design matrix rank-deficient (σ_min/σ_max = {ratio:e})")]
    SingularFit { ratio: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub d0: f64,
    pub passes: u8,
    pub reflectivity: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self { d0: DEFAULT_OPTICAL_DEPTH, passes: 2, reflectivity: DEFAULT_REFLECTIVITY }
    }
}

impl OpticsConfig {
    pub fn single_pass(d0: f64) -> Self {
        Self { d0, passes: 1, reflectivity: DEFAULT_REFLECTIVITY }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.d0.is_finite() && self.d0 >= 0.0) {
            return Err(AnalysisError::InvalidOptics("d0 must be finite and ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.reflectivity) {
            return Err(AnalysisError::InvalidOptics("reflectivity must lie in [0, 1]"));
        }
        if !(self.passes == 1 || self.passes == 2) {
            return Err(AnalysisError::InvalidOptics("passes must be 1 or 2"));
        }
        Ok(())
    }

    /// I_out/I_in for inversion `w`.
    pub fn transmission(&self, w: f64) -> f64 {
        let n = self.passes as i32;
        self.reflectivity.powi(n - 1) * (n as f64 * self.d0 * w).exp()
    }

    /// Inversion at which the output equals the input.
    pub fn unity_gain_inversion(&self) -> f64 {
        let n = self.passes as f64;
        -(n - 1.0) * self.reflectivity.ln() / (n * self.d0)
    }
}

pub fn transmission(inversion: &[f64], opt: &OpticsConfig) -> Vec<f64> {
    inversion.iter().map(|&w| opt.transmission(w)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub f_mhz: Vec<f64>,
    /// One-sided density, units²/MHz. Bin 0 holds the squared mean.
    pub psd: Vec<f64>,
    pub sample_rate_mhz: f64,
    pub segment_len: usize,
    pub n_segments: usize,
    pub window: String,
    pub overlap: f64,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.sample_rate_mhz / self.segment_len as f64
    }

    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.bin_width()
    }

    pub fn ac_power(&self) -> f64 {
        self.psd[1..].iter().sum::<f64>() * self.bin_width()
    }

    pub fn power_above(&self, f_mhz: f64) -> f64 {
        self.f_mhz
            .iter()
            .zip(&self.psd)
            .skip(1)
            .filter(|(f, _)| **f > f_mhz)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.bin_width()
    }

    /// Share of AC power above `f_mhz`; zero for a series without fluctuations.
    pub fn ac_fraction_above(&self, f_mhz: f64) -> f64 {
        let ac = self.ac_power();
        if ac > 0.0 {
            self.power_above(f_mhz) / ac
        } else {
            0.0
        }
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self.psd.iter().enumerate().skip(1).fold((1, f64::MIN), |acc, (i, &p)| {
            if p > acc.1 {
                (i, p)
            } else {
                acc
            }
        });
        self.f_mhz[i]
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate with a periodic Hann window and 50% overlap. The global
/// mean is removed before segmenting and reported in the DC bin, so a
/// constant series has all of its power there.
pub fn psd(series: &[f64], sample_rate_mhz: f64, segment_len: usize) -> Result<Spectrum, AnalysisError> {
    if segment_len < 2 || series.len() < segment_len {
        return Err(AnalysisError::TooShort { len: series.len(), needed: segment_len.max(2) });
    }
    let n = segment_len;
    let step = n / 2;
    let n_segments = (series.len() - n) / step + 1;
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let win = hann(n);
    let win_power: f64 = win.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for s in 0..n_segments {
        let seg = &series[s * step..s * step + n];
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let norm = 1.0 / (sample_rate_mhz * win_power * n_segments as f64);
    let mut psd: Vec<f64> = acc.iter().map(|a| a * norm).collect();
    let last = n_bins - 1;
    for (k, p) in psd.iter_mut().enumerate() {
        if k != 0 && !(n.is_multiple_of(2) && k == last) {
            *p *= 2.0;
        }
    }
    let df = sample_rate_mhz / n as f64;
    psd[0] = mean * mean / df;
    Ok(Spectrum {
        f_mhz: (0..n_bins).map(|k| k as f64 * df).collect(),
        psd,
        sample_rate_mhz,
        segment_len: n,
        n_segments,
        window: "hann".into(),
        overlap: 0.5,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_center: Vec<f64>,
    pub count: Vec<u64>,
    pub bin_width: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.count.iter().sum()
    }

    /// Samples in bins whose centre exceeds `level`.
    pub fn count_above(&self, level: f64) -> u64 {
        self.bin_center.iter().zip(&self.count).filter(|(c, _)| **c > level).map(|(_, n)| n).sum()
    }
}

/// Equal-width bins over `[min, max]` of the finite samples. A constant
/// series occupies the single bin containing its value.
pub fn intensity_histogram(series: &[f64], n_bins: usize) -> Histogram {
    let n_bins = n_bins.max(1);
    let (mut lo, mut hi) = series
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    } else if hi == lo {
        let pad = 0.5 * lo.abs().max(1.0);
        lo -= pad;
        hi += pad;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut count = vec![0u64; n_bins];
    for &v in series.iter().filter(|v| v.is_finite()) {
        let i = (((v - lo) / width) as usize).min(n_bins - 1);
        count[i] += 1;
    }
    Histogram {
        bin_center: (0..n_bins).map(|i| lo + (i as f64 + 0.5) * width).collect(),
        count,
        bin_width: width,
    }
}

/// `y = amplitude·exp(−x/tau) + offset`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub amplitude: f64,
    pub tau: f64,
    pub offset: f64,
    /// False when the data carry no decay (amplitude ≈ 0).
    pub tau_constrained: bool,
    pub residual_norm: f64,
    /// amplitude, tau, offset
    pub covariance_diag: [f64; 3],
}

impl ExpFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-x / self.tau).exp() + self.offset
    }
}

/// `y = amplitude·exp(−4 ln2 (x−center)²/fwhm²) + offset`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual_norm: f64,
    /// center, fwhm, amplitude, offset
    pub covariance_diag: [f64; 4],
}

impl GaussFit {
    pub fn eval(&self, x: f64) -> f64 {
        gaussian(&SVector::from([self.center, self.fwhm, self.amplitude, self.offset]), x).0
    }
}

const RANK_TOL: f64 = 1e-12;
const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

fn check_input(x: &[f64], y: &[f64], needed: usize) -> Result<(), AnalysisError> {
    if x.len() != y.len() || x.len() < needed {
        return Err(AnalysisError::TooFewPoints { len: x.len().min(y.len()), needed });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

fn exponential(p: &SVector<f64, 3>, x: f64) -> (f64, SVector<f64, 3>) {
    let (a, tau, _) = (p[0], p[1], p[2]);
    let e = (-x / tau).exp();
    (a * e + p[2], SVector::from([e, a * e * x / (tau * tau), 1.0]))
}

fn gaussian(p: &SVector<f64, 4>, x: f64) -> (f64, SVector<f64, 4>) {
    let (c, fw, a) = (p[0], p[1], p[2]);
    let u = (x - c) / fw;
    let g = (-FOUR_LN2 * u * u).exp();
    let dc = a * g * 2.0 * FOUR_LN2 * u / fw;
    let dfw = a * g * 2.0 * FOUR_LN2 * u * u / fw;
    (a * g + p[3], SVector::from([dc, dfw, g, 1.0]))
}

struct LmOutcome<const P: usize> {
    p: SVector<f64, P>,
    cost: f64,
    jtj: SMatrix<f64, P, P>,

}

fn normal_equations<const P: usize, M: Fn(&SVector<f64, P>, f64) -> (f64, SVector<f64, P>)>(
    model: &M,
    p: &SVector<f64, P>,
    x: &[f64],
    y: &[f64],
) -> (SMatrix<f64, P, P>, SVector<f64, P>, f64) {
    let mut jtj = SMatrix::<f64, P, P>::zeros();
    let mut jtr = SVector::<f64, P>::zeros();
    let mut cost = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let (f, g) = model(p, xi);
        let r = yi - f;
        cost += r * r;
        jtj += g * g.transpose();
        jtr += g * r;
    }
    (jtj, jtr, cost)
}

fn cost_of<const P: usize, M: Fn(&SVector<f64, P>, f64) -> (f64, SVector<f64, P>)>(
    model: &M,
    p: &SVector<f64, P>,
    x: &[f64],
    y: &[f64],
) -> f64 {
    x.iter().zip(y).map(|(&xi, &yi)| (yi - model(p, xi).0).powi(2)).sum()
}

fn levenberg_marquardt<const P: usize, M: Fn(&SVector<f64, P>, f64) -> (f64, SVector<f64, P>)>(
    model: &M,
    p0: SVector<f64, P>,
    x: &[f64],
    y: &[f64],
) -> LmOutcome<P> {
    let mut p = p0;
    let (mut jtj, mut jtr, mut cost) = normal_equations(model, &p, x, y);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < 1000 && cost > 0.0 {
        iterations += 1;
        let mut a = jtj;
        for i in 0..P {
            a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
            continue;
        };
        let trial = p + delta;
        let trial_cost = cost_of(model, &trial, x, y);
        if trial_cost.is_finite() && trial_cost <= cost {
            let small = delta.iter().zip(trial.iter()).all(|(d, q)| d.abs() <= 1e-15 * q.abs().max(1e-300));
            p = trial;
            (jtj, jtr, cost) = normal_equations(model, &p, x, y);
            lambda = (lambda / 10.0).max(1e-15);
            if small {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }
    }
    LmOutcome { p, cost, jtj }
}

fn rank_ratio<const P: usize>(jtj: &SMatrix<f64, P, P>) -> f64 {
    // singular values of J are square roots of those of JᵀJ; equilibrate columns first
    let d: SVector<f64, P> = jtj.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 0.0 });
    let scaled = DMatrix::from_fn(P, P, |i, j| jtj[(i, j)] * d[i] * d[j]);
    let ev = scaled.symmetric_eigenvalues();
    let max = ev.max();
    if max <= 0.0 {
        return 0.0;
    }
    (ev.min().max(0.0) / max).sqrt()
}

fn covariance_diag<const P: usize>(jtj: &SMatrix<f64, P, P>, cost: f64, n: usize) -> [f64; P] {
    let dof = n.saturating_sub(P).max(1) as f64;
    let s2 = cost / dof;
    match jtj.try_inverse() {
        Some(inv) => std::array::from_fn(|i| inv[(i, i)] * s2),
        None => [f64::INFINITY; P],
    }
}

/// Linear least squares for amplitude and offset at fixed `tau`.
fn exp_linear_part(x: &[f64], y: &[f64], tau: f64) -> Option<(f64, f64, f64)> {
    let n = x.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { (-x[i] / tau).exp() } else { 1.0 });
    let rhs = DVector::from_column_slice(y);
    let svd = design.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-14).ok()?;
    let r = rhs - design * &sol;
    Some((sol[0], sol[1], r.norm_squared()))
}

/// Least-squares fit of `A·exp(−x/τ) + C`.
pub fn fit_exponential(x: &[f64], y: &[f64]) -> Result<ExpFit, AnalysisError> {
    check_input(x, y, 4)?;
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::NotIncreasing);
    }
    let span = x[x.len() - 1] - x[0];
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let y_range = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - y.iter().cloned().fold(f64::INFINITY, f64::min);
    if y_range <= 1e-14 * y_scale {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let resid = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        return Ok(ExpFit {
            amplitude: 0.0,
            tau: f64::NAN,
            offset: mean,
            tau_constrained: false,
            residual_norm: resid,
            covariance_diag: [0.0, f64::INFINITY, 0.0],
        });
    }
    // variable projection over a log grid of time constants seeds the full fit
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for k in 0..=240 {
        let tau = span * 10f64.powf(-3.0 + k as f64 * 6.0 / 240.0);
        if let Some((a, c, rss)) = exp_linear_part(x, y, tau) {
            if best.is_none_or(|b| rss < b.3) {
                best = Some((a, tau, c, rss));
            }
        }
    }
    let (a0, tau0, c0, _) = best.ok_or(AnalysisError::SingularFit { ratio: 0.0 })?;
    let lm = levenberg_marquardt(&exponential, SVector::from([a0, tau0, c0]), x, y);
    let ratio = rank_ratio(&lm.jtj);
    if !(ratio > RANK_TOL) {
        return Err(AnalysisError::SingularFit { ratio });
    }
    Ok(ExpFit {
        amplitude: lm.p[0],
        tau: lm.p[1],
        offset: lm.p[2],
        tau_constrained: true,
        residual_norm: lm.cost.sqrt(),
        covariance_diag: covariance_diag(&lm.jtj, lm.cost, x.len()),
    })
}

/// Least-squares Gaussian peak (or dip) with constant offset.
pub fn fit_gaussian(x: &[f64], y: &[f64]) -> Result<GaussFit, AnalysisError> {
    check_input(x, y, 5)?;
    let mut pts: Vec<(f64, f64)> = x.iter().cloned().zip(y.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sorted_y: Vec<f64> = y.to_vec();
    sorted_y.sort_by(f64::total_cmp);
    let median = sorted_y[sorted_y.len() / 2];
    let (ymin, ymax) = (sorted_y[0], sorted_y[sorted_y.len() - 1]);
    let peak = ymax - median >= median - ymin;
    let (offset0, amp0) = if peak { (ymin, ymax - ymin) } else { (ymax, ymin - ymax) };
    let i_ext = pts
        .iter()
        .enumerate()
        .max_by(|a, b| ((a.1 .1 - offset0) * amp0.signum()).total_cmp(&((b.1 .1 - offset0) * amp0.signum())))
        .map(|(i, _)| i)
        .unwrap();
    let center0 = pts[i_ext].0;
    let half = offset0 + amp0 / 2.0;
    let above = |v: f64| (v - half) * amp0.signum() >= 0.0;
    let lo = pts[..=i_ext].iter().rev().find(|p| !above(p.1)).map_or(pts[0].0, |p| p.0);
    let hi = pts[i_ext..].iter().find(|p| !above(p.1)).map_or(pts[pts.len() - 1].0, |p| p.0);
    let span = pts[pts.len() - 1].0 - pts[0].0;
    let fwhm0 = (hi - lo).max(span / pts.len() as f64).max(1e-300);
    let mut lm = levenberg_marquardt(&gaussian, SVector::from([center0, fwhm0, amp0, offset0]), x, y);
    lm.p[1] = lm.p[1].abs();
    let ratio = rank_ratio(&lm.jtj);
    if !(ratio > RANK_TOL) {
        return Err(AnalysisError::SingularFit { ratio });
    }
    Ok(GaussFit {
        center: lm.p[0],
        fwhm: lm.p[1],
        amplitude: lm.p[2],
        offset: lm.p[3],
        residual_norm: lm.cost.sqrt(),
        covariance_diag: covariance_diag(&lm.jtj, lm.cost, x.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn transmission_examples() {
        assert!((OpticsConfig::single_pass(1.0).transmission(-1.0) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(OpticsConfig::single_pass(3.7).transmission(0.0), 1.0);
        let dp = OpticsConfig { d0: 1.0, passes: 2, reflectivity: 0.988 };
        assert!((dp.transmission(0.1) - 0.988 * 0.2f64.exp()).abs() < 1e-15);
        assert!(dp.transmission(0.1) > 1.0);
        let w1 = dp.unity_gain_inversion();
        assert!((dp.transmission(w1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn optics_validation() {
        assert!(OpticsConfig { d0: -1.0, ..Default::default() }.validate().is_err());
        assert!(OpticsConfig { reflectivity: 1.1, ..Default::default() }.validate().is_err());
        assert!(OpticsConfig { passes: 3, ..Default::default() }.validate().is_err());
        assert!(OpticsConfig::default().validate().is_ok());
    }

    #[test]
    fn sine_peak() {
        let fs = 100.0;
        let x: Vec<f64> = (0..1 << 16).map(|i| (2.0 * std::f64::consts::PI * i as f64 / fs).sin()).collect();
        let s = psd(&x, fs, 4096).unwrap();
        assert!((s.peak_frequency() - 1.0).abs() <= s.bin_width());
        let mut sorted = s.psd[1..].to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let peak = s.psd.iter().cloned().fold(0.0, f64::max);
        assert!(10.0 * (peak / median).log10() >= 30.0);
    }

    #[test]
    fn constant_series_is_all_dc() {
        let s = psd(&vec![0.7; 5000], 10.0, 1024).unwrap();
        assert!(s.ac_power() < 1e-25 * s.total_power());
        assert!((s.total_power() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn too_short() {
        assert!(matches!(psd(&[1.0; 10], 1.0, 16), Err(AnalysisError::TooShort { .. })));
    }

    #[test]
    fn parseval_white_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = Normal::new(0.0, 1.5).unwrap();
        let x: Vec<f64> = (0..1 << 17).map(|_| n.sample(&mut rng)).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let s = psd(&x, 10.0, 1 << 12).unwrap();
        assert!((s.ac_power() / var - 1.0).abs() < 0.01);
    }

    #[test]
    fn histogram_constant_and_sum() {
        let h = intensity_histogram(&[2.0; 17], 9);
        assert_eq!(h.count.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 17);
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = intensity_histogram(&v, 13);
        assert_eq!(h.total(), 1000);
        assert!(h.count[0] > 0 && h.count[12] > 0);
    }

    #[test]
    fn exponential_exact_recovery() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 4.0).collect();
        let y: Vec<f64> = x.iter().map(|t| (-t / 13.8).exp()).collect();
        let f = fit_exponential(&x, &y).unwrap();
        assert!((f.amplitude - 1.0).abs() < 1e-9);
        assert!((f.tau - 13.8).abs() < 1e-9);
        assert!(f.offset.abs() < 1e-9);
        assert!(f.tau_constrained);
    }

    #[test]
    fn exponential_constant_data() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let f = fit_exponential(&x, &[2.5; 6]).unwrap();
        assert_eq!(f.amplitude, 0.0);
        assert_eq!(f.offset, 2.5);
        assert!(!f.tau_constrained);
    }

    #[test]
    fn exponential_input_checks() {
        assert!(matches!(fit_exponential(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.2]), Err(AnalysisError::TooFewPoints { .. })));
        assert!(matches!(
            fit_exponential(&[0.0, 2.0, 1.0, 3.0], &[1.0, 0.5, 0.2, 0.1]),
            Err(AnalysisError::NotIncreasing)
        ));
    }

    #[test]
    fn exponential_noisy_recovery() {
        let tau = 13.8;
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 3.0 * tau / 9.0).collect();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|t| (-t / tau).exp() + noise.sample(&mut rng)).collect();
            let f = fit_exponential(&x, &y).unwrap();
            worst = worst.max((f.tau / tau - 1.0).abs());
        }
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn gaussian_exact_and_symmetric() {
        let truth = GaussFit {
            center: 0.4,
            fwhm: 2.9,
            amplitude: 3.0,
            offset: -0.2,
            residual_norm: 0.0,
            covariance_diag: [0.0; 4],
        };
        let x: Vec<f64> = (0..41).map(|i| -5.0 + 0.25 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
        let f = fit_gaussian(&x, &y).unwrap();
        assert!((f.center - 0.4).abs() < 1e-9);
        assert!((f.fwhm - 2.9).abs() < 1e-9);
        assert!((f.amplitude - 3.0).abs() < 1e-9);
        assert!((f.offset + 0.2).abs() < 1e-9);

        let y: Vec<f64> = x.iter().map(|v| 1.0 / (1.0 + (v - 0.0) * (v - 0.0))).collect();
        let f = fit_gaussian(&x, &y).unwrap();
        assert!(f.center.abs() < 1e-9);
    }

    #[test]
    fn gaussian_dip() {
        let x: Vec<f64> = (0..30).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.0 - 0.5 * (-FOUR_LN2 * ((v - 12.0) / 6.0).powi(2)).exp()).collect();
        let f = fit_gaussian(&x, &y).unwrap();
        assert!((f.center - 12.0).abs() < 1e-9 && (f.amplitude + 0.5).abs() < 1e-9);
    }

    #[test]
    fn flat_gaussian_is_singular() {
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        assert!(matches!(fit_gaussian(&x, &[1.0; 8]), Err(AnalysisError::SingularFit { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transmission_increases_with_inversion(
            d0 in 0.01..5.0f64, r in 0.01..1.0f64, passes in 1u8..=2, w in -1.0..0.99f64, dw in 1e-3..0.01f64,
        ) {
            let o = OpticsConfig { d0, passes, reflectivity: r };
            prop_assert!(o.transmission(w + dw) > o.transmission(w));
        }

        #[test]
        fn histogram_conserves_counts(v in proptest::collection::vec(-1e3..1e3f64, 1..300), bins in 1usize..50) {
            prop_assert_eq!(intensity_histogram(&v, bins).total(), v.len() as u64);
        }

        #[test]
        fn exponential_fit_is_idempotent(a in 0.2..5.0f64, tau in 2.0..40.0f64, c in -1.0..1.0f64) {
            let x: Vec<f64> = (0..12).map(|i| i as f64 * 5.0).collect();
            let y: Vec<f64> = x.iter().map(|t| a * (-t / tau).exp() + c).collect();
            let f = fit_exponential(&x, &y).unwrap();
            let y2: Vec<f64> = x.iter().map(|&t| f.eval(t)).collect();
            let g = fit_exponential(&x, &y2).unwrap();
            prop_assert!((g.tau - f.tau).abs() < 1e-9 * f.tau.max(1.0));
            prop_assert!((g.amplitude - f.amplitude).abs() < 1e-9);
            prop_assert!((g.offset - f.offset).abs() < 1e-9);
        }

        #[test]
        fn gaussian_fit_is_idempotent(c in -2.0..2.0f64, fw in 0.5..4.0f64, a in 0.5..3.0f64, o in -1.0..1.0f64) {
            let x: Vec<f64> = (0..40).map(|i| -6.0 + 0.3 * i as f64).collect();
            let truth = GaussFit { center: c, fwhm: fw, amplitude: a, offset: o, residual_norm: 0.0, covariance_diag: [0.0; 4] };
            let y: Vec<f64> = x.iter().map(|&v| truth.eval(v)).collect();
            let f = fit_gaussian(&x, &y).unwrap();
            let y2: Vec<f64> = x.iter().map(|&v| f.eval(v)).collect();
            let g = fit_gaussian(&x, &y2).unwrap();
            prop_assert!((g.center - f.center).abs() < 1e-9);
            prop_assert!((g.fwhm - f.fwhm).abs() < 1e-9);
            prop_assert!((g.amplitude - f.amplitude).abs() < 1e-9);
        }
    }
}
