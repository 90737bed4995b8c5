//! Run configuration: TOML sections with unit-suffixed keys, strict parsing,
//! `section.key=value` overrides and conversion to internal units.

use serde::{Deserialize, Serialize};

use crate::analysis::OpticsConfig;
use crate::dynamics::{Drive, DriveSequence, IntegratorConfig, NoiseConfig, OnsetConfig, Segment, TwoPulseConfig};
use crate::model::{mhz_to_rad_per_us, ModelParams};
use crate::steady::ScanConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    FourLevel,
    TwoLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub delta2_mhz: f64,
    pub delta3_mhz: f64,
    pub excited_splitting_mhz: f64,
    pub omega_a_mhz: f64,
    pub rabi_ratio: f64,
    pub delta_s_mhz: f64,
    pub t1_ms: f64,
    pub branching: f64,
    pub gamma_spin_per_ms: f64,
    pub gamma_phi_opt_khz: f64,
    pub gamma_phi_spin_khz: f64,
    pub power_to_rabi_mhz: f64,
    pub line_center_ghz: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        use crate::model::defaults as d;
        Self {
            preset: Preset::FourLevel,
            delta2_mhz: d::DELTA2_MHZ,
            delta3_mhz: d::DELTA3_MHZ,
            excited_splitting_mhz: d::EXCITED_SPLITTING_MHZ,
            omega_a_mhz: d::OMEGA_A_MHZ,
            rabi_ratio: d::RABI_RATIO,
            delta_s_mhz: d::DELTA_S_MHZ,
            t1_ms: d::T1_MS,
            branching: d::BRANCHING,
            gamma_spin_per_ms: d::GAMMA_SPIN_PER_MS,
            gamma_phi_opt_khz: d::GAMMA_PHI_OPT_KHZ,
            gamma_phi_spin_khz: d::GAMMA_PHI_SPIN_KHZ,
            power_to_rabi_mhz: d::POWER_TO_RABI_MHZ,
            line_center_ghz: 0.0,
        }
    }
}

impl ModelSection {
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        if !(self.t1_ms.is_finite() && self.t1_ms > 0.0) {
            return Err(invalid("model.t1_ms", "must be > 0"));
        }
        let m = mhz_to_rad_per_us;
        let p = ModelParams {
            delta2: m(self.delta2_mhz),
            delta3: m(self.delta3_mhz),
            delta4: m(self.delta3_mhz + self.excited_splitting_mhz),
            omega_a: 0.0,
            omega_b: 0.0,
            rabi_ratio: self.rabi_ratio,
            delta_s: m(self.delta_s_mhz),
            gamma_opt_decay: 1.0 / (self.t1_ms * 1e3),
            branching: self.branching,
            gamma_spin: self.gamma_spin_per_ms * 1e-3,
            gamma_phi_opt: m(self.gamma_phi_opt_khz * 1e-3),
            gamma_phi_spin: m(self.gamma_phi_spin_khz * 1e-3),
            power_to_rabi: m(self.power_to_rabi_mhz),
            line_center: self.line_center_ghz,
        };
        let p = match self.preset {
            Preset::FourLevel => p,
            Preset::TwoLevel => p.two_level_preset(),
        };
        let p = p.with_drive(m(self.omega_a_mhz));
        p.validate().map_err(|e| invalid("model", e.to_string()))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub grid_points: usize,
    pub bisection_tol: f64,
    pub dedup_tol: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let d = ScanConfig::default();
        Self { grid_points: d.grid_points, bisection_tol: d.bisection_tol, dedup_tol: d.dedup_tol }
    }
}

impl ScanSection {
    pub fn scan(&self) -> Result<ScanConfig, ConfigError> {
        if self.grid_points < 3 {
            return Err(invalid("scan.grid_points", "must be ≥ 3"));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(invalid("scan.bisection_tol", "must be > 0"));
        }
        if !(self.dedup_tol > 0.0) {
            return Err(invalid("scan.dedup_tol", "must be > 0"));
        }
        Ok(ScanConfig { grid_points: self.grid_points, bisection_tol: self.bisection_tol, dedup_tol: self.dedup_tol })
    }
}

/// Closed grid `[min, max]` with `points` entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max < self.min {
            return Err(invalid(key, "need finite min ≤ max"));
        }
        if self.points == 0 {
            return Err(invalid(key, "points must be ≥ 1"));
        }
        if self.points == 1 {
            return Ok(vec![self.min]);
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.min + step * i as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteadySection {
    pub omega_a_mhz: Grid,
}

impl Default for SteadySection {
    fn default() -> Self {
        Self { omega_a_mhz: Grid { min: 0.0, max: 1.0, points: 101 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSection {
    pub delta3_mhz: Grid,
    pub omega_a_mhz: Grid,
}

impl Default for PhaseSection {
    fn default() -> Self {
        Self {
            delta3_mhz: Grid { min: -4.0, max: 10.0, points: 29 },
            omega_a_mhz: Grid { min: 0.02, max: 0.6, points: 30 },
        }
    }
}

/// Piecewise-constant drive. Each segment takes its level from
/// `power_mw` unless `omega_a_mhz` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub segment_ms: Vec<f64>,
    pub power_mw: Vec<f64>,
    pub omega_a_mhz: Vec<f64>,
    pub max_total_ms: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { segment_ms: vec![20.0], power_mw: vec![6.25], omega_a_mhz: Vec::new(), max_total_ms: 100.0 }
    }
}

impl SimulateSection {
    pub fn sequence(&self) -> Result<DriveSequence, ConfigError> {
        let n = self.segment_ms.len();
        if n == 0 {
            return Err(invalid("simulate.segment_ms", "need at least one segment"));
        }
        let drives: Vec<Drive> = if !self.omega_a_mhz.is_empty() {
            if self.omega_a_mhz.len() != n {
                return Err(invalid("simulate.omega_a_mhz", format!("expected {n} entries")));
            }
            self.omega_a_mhz.iter().map(|&o| Drive::OmegaA(mhz_to_rad_per_us(o))).collect()
        } else {
            if self.power_mw.len() != n {
                return Err(invalid("simulate.power_mw", format!("expected {n} entries")));
            }
            self.power_mw.iter().map(|&p| Drive::PowerMw(p)).collect()
        };
        let segs = self.segment_ms.iter().zip(drives).map(|(&d, drive)| Segment { duration_ms: d, drive }).collect();
        DriveSequence::new(segs, self.max_total_ms).map_err(|e| invalid("simulate", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPulseSection {
    pub pulse_ms: f64,
    pub tw_ms: Vec<f64>,
    pub power_mw: f64,
}

impl Default for TwoPulseSection {
    fn default() -> Self {
        Self { pulse_ms: 20.0, tw_ms: vec![1.0, 5.0, 10.0, 20.0, 50.0, 110.0], power_mw: 6.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub amplitude: f64,
    pub kick_interval_us: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let d = NoiseConfig::default();
        Self { amplitude: d.amplitude, kick_interval_us: d.kick_interval_us }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    pub rtol: f64,
    pub atol: f64,
    /// Absent means unbounded.
    pub max_step_us: Option<f64>,
    pub min_step_us: f64,
    pub sample_interval_us: f64,
    pub max_samples: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            rtol: d.rtol,
            atol: d.atol,
            max_step_us: None,
            min_step_us: d.min_step_us,
            sample_interval_us: d.sample_interval_us,
            max_samples: d.max_samples,
        }
    }
}

impl IntegratorSection {
    pub fn integrator(&self) -> Result<IntegratorConfig, ConfigError> {
        for (k, v) in [
            ("integrator.rtol", self.rtol),
            ("integrator.atol", self.atol),
            ("integrator.min_step_us", self.min_step_us),
            ("integrator.sample_interval_us", self.sample_interval_us),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(k, "must be finite and > 0"));
            }
        }
        if let Some(h) = self.max_step_us {
            if !(h > self.min_step_us) {
                return Err(invalid("integrator.max_step_us", "must exceed min_step_us"));
            }
        }
        if self.max_samples < 2 {
            return Err(invalid("integrator.max_samples", "must be ≥ 2"));
        }
        Ok(IntegratorConfig {
            rtol: self.rtol,
            atol: self.atol,
            max_step_us: self.max_step_us.unwrap_or(f64::INFINITY),
            min_step_us: self.min_step_us,
            sample_interval_us: self.sample_interval_us,
            max_samples: self.max_samples,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub psd: bool,
    pub histogram: bool,
    pub segment_len: usize,
    pub hist_bins: usize,
    /// Samples before this time are excluded from PSD and histogram.
    pub start_ms: f64,
    pub window_ms: f64,
    pub threshold: f64,
    /// Trajectory file for `analyze`.
    pub input: String,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let o = OnsetConfig::default();
        Self {
            psd: true,
            histogram: true,
            segment_len: crate::analysis::DEFAULT_SEGMENT_LEN,
            hist_bins: 100,
            start_ms: 0.0,
            window_ms: o.window_ms,
            threshold: o.threshold,
            input: String::new(),
        }
    }
}

impl AnalysisSection {
    pub fn onset(&self) -> Result<OnsetConfig, ConfigError> {
        if !(self.window_ms.is_finite() && self.window_ms > 0.0) {
            return Err(invalid("analysis.window_ms", "must be > 0"));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(invalid("analysis.threshold", "must be > 0"));
        }
        Ok(OnsetConfig { window_ms: self.window_ms, threshold: self.threshold })
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.segment_len < 8 {
            return Err(invalid("analysis.segment_len", "must be ≥ 8"));
        }
        if self.hist_bins == 0 {
            return Err(invalid("analysis.hist_bins", "must be ≥ 1"));
        }
        if !(self.start_ms.is_finite() && self.start_ms >= 0.0) {
            return Err(invalid("analysis.start_ms", "must be ≥ 0"));
        }
        self.onset().map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub format: TrajectoryFormat,
    pub coherences: bool,
    pub plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into(), format: TrajectoryFormat::Csv, coherences: false, plots: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    /// 0 means one worker per core.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub scan: ScanSection,
    pub steady: SteadySection,
    pub phase: PhaseSection,
    pub simulate: SimulateSection,
    pub two_pulse: TwoPulseSection,
    pub noise: NoiseSection,
    pub integrator: IntegratorSection,
    pub optics: OpticsConfig,
    pub analysis: AnalysisSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// File values over defaults, then overrides over file values. A `.json`
    /// path is read as a run manifest and its `config` entry is used.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = Self::default().table();
        let file = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::Io { path: p.display().to_string(), msg: e.to_string() })?;
                if p.extension().is_some_and(|e| e == "json") {
                    manifest_table(&text)?
                } else {
                    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse(e.to_string()))?
                }
            }
        };
        merge(&mut table, file);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            ConfigError::Parse(e.message().to_string())
        })?;
        Ok(cfg)
    }

    pub fn noise(&self) -> Result<NoiseConfig, ConfigError> {
        let n = NoiseConfig {
            amplitude: self.noise.amplitude,
            kick_interval_us: self.noise.kick_interval_us,
            seed: self.run.seed,
        };
        n.validate().map_err(|e| invalid("noise", e.to_string()))?;
        Ok(n)
    }

    pub fn optics(&self) -> Result<OpticsConfig, ConfigError> {
        self.optics.validate().map_err(|e| invalid("optics", e.to_string()))?;
        Ok(self.optics)
    }

    pub fn two_pulse(&self) -> Result<TwoPulseConfig, ConfigError> {
        let s = &self.two_pulse;
        if !(s.pulse_ms.is_finite() && s.pulse_ms > 0.0) {
            return Err(invalid("two_pulse.pulse_ms", "must be > 0"));
        }
        if s.tw_ms.is_empty() || s.tw_ms.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid("two_pulse.tw_ms", "need one or more positive wait times"));
        }
        if !(s.power_mw.is_finite() && s.power_mw >= 0.0) {
            return Err(invalid("two_pulse.power_mw", "must be ≥ 0"));
        }
        Ok(TwoPulseConfig {
            pulse_ms: s.pulse_ms,
            tw_ms: s.tw_ms.clone(),
            drive: Drive::PowerMw(s.power_mw),
            noise: self.noise()?,
            integrator: self.integrator.integrator()?,
            optics: self.optics()?,
            onset: self.analysis.onset()?,
        })
    }

    /// Checks every section so that a bad key fails before any computation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.params()?;
        self.scan.scan()?;
        self.steady.omega_a_mhz.values("steady.omega_a_mhz")?;
        self.phase.delta3_mhz.values("phase.delta3_mhz")?;
        self.phase.omega_a_mhz.values("phase.omega_a_mhz")?;
        self.simulate.sequence()?;
        self.two_pulse()?;
        self.analysis.check()?;
        Ok(())
    }

    fn table(&self) -> toml::Table {
        match toml::Value::try_from(self) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn manifest_table(text: &str) -> Result<toml::Table, ConfigError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let cfg = v.get("config").ok_or_else(|| ConfigError::Parse("manifest has no `config` entry".into()))?;
    let cfg: RunConfig = serde_json::from_value(cfg.clone()).map_err(|e| ConfigError::Parse(e.to_string()))?;
    match toml::Value::try_from(cfg) {
        Ok(toml::Value::Table(t)) => Ok(t),
        _ => Err(ConfigError::Parse("manifest config is not a table".into())),
    }
}

/// Recursive overlay; tables merge key by key, everything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `section.key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::Override(spec.into()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| invalid(path, "not a section"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
