//! Command-line front end. Every run resolves its configuration, writes its
//! artifacts into the output directory and finishes with `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{intensity_histogram, psd, AnalysisError, ExpFit, OpticsConfig};
use crate::config::{ConfigError, RunConfig, TrajectoryFormat};
use crate::dynamics::{detect_onset, detect_onset_series, integrate_stream, two_pulse_experiment, OnsetReport};
use crate::io::{self, IoError, Manifest, Table, MANIFEST_SCHEMA};
use crate::model::{mhz_to_rad_per_us, rad_per_us_to_mhz, DensityState};
use crate::plot::{category_map, chart, Series, Style};
use crate::stability::{classify_branches, phase_diagram, threshold_curve, CellClass, PhaseDiagram, Verdict};
use crate::steady::sweep_branches;

#[derive(Debug, Parser)]
#[command(name = "mfi", version, about = "Mean-field four-level instability toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set model.delta3_mhz=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_plots: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Steady states and their stability along a drive sweep.
    Steady,
    /// Cell classification over a detuning × drive grid.
    PhaseDiagram,
    /// Instability threshold power against laser frequency.
    Threshold,
    /// Time integration of a drive sequence, with optional PSD and histogram.
    Simulate,
    /// Drive–wait–drive onset delays and their exponential fit.
    TwoPulse,
    /// Re-process an existing trajectory file.
    Analyze {
        /// Trajectory file (CSV or MFI1); defaults to `analysis.input`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Steady => "steady",
            Command::PhaseDiagram => "phase-diagram",
            Command::Threshold => "threshold",
            Command::Simulate => "simulate",
            Command::TwoPulse => "two-pulse",
            Command::Analyze { .. } => "analyze",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

impl From<IoError> for RunError {
    fn from(e: IoError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

impl Cli {
    /// Dedicated flags sit above `--set`, which sits above the file.
    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("run.seed={s}"));
        }
        if let Some(j) = self.jobs {
            overrides.push(format!("run.jobs={j}"));
        }
        if let Some(o) = &self.out {
            overrides.push(format!("output.dir={}", toml_string(&o.display().to_string())));
        }
        if self.no_plots {
            overrides.push("output.plots=false".into());
        }
        if let Command::Analyze { input: Some(p) } = &self.command {
            overrides.push(format!("analysis.input={}", toml_string(&p.display().to_string())));
        }
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Parses `args`, runs, prints errors to stderr and returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            eprintln!("wrote {}", out.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one subcommand and returns the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf, RunError> {
    let cfg = cli.resolve()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.jobs).build().map_err(runtime)?;
    let out = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let mut w = Writer { dir: out.clone(), plots: cfg.output.plots, artifacts: Vec::new() };
    pool.install(|| match &cli.command {
        Command::Steady => steady(&cfg, &mut w),
        Command::PhaseDiagram => phase(&cfg, &mut w, false),
        Command::Threshold => phase(&cfg, &mut w, true),
        Command::Simulate => simulate(&cfg, &mut w),
        Command::TwoPulse => two_pulse(&cfg, &mut w),
        Command::Analyze { .. } => analyze(&cfg, &mut w),
    })?;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.run.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        artifacts: w.artifacts,
        config: &cfg,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(out)
}

struct Writer {
    dir: PathBuf,
    plots: bool,
    artifacts: Vec<String>,
}

impl Writer {
    fn text(&mut self, name: &str, text: &str) -> Result<(), RunError> {
        io::write_text(&self.dir.join(name), text)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), RunError> {
        io::write_json(&self.dir.join(name), v)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn plot(&mut self, name: &str, svg: impl FnOnce() -> String) -> Result<(), RunError> {
        if self.plots {
            self.text(name, &svg())?;
        }
        Ok(())
    }

    fn table(&mut self, name: &str, t: &Table, binary: bool) -> Result<(), RunError> {
        t.write(&self.dir.join(name), binary)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

fn mhz_grid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| mhz_to_rad_per_us(x)).collect()
}

fn steady(cfg: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    let params = cfg.model.params()?;
    let grid = mhz_grid(&cfg.steady.omega_a_mhz.values("steady.omega_a_mhz")?);
    let mut sets = sweep_branches(&params, &grid, &cfg.scan.scan()?).map_err(runtime)?;
    for set in &mut sets {
        if let Some(e) = &set.error {
            return Err(runtime(format!("at omega_a = {} MHz: {e}", rad_per_us_to_mhz(set.drive))));
        }
        classify_branches(&params, set).map_err(runtime)?;
    }
    w.text("branches.csv", &io::branches_csv(&sets))?;
    w.plot("branches.svg", || {
        let mut by: Vec<(&str, Vec<f64>, Vec<f64>)> =
            vec![("stable", vec![], vec![]), ("unstable", vec![], vec![]), ("marginal", vec![], vec![])];
        for set in &sets {
            for bp in &set.points {
                let k = match bp.stability.as_ref().map(|r| r.verdict) {
                    Some(Verdict::Stable) => 0,
                    Some(Verdict::Unstable) => 1,
                    _ => 2,
                };
                by[k].1.push(rad_per_us_to_mhz(set.drive));
                by[k].2.push(bp.fixed_point.inversion());
            }
        }
        let series: Vec<Series> =
            by.iter().map(|(l, x, y)| Series { label: l, x, y, style: Style::Points }).collect();
        chart("Steady states", "omega_a (MHz)", "inversion w", &series, false)
    })
}

fn class_index(c: CellClass) -> usize {
    match c {
        CellClass::Monostable => 0,
        CellClass::UnstablePresent => 1,
        CellClass::Bistable => 2,
        CellClass::Failed => 5,
    }
}

fn phase(cfg: &RunConfig, w: &mut Writer, threshold_only: bool) -> Result<(), RunError> {
    let params = cfg.model.params()?;
    let deltas = cfg.phase.delta3_mhz.values("phase.delta3_mhz")?;
    let omegas = cfg.phase.omega_a_mhz.values("phase.omega_a_mhz")?;
    let pd: PhaseDiagram =
        phase_diagram(&params, &mhz_grid(&deltas), &mhz_grid(&omegas), &cfg.scan.scan()?).map_err(runtime)?;
    if threshold_only {
        let curve = threshold_curve(&pd);
        w.text("threshold.csv", &io::threshold_csv(&curve))?;
        return w.plot("threshold.svg", || {
            let x: Vec<f64> = curve.points.iter().map(|p| p.f_l_ghz).collect();
            let y: Vec<f64> = curve.points.iter().map(|p| p.power_mw).collect();
            chart(
                "Instability threshold",
                "laser frequency (GHz)",
                "threshold power (mW)",
                &[Series { label: "", x: &x, y: &y, style: Style::Points }],
                false,
            )
        });
    }
    w.text("phase_diagram.csv", &io::phase_csv(&pd))?;
    w.plot("phase_diagram.svg", || {
        category_map(
            "Phase diagram",
            "delta3 (MHz)",
            "omega_a (MHz)",
            &deltas,
            &omegas,
            |i, j| class_index(pd.cell(i, j).class),
            &["monostable", "unstable_present", "bistable"],
        )
    })
}

#[derive(Debug, Serialize)]
struct SegmentOnset {
    segment: usize,
    start_ms: f64,
    #[serde(flatten)]
    report: OnsetReport,
}

#[derive(Debug, Serialize)]
struct SeriesSummary {
    samples: usize,
    sample_rate_mhz: f64,
    transmission_max: f64,
    samples_above_unity: usize,
    spectrum_segment_len: Option<usize>,
    ac_fraction_above_1mhz: Option<f64>,
}

/// PSD and histogram of the transmission after `analysis.start_ms`.
fn series_products(
    cfg: &RunConfig,
    w: &mut Writer,
    times_us: &[f64],
    trans: &[f64],
) -> Result<SeriesSummary, RunError> {
    let fs = if times_us.len() > 1 { 1.0 / (times_us[1] - times_us[0]) } else { 0.0 };
    let start = times_us.partition_point(|&t| t < cfg.analysis.start_ms * 1e3);
    let tail = &trans[start..];
    let mut summary = SeriesSummary {
        samples: tail.len(),
        sample_rate_mhz: fs,
        transmission_max: tail.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        samples_above_unity: tail.iter().filter(|&&t| t > 1.0).count(),
        spectrum_segment_len: None,
        ac_fraction_above_1mhz: None,
    };
    if cfg.analysis.psd {
        let seg = cfg.analysis.segment_len.min(tail.len());
        let sp = psd(tail, fs, seg).map_err(|e: AnalysisError| runtime(e))?;
        summary.spectrum_segment_len = Some(seg);
        summary.ac_fraction_above_1mhz = Some(sp.ac_fraction_above(1.0));
        w.text("spectrum.csv", &io::spectrum_csv(&sp))?;
        w.plot("spectrum.svg", || {
            chart(
                "Transmission PSD",
                "f (MHz)",
                "PSD (1/MHz)",
                &[Series { label: "", x: &sp.f_mhz[1..], y: &sp.psd[1..], style: Style::Line }],
                true,
            )
        })?;
    }
    if cfg.analysis.histogram {
        let h = intensity_histogram(tail, cfg.analysis.hist_bins);
        w.text("histogram.csv", &io::histogram_csv(&h))?;
        w.plot("histogram.svg", || {
            let c: Vec<f64> = h.count.iter().map(|&n| n as f64).collect();
            chart(
                "Transmission histogram",
                "I_out/I_in",
                "count",
                &[Series { label: "", x: &h.bin_center, y: &c, style: Style::Line }],
                false,
            )
        })?;
    }
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    onsets: Vec<SegmentOnset>,
    max_trace_drift: f64,
    min_eigenvalue: f64,
    accepted_steps: u64,
    rejected_steps: u64,
    rhs_evals: u64,
    series: SeriesSummary,
}

fn transmission_plot(times_us: &[f64], trans: &[f64]) -> String {
    let t_ms: Vec<f64> = times_us.iter().map(|t| t * 1e-3).collect();
    chart("Transmission", "t (ms)", "I_out/I_in", &[Series { label: "", x: &t_ms, y: trans, style: Style::Line }], false)
}

fn simulate(cfg: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    let params = cfg.model.params()?;
    let seq = cfg.simulate.sequence()?;
    let noise = cfg.noise()?;
    let optics: OpticsConfig = cfg.optics()?;
    let onset_cfg = cfg.analysis.onset()?;
    let traj = integrate_stream(&DensityState::ground(), &seq, &noise, &params, &cfg.integrator.integrator()?, 0)
        .map_err(runtime)?;

    let table = Table::from_trajectory(&traj, cfg.output.coherences, &optics);
    let binary = cfg.output.format == TrajectoryFormat::Binary;
    w.table(if binary { "trajectory.bin" } else { "trajectory.csv" }, &table, binary)?;
    let trans = traj.transmission(&optics);
    w.plot("trajectory.svg", || transmission_plot(&traj.times, &trans))?;

    let onsets = (0..seq.segments.len())
        .map(|k| SegmentOnset {
            segment: k,
            start_ms: traj.boundaries[k] * 1e-3,
            report: detect_onset(&traj, k, &optics, &onset_cfg),
        })
        .collect();
    let series = series_products(cfg, w, &traj.times, &trans)?;
    let summary = SimulateSummary {
        onsets,
        max_trace_drift: traj.max_trace_drift(),
        min_eigenvalue: traj.min_eigenvalue(),
        accepted_steps: traj.stats.accepted,
        rejected_steps: traj.stats.rejected,
        rhs_evals: traj.stats.rhs_evals,
        series,
    };
    w.json("summary.json", &summary)
}

#[derive(Debug, Serialize)]
struct FitOutput {
    model: &'static str,
    fit: Option<ExpFit>,
    error: Option<String>,
    points: usize,
}

fn two_pulse(cfg: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    let params = cfg.model.params()?;
    let tp = cfg.two_pulse()?;
    let res = two_pulse_experiment(&params, &tp).map_err(runtime)?;
    w.text("two_pulse.csv", &io::two_pulse_csv(&res.rows))?;
    let points = res.rows.iter().filter(|r| r.memory_ms().is_some()).count();
    w.json(
        "two_pulse_fit.json",
        &FitOutput { model: "amplitude*exp(-tw/tau)+offset", fit: res.fit.clone(), error: res.fit_error.clone(), points },
    )?;
    w.plot("two_pulse.svg", || {
        let (x, y): (Vec<f64>, Vec<f64>) = res.rows.iter().filter_map(|r| Some((r.tw_ms, r.memory_ms()?))).unzip();
        let mut series = vec![Series { label: "tau1 - tau2", x: &x, y: &y, style: Style::Points }];
        let fx: Vec<f64>;
        let fy: Vec<f64>;
        if let (Some(f), Some(&hi)) = (&res.fit, x.iter().max_by(|a, b| a.total_cmp(b))) {
            fx = (0..=200).map(|i| hi * i as f64 / 200.0).collect();
            fy = fx.iter().map(|&t| f.eval(t)).collect();
            series.push(Series { label: "fit", x: &fx, y: &fy, style: Style::Line });
        }
        chart("Two-pulse memory", "T_w (ms)", "tau1 - tau2 (ms)", &series, false)
    })
}

#[derive(Debug, Serialize)]
struct AnalyzeSummary {
    input: String,
    onset: OnsetReport,
    series: SeriesSummary,
}

fn analyze(cfg: &RunConfig, w: &mut Writer) -> Result<(), RunError> {
    if cfg.analysis.input.is_empty() {
        return Err(ConfigError::Invalid { key: "analysis.input".into(), msg: "no trajectory file given".into() }.into());
    }
    let optics = cfg.optics()?;
    let onset_cfg = cfg.analysis.onset()?;
    let path = Path::new(&cfg.analysis.input);
    let table = Table::read(path)?;
    let col = |name: &str| {
        table.column(name).ok_or_else(|| runtime(format!("{}: missing column `{name}`", path.display())))
    };
    let times = col("t_us")?;
    let inv = col("w")?;
    if times.len() < 2 {
        return Err(runtime(format!("{}: need at least two samples", path.display())));
    }
    let trans: Vec<f64> = inv.iter().map(|&x| optics.transmission(x)).collect();
    let onset = detect_onset_series(&times, &trans, &onset_cfg);
    w.plot("trajectory.svg", || transmission_plot(&times, &trans))?;
    let series = series_products(cfg, w, &times, &trans)?;
    w.json("summary.json", &AnalyzeSummary { input: cfg.analysis.input.clone(), onset, series })
}
