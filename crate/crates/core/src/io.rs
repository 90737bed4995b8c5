//! Output files: CSV tables, the `MFI1` binary trajectory frame and the run
//! manifest.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::{Histogram, OpticsConfig, Spectrum};
use crate::dynamics::{Trajectory, TwoPulseRow};
use crate::model::{rad_per_us_to_mhz, DensityState, PAIRS};
use crate::stability::{PhaseDiagram, ThresholdCurve};
use crate::steady::BranchSet;

pub const MAGIC: &[u8; 4] = b"MFI1";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.display().to_string(), source }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(fs_err(path))
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn branches_csv(sets: &[BranchSet]) -> String {
    let mut s = String::from(
        "omega_a_mhz,root_index,s_mhz,rho11,rho22,rho33,rho44,residual,stability_verdict,max_re_per_us,leading_mode\n",
    );
    for set in sets {
        for (k, bp) in set.points.iter().enumerate() {
            let fp = &bp.fixed_point;
            let p = fp.state.populations();
            let (verdict, max_re, mode) = match &bp.stability {
                Some(r) => (r.verdict.as_str(), num(r.max_re), r.leading.as_str()),
                None => ("", String::new(), ""),
            };
            let _ = writeln!(
                s,
                "{},{k},{},{},{},{},{},{},{verdict},{max_re},{mode}",
                num(rad_per_us_to_mhz(set.drive)),
                num(rad_per_us_to_mhz(fp.shift)),
                num(p[0]),
                num(p[1]),
                num(p[2]),
                num(p[3]),
                num(fp.residual),
            );
        }
    }
    s
}

pub fn phase_csv(pd: &PhaseDiagram) -> String {
    let width = pd.cells.iter().map(|c| c.n_roots()).max().unwrap_or(0).max(1);
    let mut s = String::from("delta3_mhz,omega_a_mhz,cell_class,n_roots");
    for k in 1..=width {
        let _ = write!(s, ",max_re_{k}");
    }
    s.push('\n');
    for c in &pd.cells {
        let _ = write!(
            s,
            "{},{},{},{}",
            num(rad_per_us_to_mhz(c.delta3)),
            num(rad_per_us_to_mhz(c.omega_a)),
            c.class.as_str(),
            c.n_roots()
        );
        for k in 0..width {
            s.push(',');
            if let Some(r) = c.roots.get(k) {
                s.push_str(&num(r.report.max_re));
            }
        }
        s.push('\n');
    }
    s
}

pub fn threshold_csv(curve: &ThresholdCurve) -> String {
    let mut s = String::from("f_l_ghz,threshold_mw\n");
    for p in &curve.points {
        let _ = writeln!(s, "{},{}", num(p.f_l_ghz), num(p.power_mw));
    }
    s
}

pub fn two_pulse_csv(rows: &[TwoPulseRow]) -> String {
    let mut s = String::from("tw_ms,tau1_ms,tau2_ms,memory_ms,onset_missing\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            num(r.tw_ms),
            opt(r.tau1_ms),
            opt(r.tau2_ms),
            opt(r.memory_ms()),
            r.onset_missing
        );
    }
    s
}

pub fn spectrum_csv(sp: &Spectrum) -> String {
    let mut s = String::from("f_mhz,psd\n");
    for (f, p) in sp.f_mhz.iter().zip(&sp.psd) {
        let _ = writeln!(s, "{},{}", num(*f), num(*p));
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_center,count\n");
    for (c, n) in h.bin_center.iter().zip(&h.count) {
        let _ = writeln!(s, "{},{n}", num(*c));
    }
    s
}

/// Column names of a trajectory table.
pub fn trajectory_columns(coherences: bool) -> Vec<String> {
    let mut cols: Vec<String> = ["t_us", "rho11", "rho22", "rho33", "rho44"].iter().map(|s| s.to_string()).collect();
    if coherences {
        for (i, j) in PAIRS {
            cols.push(format!("re_rho{}{}", i + 1, j + 1));
            cols.push(format!("im_rho{}{}", i + 1, j + 1));
        }
    }
    cols.push("w".into());
    cols.push("transmission".into());
    cols
}

fn trajectory_row(t: f64, x: &DensityState, coherences: bool, optics: &OpticsConfig) -> Vec<f64> {
    let mut row = vec![t];
    row.extend_from_slice(&x.populations());
    if coherences {
        row.extend(x.coords.iter().skip(4).copied());
    }
    let w = x.inversion();
    row.push(w);
    row.push(optics.transmission(w));
    row
}

/// Row-major table read back from a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn from_trajectory(traj: &Trajectory, coherences: bool, optics: &OpticsConfig) -> Self {
        let rows = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(&t, x)| trajectory_row(t, &DensityState::new(*x), coherences, optics))
            .collect();
        Self { columns: trajectory_columns(coherences), rows }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| num(*v)).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// `MFI1`, column count (u32), row count (u64), newline-separated column
    /// names (u32 length prefix), then row-major f64 values; all little-endian.
    pub fn to_binary(&self) -> Vec<u8> {
        let names = self.columns.join("\n");
        let mut out = Vec::with_capacity(24 + names.len() + self.rows.len() * self.columns.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.columns.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        out.extend_from_slice(names.as_bytes());
        for r in &self.rows {
            for v in r {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write(&self, path: &Path, binary: bool) -> Result<(), IoError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(fs_err(path))?);
        if binary {
            f.write_all(&self.to_binary()).map_err(fs_err(path))?;
        } else {
            f.write_all(self.to_csv().as_bytes()).map_err(fs_err(path))?;
        }
        f.flush().map_err(fs_err(path))
    }

    /// Reads either format; binary files are recognized by the magic bytes.
    pub fn read(path: &Path) -> Result<Self, IoError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(fs_err(path))?;
        let bad = |msg: &str| IoError::Format { path: path.display().to_string(), msg: msg.to_string() };
        if bytes.starts_with(MAGIC) {
            Self::from_binary(&bytes).ok_or_else(|| bad("truncated or malformed MFI1 frame"))
        } else {
            let text = String::from_utf8(bytes).map_err(|_| bad("not UTF-8 and no MFI1 magic"))?;
            Self::from_csv(&text).map_err(|m| bad(&m))
        }
    }

    fn from_binary(b: &[u8]) -> Option<Self> {
        let u32_at = |i: usize| Some(u32::from_le_bytes(b.get(i..i + 4)?.try_into().ok()?));
        let ncols = u32_at(4)? as usize;
        let nrows = u64::from_le_bytes(b.get(8..16)?.try_into().ok()?) as usize;
        let nlen = u32_at(16)? as usize;
        let names = std::str::from_utf8(b.get(20..20 + nlen)?).ok()?;
        let columns: Vec<String> = names.split('\n').map(str::to_string).collect();
        if columns.len() != ncols {
            return None;
        }
        let data = b.get(20 + nlen..)?;
        if data.len() != nrows.checked_mul(ncols)?.checked_mul(8)? {
            return None;
        }
        let vals: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let rows = if ncols == 0 { Vec::new() } else { vals.chunks(ncols).map(<[f64]>::to_vec).collect() };
        Some(Self { columns, rows })
    }

    fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let columns: Vec<String> = lines.next().ok_or("empty file")?.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", n + 2))?;
            if r.len() != columns.len() {
                return Err(format!("line {}: expected {} fields", n + 2, columns.len()));
            }
            rows.push(r);
        }
        Ok(Self { columns, rows })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub schema: u32,
    pub subcommand: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
    pub config: &'a C,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| IoError::Format { path: path.display().to_string(), msg: e.to_string() })?;
    text.push('\n');
    write_text(path, &text)
}
