//! Self-consistent steady states of the mean-field master equation.
//!
//! The nonlinearity enters only through the scalar inversion `w`, so every
//! steady state is a root of the scalar map
//! `g(s) = Δ_s·w(ρ_ss(s)) − s`, where `ρ_ss(s)` is the kernel of the linear
//! generator `l0 + (s/Δ_s)·l_shift`. A dense scan over `s ∈ [−|Δ_s|, |Δ_s|]`
//! brackets every sign change; bisection and a Newton polish on the full
//! coordinates finish each root.

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    build_superoperators, inversion, inversion_weights, trace_weights, Coords, DensityState,
    Generator, ModelParams, ParamError, SuperOperatorPair,
};
use crate::stability::StabilityReport;

/// Singular values at or below this (1/µs) count toward the kernel.
pub const KERNEL_TOL: f64 = 1e-9;
/// Target max-norm residual of a refined fixed point.
pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SteadyError {
    #[error("DegenerateKernel: generator kernel has dimension {dimension} (singular values <= {KERNEL_TOL})")]
    DegenerateKernel { dimension: usize },
    #[error("NoConvergence: Newton stopped after {iterations} iterations with residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("UnsortedGrid: drive grid must be sorted ascending")]
    UnsortedGrid,
    #[error("InvalidParams: {0}")]
    InvalidParams(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Number of grid points over `[−|Δ_s|, |Δ_s|]`.
    pub grid_points: usize,
    /// Bisection stops once `|g| <` this (rad/µs).
    pub bisection_tol: f64,
    /// Roots closer than this in `s` are merged.
    pub dedup_tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { grid_points: 2001, bisection_tol: 1e-10, dedup_tol: 1e-6 }
    }
}

/// A self-consistent steady state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub state: DensityState,
    /// `Δ_s·w(state)`, rad/µs.
    pub shift: f64,
    /// Max-norm of the nonlinear right-hand side at `state`.
    pub residual: f64,
}

impl FixedPoint {
    pub fn from_state(state: DensityState, sup: &SuperOperatorPair, delta_s: f64) -> Self {
        let residual = sup.rhs(&state.coords).amax();
        Self { state, shift: delta_s * state.inversion(), residual }
    }

    pub fn inversion(&self) -> f64 {
        self.state.inversion()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub fixed_point: FixedPoint,
    /// Filled in by [`crate::stability::classify_branches`].
    pub stability: Option<StabilityReport>,
}

/// All steady states found at one drive value.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    /// `omega_a`, rad/µs.
    pub drive: f64,
    pub points: Vec<BranchPoint>,
    pub error: Option<SteadyError>,
}

/// Solves `l·x = 0, tr x = 1` by replacing the ρ11 row with the trace.
/// Returns `None` when the replaced system is singular.
pub fn solve_trace_replaced(l: &Generator) -> Option<Coords> {
    let mut a = *l;
    a.set_row(0, &trace_weights().transpose());
    let mut b = Coords::zeros();
    b[0] = 1.0;
    a.lu().solve(&b)
}

/// Kernel of a trace-preserving generator, normalized to unit trace.
pub fn linear_steady_state(l: &Generator) -> Result<DensityState, SteadyError> {
    let sv = l.singular_values();
    let dimension = sv.iter().filter(|&&s| s <= KERNEL_TOL).count();
    if dimension > 1 {
        return Err(SteadyError::DegenerateKernel { dimension });
    }
    let x = solve_trace_replaced(l).ok_or(SteadyError::DegenerateKernel { dimension: 2 })?;
    Ok(DensityState::new(x).normalized())
}

struct ScalarMap<'a> {
    sup: &'a SuperOperatorPair,
    delta_s: f64,
}

impl ScalarMap<'_> {
    fn state(&self, s: f64) -> Option<Coords> {
        solve_trace_replaced(&self.sup.frozen(s / self.delta_s))
    }

    fn g(&self, s: f64) -> Option<f64> {
        self.state(s).map(|x| self.delta_s * inversion(&x) - s)
    }
}

fn bisect(map: &ScalarMap, mut lo: f64, mut g_lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = map.g(mid)?;
        if g_mid.abs() < tol || hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
            return Some(mid);
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Values of `g(s)` on the scan grid, for diagnostics and plots.
pub fn scan_scalar_map(params: &ModelParams, grid_points: usize) -> Vec<(f64, f64)> {
    let sup = build_superoperators(params);
    let map = ScalarMap { sup: &sup, delta_s: params.delta_s };
    let span = params.delta_s.abs();
    let n = grid_points.max(2);
    (0..n)
        .filter_map(|i| {
            let s = -span + 2.0 * span * i as f64 / (n - 1) as f64;
            map.g(s).map(|g| (s, g))
        })
        .collect()
}

/// Every self-consistent steady state resolved by the scan grid, sorted by
/// shift. Points are bisection-accurate; see [`newton_refine`] to polish.
pub fn self_consistency_roots(
    params: &ModelParams,
    cfg: &ScanConfig,
) -> Result<Vec<FixedPoint>, SteadyError> {
    params.validate()?;
    let sup = build_superoperators(params);
    roots_with(params, &sup, cfg)
}

pub(crate) fn roots_with(
    params: &ModelParams,
    sup: &SuperOperatorPair,
    cfg: &ScanConfig,
) -> Result<Vec<FixedPoint>, SteadyError> {
    let delta_s = params.delta_s;
    if delta_s == 0.0 {
        let state = linear_steady_state(&sup.l0)?;
        return Ok(vec![FixedPoint::from_state(state, sup, 0.0)]);
    }
    let span = delta_s.abs();
    // kernel check once, at the unshifted generator
    linear_steady_state(&sup.frozen(0.0))?;

    let map = ScalarMap { sup, delta_s };
    let n = cfg.grid_points.max(2);
    let grid: Vec<f64> = (0..n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64).collect();
    let mut values = Vec::with_capacity(n);
    for &s in &grid {
        values.push(map.g(s).ok_or(SteadyError::DegenerateKernel { dimension: 2 })?);
    }

    let mut shifts: Vec<f64> = Vec::new();
    for i in 0..n {
        if values[i] == 0.0 {
            shifts.push(grid[i]);
        } else if i + 1 < n && values[i + 1] != 0.0 && (values[i] < 0.0) != (values[i + 1] < 0.0) {
            let root = bisect(&map, grid[i], values[i], grid[i + 1], cfg.bisection_tol)
                .ok_or(SteadyError::DegenerateKernel { dimension: 2 })?;
            shifts.push(root);
        }
    }
    shifts.sort_by(|a, b| a.total_cmp(b));
    shifts.dedup_by(|a, b| (*a - *b).abs() < cfg.dedup_tol);

    shifts
        .into_iter()
        .map(|s| {
            let x = map.state(s).ok_or(SteadyError::DegenerateKernel { dimension: 2 })?;
            Ok(FixedPoint::from_state(DensityState::new(x).normalized(), sup, delta_s))
        })
        .collect()
}

/// Jacobian of the nonlinear flow in full coordinates:
/// `l0 + w·l_shift + (l_shift·x)·∇wᵀ`.
pub fn full_jacobian(x: &Coords, sup: &SuperOperatorPair) -> Generator {
    let w = inversion(x);
    let lx = sup.l_shift * x;
    sup.frozen(w) + lx * inversion_weights().transpose()
}

/// Residual history of a Newton polish, starting with the seed residual.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace {
    pub point: FixedPoint,
    pub residuals: Vec<f64>,
}

impl NewtonTrace {
    pub fn iterations(&self) -> usize {
        self.residuals.len() - 1
    }
}

/// Newton iteration on the trace-normalized system (ρ11 row replaced by the
/// trace constraint).
pub fn newton_refine_traced(
    seed: &FixedPoint,
    sup: &SuperOperatorPair,
    delta_s: f64,
) -> Result<NewtonTrace, SteadyError> {
    let mut x = seed.state.coords;
    let t = trace_weights();
    let mut residuals = Vec::new();
    for iter in 0..=NEWTON_MAX_ITER {
        let f = sup.rhs(&x);
        let residual = f.amax();
        residuals.push(residual);
        if residual < NEWTON_TOL && (t.dot(&x) - 1.0).abs() < 1e-12 {
            let state = DensityState::new(x);
            return Ok(NewtonTrace {
                point: FixedPoint { state, shift: delta_s * state.inversion(), residual },
                residuals,
            });
        }
        if iter == NEWTON_MAX_ITER || !residual.is_finite() {
            return Err(SteadyError::NoConvergence { iterations: iter, residual });
        }
        let mut j: SMatrix<f64, 16, 16> = full_jacobian(&x, sup);
        j.set_row(0, &t.transpose());
        let mut rhs: SVector<f64, 16> = -f;
        rhs[0] = 1.0 - t.dot(&x);
        match j.lu().solve(&rhs) {
            Some(dx) => x += dx,
            None => return Err(SteadyError::NoConvergence { iterations: iter, residual }),
        }
    }
    unreachable!()
}

pub fn newton_refine(
    seed: &FixedPoint,
    sup: &SuperOperatorPair,
    delta_s: f64,
) -> Result<FixedPoint, SteadyError> {
    newton_refine_traced(seed, sup, delta_s).map(|t| t.point)
}

/// Roots at one drive, each polished by Newton. A root that fails to
/// polish is kept at bisection accuracy and the error is recorded.
pub fn branch_at(params: &ModelParams, cfg: &ScanConfig) -> BranchSet {
    let sup = build_superoperators(params);
    let mut set = BranchSet { drive: params.omega_a, points: Vec::new(), error: None };
    match roots_with(params, &sup, cfg) {
        Ok(roots) => {
            for seed in roots {
                let fixed_point = match newton_refine(&seed, &sup, params.delta_s) {
                    Ok(fp) => fp,
                    Err(e) => {
                        set.error.get_or_insert(e);
                        seed
                    }
                };
                set.points.push(BranchPoint { fixed_point, stability: None });
            }
        }
        Err(e) => set.error = Some(e),
    }
    set
}

/// Steady states along a drive sweep. Output order follows `omega_grid`.
pub fn sweep_branches(
    params: &ModelParams,
    omega_grid: &[f64],
    cfg: &ScanConfig,
) -> Result<Vec<BranchSet>, SteadyError> {
    params.validate()?;
    if omega_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(SteadyError::UnsortedGrid);
    }
    Ok(omega_grid
        .par_iter()
        .map(|&omega| branch_at(&params.with_drive(omega), cfg))
        .collect())
}
