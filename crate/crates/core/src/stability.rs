//! Linear stability of fixed points, phase diagrams and instability
//! thresholds.
//!
//! The Jacobian of the mean-field flow is the linear generator plus a
//! rank-one correction from the inversion dependence of the shift. It is
//! projected onto the 15-dimensional trace-zero subspace with an explicit
//! orthonormal basis, so no coordinate is singled out.

use nalgebra::{Complex, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{build_superoperators, ModelParams, SuperOperatorPair};
use crate::steady::{branch_at, full_jacobian, BranchSet, FixedPoint, ScanConfig, SteadyError};

pub type Projected = SMatrix<f64, 15, 15>;
pub type Basis = SMatrix<f64, 16, 15>;

/// Real parts above this (1/µs) are unstable; within ±this, marginal.
pub const TOL_POS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn from_max_re(max_re: f64) -> Self {
        if max_re > TOL_POS {
            Verdict::Unstable
        } else if max_re.abs() <= TOL_POS {
            Verdict::Marginal
        } else {
            Verdict::Stable
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        }
    }
}

/// How the leading eigenvalue sits: on the real axis or as a complex pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeadingMode {
    Real,
    ComplexPair,
}

impl LeadingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LeadingMode::Real => "real",
            LeadingMode::ComplexPair => "complex_pair",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    /// Largest real part on the trace-zero subspace, 1/µs.
    pub max_re: f64,
    pub verdict: Verdict,
    /// All 15 eigenvalues, rad/µs, sorted by descending real part.
    pub spectrum: Vec<Complex<f64>>,
    pub leading: LeadingMode,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StabilityError {
    #[error("EigenFailure: Schur iteration did not converge (‖J‖_F = {norm:e}, cond ≈ {condition:e})")]
    EigenFailure { norm: f64, condition: f64 },
}

/// Orthonormal basis of the trace-zero subspace: three Helmert vectors on
/// the populations followed by the twelve coherence axes.
pub fn trace_zero_basis() -> Basis {
    let mut q = Basis::zeros();
    let s2 = 2f64.sqrt();
    let s6 = 6f64.sqrt();
    let s12 = 12f64.sqrt();
    q[(0, 0)] = 1.0 / s2;
    q[(1, 0)] = -1.0 / s2;
    q[(0, 1)] = 1.0 / s6;
    q[(1, 1)] = 1.0 / s6;
    q[(2, 1)] = -2.0 / s6;
    q[(0, 2)] = 1.0 / s12;
    q[(1, 2)] = 1.0 / s12;
    q[(2, 2)] = 1.0 / s12;
    q[(3, 2)] = -3.0 / s12;
    for k in 0..12 {
        q[(4 + k, 3 + k)] = 1.0;
    }
    q
}

/// Projected Jacobian `Qᵀ·J·Q` at a fixed point.
pub fn jacobian_at(fp: &FixedPoint, sup: &SuperOperatorPair) -> Projected {
    let q = trace_zero_basis();
    q.transpose() * full_jacobian(&fp.state.coords, sup) * q
}

pub fn spectrum_of(j: &Projected) -> Result<Vec<Complex<f64>>, StabilityError> {
    let schur = nalgebra::linalg::Schur::try_new(*j, f64::EPSILON, 10_000).ok_or_else(|| {
        let sv = j.singular_values();
        let condition = sv.max() / sv.min();
        StabilityError::EigenFailure { norm: j.norm(), condition }
    })?;
    let mut eig: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().cloned().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    Ok(eig)
}

pub fn classify(fp: &FixedPoint, sup: &SuperOperatorPair) -> Result<StabilityReport, StabilityError> {
    let spectrum = spectrum_of(&jacobian_at(fp, sup))?;
    let lead = spectrum[0];
    let max_re = lead.re;
    let scale = 1e-9 * lead.norm().max(1.0);
    let leading = if lead.im.abs() > scale { LeadingMode::ComplexPair } else { LeadingMode::Real };
    Ok(StabilityReport { max_re, verdict: Verdict::from_max_re(max_re), spectrum, leading })
}

/// Fills the stability verdict of every point of a branch set.
pub fn classify_branches(params: &ModelParams, set: &mut BranchSet) -> Result<(), StabilityError> {
    let sup = build_superoperators(&params.with_drive(set.drive));
    for point in &mut set.points {
        point.stability = Some(classify(&point.fixed_point, &sup)?);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Monostable,
    Bistable,
    UnstablePresent,
    Failed,
}

impl CellClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellClass::Monostable => "monostable",
            CellClass::Bistable => "bistable",
            CellClass::UnstablePresent => "unstable_present",
            CellClass::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedRoot {
    pub fixed_point: FixedPoint,
    pub report: StabilityReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCell {
    /// rad/µs
    pub delta3: f64,
    /// rad/µs
    pub omega_a: f64,
    pub class: CellClass,
    /// Sorted by shift.
    pub roots: Vec<ClassifiedRoot>,
    pub error: Option<String>,
}

impl PhaseCell {
    pub fn n_roots(&self) -> usize {
        self.roots.len()
    }

    /// Root with the largest excited population.
    pub fn high_excitation_root(&self) -> Option<&ClassifiedRoot> {
        self.roots.iter().max_by(|a, b| a.fixed_point.inversion().total_cmp(&b.fixed_point.inversion()))
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.roots.iter().filter(|r| r.report.verdict == verdict).count()
    }
}

/// A cell is `UnstablePresent` when its high-excitation root is unstable or
/// no root is stable; `Bistable` when at least two roots are stable.
pub fn cell_class(roots: &[ClassifiedRoot]) -> CellClass {
    if roots.is_empty() {
        return CellClass::Failed;
    }
    let stable = roots.iter().filter(|r| r.report.verdict == Verdict::Stable).count();
    let high = roots
        .iter()
        .max_by(|a, b| a.fixed_point.inversion().total_cmp(&b.fixed_point.inversion()))
        .expect("non-empty");
    if high.report.verdict == Verdict::Unstable
        || (stable == 0 && roots.iter().any(|r| r.report.verdict == Verdict::Unstable))
    {
        CellClass::UnstablePresent
    } else if stable >= 2 {
        CellClass::Bistable
    } else {
        CellClass::Monostable
    }
}

/// Grid over `(delta3, omega_a)`, stored detuning-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub params: ModelParams,
    pub delta_grid: Vec<f64>,
    pub omega_grid: Vec<f64>,
    pub cells: Vec<PhaseCell>,
}

impl PhaseDiagram {
    pub fn cell(&self, i_delta: usize, i_omega: usize) -> &PhaseCell {
        &self.cells[i_delta * self.omega_grid.len() + i_omega]
    }

    pub fn column(&self, i_delta: usize) -> &[PhaseCell] {
        let n = self.omega_grid.len();
        &self.cells[i_delta * n..(i_delta + 1) * n]
    }

    pub fn count_class(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|c| c.class == class).count()
    }

    pub fn count_verdict(&self, verdict: Verdict) -> usize {
        self.cells.iter().map(|c| c.count(verdict)).sum()
    }
}

fn classify_cell(params: &ModelParams, cfg: &ScanConfig) -> PhaseCell {
    let set = branch_at(params, cfg);
    let mut cell = PhaseCell {
        delta3: params.delta3,
        omega_a: params.omega_a,
        class: CellClass::Failed,
        roots: Vec::new(),
        error: set.error.as_ref().map(|e| e.to_string()),
    };
    if set.points.is_empty() {
        return cell;
    }
    let sup = build_superoperators(params);
    for p in set.points {
        match classify(&p.fixed_point, &sup) {
            Ok(report) => cell.roots.push(ClassifiedRoot { fixed_point: p.fixed_point, report }),
            Err(e) => {
                cell.error = Some(e.to_string());
                return cell;
            }
        }
    }
    cell.class = cell_class(&cell.roots);
    cell
}

pub fn phase_diagram(
    params: &ModelParams,
    delta_grid: &[f64],
    omega_grid: &[f64],
    cfg: &ScanConfig,
) -> Result<PhaseDiagram, SteadyError> {
    params.validate()?;
    let cells = delta_grid
        .iter()
        .flat_map(|&d| omega_grid.iter().map(move |&o| (d, o)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(d, o)| classify_cell(&params.with_detuning(d).with_drive(o), cfg))
        .collect();
    Ok(PhaseDiagram {
        params: *params,
        delta_grid: delta_grid.to_vec(),
        omega_grid: omega_grid.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    /// rad/µs
    pub delta3: f64,
    pub f_l_ghz: f64,
    /// rad/µs
    pub omega_a: f64,
    pub power_mw: f64,
}

/// Columns without any unstable cell are omitted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub points: Vec<ThresholdPoint>,
}

/// Smallest drive per detuning column whose cell is `UnstablePresent`.
pub fn threshold_curve(pd: &PhaseDiagram) -> ThresholdCurve {
    let mut order: Vec<usize> = (0..pd.omega_grid.len()).collect();
    order.sort_by(|&a, &b| pd.omega_grid[a].total_cmp(&pd.omega_grid[b]));
    let points = (0..pd.delta_grid.len())
        .filter_map(|i| {
            let col = pd.column(i);
            order.iter().map(|&k| &col[k]).find(|c| c.class == CellClass::UnstablePresent).map(|c| {
                let p = pd.params.with_detuning(c.delta3);
                ThresholdPoint {
                    delta3: c.delta3,
                    f_l_ghz: p.laser_frequency(),
                    omega_a: c.omega_a,
                    power_mw: p.power_for_rabi(c.omega_a),
                }
            })
        })
        .collect();
    ThresholdCurve { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mhz_to_rad_per_us, DensityState};
    use crate::steady::self_consistency_roots;

    #[test]
    fn basis_is_orthonormal_and_traceless() {
        let q = trace_zero_basis();
        let gram = q.transpose() * q;
        assert!((gram - SMatrix::<f64, 15, 15>::identity()).amax() < 1e-15);
        let t = crate::model::trace_weights();
        assert!((t.transpose() * q).amax() < 1e-15);
    }

    #[test]
    fn linear_model_is_never_unstable() {
        let p = ModelParams { delta_s: 0.0, ..ModelParams::default() };
        for (d, o) in [(0.0, 0.3), (3.0, 1.0), (-5.0, 0.05)] {
            let q = p.with_detuning(mhz_to_rad_per_us(d)).with_drive(mhz_to_rad_per_us(o));
            let sup = build_superoperators(&q);
            let fp = self_consistency_roots(&q, &ScanConfig::default()).unwrap()[0];
            let r = classify(&fp, &sup).unwrap();
            assert!(r.max_re <= 1e-10, "{}", r.max_re);
            assert_eq!(r.verdict, Verdict::Stable);
            assert_eq!(r.spectrum.len(), 15);
        }
    }

    #[test]
    fn spin_exchange_modes_at_ground() {
        // drive-free ground: ρ12 decays at γ_spin while rotating at δ2, and the
        // population difference ρ11−ρ22 relaxes at 2·γ_spin
        let p = ModelParams::default();
        let sup = build_superoperators(&p);
        let fp = FixedPoint::from_state(DensityState::ground(), &sup, p.delta_s);
        let r = classify(&fp, &sup).unwrap();
        assert!((r.max_re + p.gamma_spin).abs() < 1e-9 * p.gamma_spin.max(1.0));
        assert_eq!(r.leading, LeadingMode::ComplexPair);
        assert!((r.spectrum[0].im.abs() - p.delta2).abs() < 1e-9);
        let pop = r.spectrum.iter().map(|z| (z - Complex::new(-2.0 * p.gamma_spin, 0.0)).norm());
        assert!(pop.fold(f64::INFINITY, f64::min) < 1e-12);
    }

    #[test]
    fn conjugate_pairs() {
        let p = ModelParams::default()
            .with_detuning(mhz_to_rad_per_us(5.0))
            .with_drive(mhz_to_rad_per_us(0.25));
        let sup = build_superoperators(&p);
        for fp in self_consistency_roots(&p, &ScanConfig::default()).unwrap() {
            let spec = classify(&fp, &sup).unwrap().spectrum;
            for z in spec.iter().filter(|z| z.im.abs() > 1e-9) {
                let partner = spec.iter().map(|y| (y - z.conj()).norm()).fold(f64::INFINITY, f64::min);
                assert!(partner < 1e-9);
            }
        }
    }

    #[test]
    fn cell_class_rules() {
        let mk = |w: f64, v: Verdict| ClassifiedRoot {
            fixed_point: FixedPoint {
                state: DensityState::diagonal([0.5 - w / 2.0, 0.0, 0.5 + w / 2.0, 0.0]),
                shift: 0.0,
                residual: 0.0,
            },
            report: StabilityReport {
                max_re: 0.0,
                verdict: v,
                spectrum: vec![],
                leading: LeadingMode::Real,
            },
        };
        use Verdict::*;
        assert_eq!(cell_class(&[mk(-0.9, Stable)]), CellClass::Monostable);
        assert_eq!(
            cell_class(&[mk(-0.9, Stable), mk(-0.5, Unstable), mk(-0.2, Stable)]),
            CellClass::Bistable
        );
        assert_eq!(
            cell_class(&[mk(-0.9, Stable), mk(-0.5, Unstable), mk(-0.2, Unstable)]),
            CellClass::UnstablePresent
        );
        assert_eq!(cell_class(&[mk(-0.3, Unstable)]), CellClass::UnstablePresent);
        assert_eq!(cell_class(&[]), CellClass::Failed);
    }

    #[test]
    fn all_monostable_gives_empty_threshold() {
        let p = ModelParams { delta_s: 0.0, ..ModelParams::default() };
        let pd = phase_diagram(&p, &[0.0, 1.0], &[0.0, 1.0], &ScanConfig::default()).unwrap();
        assert_eq!(pd.count_class(CellClass::Monostable), 4);
        assert!(threshold_curve(&pd).points.is_empty());
    }

    #[test]
    fn zero_drive_cells_hold_the_ground_root() {
        let p = ModelParams::default();
        let grid = [-10.0, 0.0, 10.0].map(mhz_to_rad_per_us);
        let pd = phase_diagram(&p, &grid, &[0.0, 0.0], &ScanConfig::default()).unwrap();
        for c in &pd.cells {
            assert_eq!(c.class, CellClass::Monostable);
            assert_eq!(c.n_roots(), 1);
            assert!(c.roots[0].fixed_point.state.distance(&DensityState::ground()) < 1e-10);
        }
    }
}
