//! Four-level ion model: parameters, density-state coordinates and the
//! vectorized generators of the mean-field master equation.
//!
//! Levels are numbered 1..4 in the physics and 0..3 in code: two ground
//! levels (1, 2) and two excited levels (3, 4). Internal units are rad/µs
//! for angular frequencies, 1/µs for rates and µs for time.
//!
//! The density matrix is carried as 16 real coordinates:
//!
//! | index  | coordinate            |
//! |--------|-----------------------|
//! | 0..4   | ρ11, ρ22, ρ33, ρ44    |
//! | 4, 5   | Re ρ12, Im ρ12        |
//! | 6, 7   | Re ρ13, Im ρ13        |
//! | 8, 9   | Re ρ14, Im ρ14        |
//! | 10, 11 | Re ρ23, Im ρ23        |
//! | 12, 13 | Re ρ24, Im ρ24        |
//! | 14, 15 | Re ρ34, Im ρ34        |
//!
//! With shift `s = Δ_s·w`, `w = ρ33+ρ44−ρ11−ρ22`, the flow is
//! `d(coords)/dt = l0·coords + w·l_shift·coords`.

use nalgebra::{Complex, Matrix4, SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type C64 = Complex<f64>;
pub type CMatrix4 = Matrix4<C64>;
pub type Coords = SVector<f64, 16>;
pub type Generator = SMatrix<f64, 16, 16>;

pub const N_LEVELS: usize = 4;
pub const N_COORDS: usize = 16;

/// Upper-triangle coherence pairs in coordinate order.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

const TWO_PI: f64 = 2.0 * PI;

/// Cyclic MHz to rad/µs.
pub fn mhz_to_rad_per_us(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz
}

/// rad/µs to cyclic MHz.
pub fn rad_per_us_to_mhz(omega: f64) -> f64 {
    omega / TWO_PI
}

/// Physical constants of the single-ion model, in internal units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Ground-doublet splitting (level 2 detuning), rad/µs.
    pub delta2: f64,
    /// Level-3 detuning from the laser, rad/µs.
    pub delta3: f64,
    /// Level-4 detuning from the laser, rad/µs.
    pub delta4: f64,
    /// Rabi frequency on 1↔3 and 2↔4, rad/µs.
    pub omega_a: f64,
    /// Rabi frequency on 1↔4 and 2↔3, rad/µs.
    pub omega_b: f64,
    /// Fixed ratio `omega_b / omega_a` used when the drive is set from power.
    pub rabi_ratio: f64,
    /// Excitation-induced shift magnitude, rad/µs. Either sign.
    pub delta_s: f64,
    /// Total population decay rate of each excited level (1/T1), 1/µs.
    pub gamma_opt_decay: f64,
    /// Fraction of each excited level's decay that ends in level 1.
    pub branching: f64,
    /// Symmetric 1↔2 population exchange rate, 1/µs.
    pub gamma_spin: f64,
    /// Pure dephasing of the optical coherences, 1/µs.
    pub gamma_phi_opt: f64,
    /// Pure dephasing of the 1-2 and 3-4 coherences, 1/µs.
    pub gamma_phi_spin: f64,
    /// Rabi frequency per sqrt(mW), rad/µs.
    pub power_to_rabi: f64,
    /// Laser-frequency origin, GHz.
    pub line_center: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let delta3 = mhz_to_rad_per_us(defaults::DELTA3_MHZ);
        let omega_a = mhz_to_rad_per_us(defaults::OMEGA_A_MHZ);
        Self {
            delta2: mhz_to_rad_per_us(defaults::DELTA2_MHZ),
            delta3,
            delta4: delta3 + mhz_to_rad_per_us(defaults::EXCITED_SPLITTING_MHZ),
            omega_a,
            omega_b: defaults::RABI_RATIO * omega_a,
            rabi_ratio: defaults::RABI_RATIO,
            delta_s: mhz_to_rad_per_us(defaults::DELTA_S_MHZ),
            gamma_opt_decay: 1.0 / (defaults::T1_MS * 1e3),
            branching: defaults::BRANCHING,
            gamma_spin: defaults::GAMMA_SPIN_PER_MS * 1e-3,
            gamma_phi_opt: mhz_to_rad_per_us(defaults::GAMMA_PHI_OPT_KHZ * 1e-3),
            gamma_phi_spin: mhz_to_rad_per_us(defaults::GAMMA_PHI_SPIN_KHZ * 1e-3),
            power_to_rabi: mhz_to_rad_per_us(defaults::POWER_TO_RABI_MHZ),
            line_center: 0.0,
        }
    }
}

/// Default model constants in configuration units.
pub mod defaults {
    pub const DELTA2_MHZ: f64 = 0.1;
    pub const EXCITED_SPLITTING_MHZ: f64 = 0.1;
    pub const DELTA3_MHZ: f64 = 0.0;
    pub const OMEGA_A_MHZ: f64 = 0.0;
    pub const RABI_RATIO: f64 = 0.3;
    pub const DELTA_S_MHZ: f64 = 10.0;
    pub const T1_MS: f64 = 11.0;
    pub const BRANCHING: f64 = 0.1;
    pub const GAMMA_SPIN_PER_MS: f64 = 0.01;
    pub const GAMMA_PHI_OPT_KHZ: f64 = 0.4;
    pub const GAMMA_PHI_SPIN_KHZ: f64 = 0.0;
    pub const POWER_TO_RABI_MHZ: f64 = 0.1;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("parameter `{0}` must be finite")]
    NonFinite(&'static str),
    #[error("rate `{0}` must be non-negative")]
    NegativeRate(&'static str),
    #[error("branching must lie in [0, 1], got {0}")]
    Branching(f64),
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let all = [
            ("delta2", self.delta2),
            ("delta3", self.delta3),
            ("delta4", self.delta4),
            ("omega_a", self.omega_a),
            ("omega_b", self.omega_b),
            ("rabi_ratio", self.rabi_ratio),
            ("delta_s", self.delta_s),
            ("gamma_opt_decay", self.gamma_opt_decay),
            ("branching", self.branching),
            ("gamma_spin", self.gamma_spin),
            ("gamma_phi_opt", self.gamma_phi_opt),
            ("gamma_phi_spin", self.gamma_phi_spin),
            ("power_to_rabi", self.power_to_rabi),
            ("line_center", self.line_center),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(ParamError::NonFinite(name));
            }
        }
        for (name, v) in [
            ("gamma_opt_decay", self.gamma_opt_decay),
            ("gamma_spin", self.gamma_spin),
            ("gamma_phi_opt", self.gamma_phi_opt),
            ("gamma_phi_spin", self.gamma_phi_spin),
        ] {
            if v < 0.0 {
                return Err(ParamError::NegativeRate(name));
            }
        }
        if !(0.0..=1.0).contains(&self.branching) {
            return Err(ParamError::Branching(self.branching));
        }
        Ok(())
    }

    /// Sets `omega_a` and ties `omega_b` to it through `rabi_ratio`.
    pub fn with_drive(mut self, omega_a: f64) -> Self {
        self.omega_a = omega_a;
        self.omega_b = self.rabi_ratio * omega_a;
        self
    }

    /// Drive from laser power in mW: `omega_a = power_to_rabi·sqrt(P)`.
    pub fn with_power(self, power_mw: f64) -> Self {
        let omega_a = self.power_to_rabi * power_mw.max(0.0).sqrt();
        self.with_drive(omega_a)
    }

    /// Inverse of the power calibration.
    pub fn power_for_rabi(&self, omega_a: f64) -> f64 {
        (omega_a / self.power_to_rabi).powi(2)
    }

    /// Sets `delta3`, keeping the excited splitting `delta4 - delta3`.
    pub fn with_detuning(mut self, delta3: f64) -> Self {
        let split = self.excited_splitting();
        self.delta3 = delta3;
        self.delta4 = delta3 + split;
        self
    }

    /// Laser frequency `f_l` in GHz relative to `line_center`:
    /// `delta3 = -2π·(f_l - line_center)·10³` rad/µs.
    pub fn with_laser_frequency(self, f_l_ghz: f64) -> Self {
        let delta3 = -TWO_PI * (f_l_ghz - self.line_center) * 1e3;
        self.with_detuning(delta3)
    }

    /// Laser frequency (GHz) that corresponds to the current `delta3`.
    pub fn laser_frequency(&self) -> f64 {
        self.line_center - self.delta3 / (TWO_PI * 1e3)
    }

    pub fn excited_splitting(&self) -> f64 {
        self.delta4 - self.delta3
    }

    /// Rates confined to levels 1 and 3 with no cross coupling: a homogeneous
    /// two-level system embedded in the four-level coordinates. Level 2 is
    /// emptied through 2→4→1, so it carries no population in steady state.
    pub fn two_level_preset(self) -> Self {
        let mut p = self;
        p.rabi_ratio = 0.0;
        p.omega_b = 0.0;
        p.branching = 1.0;
        p.gamma_spin = 0.0;
        p.gamma_phi_spin = 0.0;
        p
    }
}

/// Real 16-coordinate representation of a 4×4 Hermitian density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityState {
    pub coords: Coords,
}

impl DensityState {
    pub fn new(coords: Coords) -> Self {
        Self { coords }
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(pops: [f64; 4]) -> Self {
        let mut coords = Coords::zeros();
        for (i, p) in pops.iter().enumerate() {
            coords[i] = *p;
        }
        Self { coords }
    }

    /// Drive-free ground steady state with symmetric spin exchange.
    pub fn ground() -> Self {
        Self::diagonal([0.5, 0.5, 0.0, 0.0])
    }

    pub fn maximally_mixed() -> Self {
        Self::diagonal([0.25; 4])
    }

    pub fn from_matrix(rho: &CMatrix4) -> Self {
        Self { coords: matrix_to_coords(rho) }
    }

    pub fn to_matrix(&self) -> CMatrix4 {
        coords_to_matrix(&self.coords)
    }

    pub fn trace(&self) -> f64 {
        self.coords[0] + self.coords[1] + self.coords[2] + self.coords[3]
    }

    pub fn populations(&self) -> [f64; 4] {
        [self.coords[0], self.coords[1], self.coords[2], self.coords[3]]
    }

    /// `ρ33+ρ44−ρ11−ρ22`.
    pub fn inversion(&self) -> f64 {
        inversion(&self.coords)
    }

    /// Smallest eigenvalue of the reconstructed Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.to_matrix()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// `tr ρ²`.
    pub fn purity(&self) -> f64 {
        let m = self.to_matrix();
        (m * m).trace().re
    }

    /// Rescales so the trace is exactly one.
    pub fn normalized(&self) -> Self {
        Self { coords: self.coords / self.trace() }
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.coords - other.coords).norm()
    }
}

pub fn coords_to_matrix(c: &Coords) -> CMatrix4 {
    let mut m = CMatrix4::zeros();
    for i in 0..N_LEVELS {
        m[(i, i)] = C64::new(c[i], 0.0);
    }
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let z = C64::new(c[4 + 2 * k], c[5 + 2 * k]);
        m[(i, j)] = z;
        m[(j, i)] = z.conj();
    }
    m
}

/// Projects onto coordinates; the anti-Hermitian part is discarded.
pub fn matrix_to_coords(m: &CMatrix4) -> Coords {
    let mut c = Coords::zeros();
    for i in 0..N_LEVELS {
        c[i] = m[(i, i)].re;
    }
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        let z = 0.5 * (m[(i, j)] + m[(j, i)].conj());
        c[4 + 2 * k] = z.re;
        c[5 + 2 * k] = z.im;
    }
    c
}

/// Coefficients of the inversion functional on coordinates.
pub fn inversion_weights() -> Coords {
    let mut v = Coords::zeros();
    v[0] = -1.0;
    v[1] = -1.0;
    v[2] = 1.0;
    v[3] = 1.0;
    v
}

/// Coefficients of the trace functional on coordinates.
pub fn trace_weights() -> Coords {
    let mut v = Coords::zeros();
    for i in 0..4 {
        v[i] = 1.0;
    }
    v
}

pub fn inversion(c: &Coords) -> f64 {
    c[2] + c[3] - c[0] - c[1]
}

fn sigma(i: usize, j: usize) -> CMatrix4 {
    let mut m = CMatrix4::zeros();
    m[(i, j)] = C64::new(1.0, 0.0);
    m
}

/// `H_0 + H_f + shift·(σ33+σ44)`, Hermitian by construction.
pub fn build_hamiltonian(params: &ModelParams, shift: f64) -> CMatrix4 {
    let mut h = CMatrix4::zeros();
    h[(1, 1)] = C64::new(params.delta2, 0.0);
    h[(2, 2)] = C64::new(params.delta3 + shift, 0.0);
    h[(3, 3)] = C64::new(params.delta4 + shift, 0.0);
    let couplings = [
        ((2, 0), params.omega_a),
        ((3, 1), params.omega_a),
        ((3, 0), params.omega_b),
        ((2, 1), params.omega_b),
    ];
    for ((i, j), omega) in couplings {
        h[(i, j)] += C64::new(omega, 0.0);
        h[(j, i)] += C64::new(omega, 0.0);
    }
    h
}

/// Lindblad jump operators, already scaled by the square root of their rate.
///
/// Optical dephasing uses `(σ33+σ44)`, which damps the four optical
/// coherences at `gamma_phi_opt`. Spin dephasing uses `(σ11−σ22)` and
/// `(σ33−σ44)` at `gamma_phi_spin/2` each: the 1-2 and 3-4 coherences decay
/// at `gamma_phi_spin`, and the optical coherences pick up an extra
/// `gamma_phi_spin/2`.
pub fn jump_operators(params: &ModelParams) -> Vec<CMatrix4> {
    let g = params.gamma_opt_decay;
    let b = params.branching;
    let mut ops = Vec::with_capacity(9);
    for excited in [2, 3] {
        ops.push(sigma(0, excited) * C64::from((b * g).sqrt()));
        ops.push(sigma(1, excited) * C64::from(((1.0 - b) * g).sqrt()));
    }
    let gs = params.gamma_spin.sqrt();
    ops.push(sigma(0, 1) * C64::from(gs));
    ops.push(sigma(1, 0) * C64::from(gs));
    let excited_proj = sigma(2, 2) + sigma(3, 3);
    ops.push(excited_proj * C64::from((2.0 * params.gamma_phi_opt).sqrt()));
    let spin = C64::from((0.5 * params.gamma_phi_spin).sqrt());
    ops.push((sigma(0, 0) - sigma(1, 1)) * spin);
    ops.push((sigma(2, 2) - sigma(3, 3)) * spin);
    ops
}

/// `-i[h, ρ] + Σ_k (L ρ L† − ½{L†L, ρ})`.
pub fn lindblad_action(h: &CMatrix4, jumps: &[CMatrix4], rho: &CMatrix4) -> CMatrix4 {
    let minus_i = C64::new(0.0, -1.0);
    let mut out = (h * rho - rho * h) * minus_i;
    for l in jumps {
        let ld = l.adjoint();
        let ldl = ld * l;
        out += l * rho * ld - (ldl * rho + rho * ldl) * C64::from(0.5);
    }
    out
}

/// The two real generators of the nonlinear flow.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOperatorPair {
    /// `H_0 + H_f` commutator plus every dissipator.
    pub l0: Generator,
    /// Commutator with `Δ_s(σ33+σ44)`.
    pub l_shift: Generator,
}

impl SuperOperatorPair {
    /// `l0 + w·l_shift`: the linear generator with the inversion frozen at `w`.
    pub fn frozen(&self, w: f64) -> Generator {
        self.l0 + self.l_shift * w
    }

    /// `d(coords)/dt` of the mean-field flow.
    pub fn rhs(&self, x: &Coords) -> Coords {
        let w = inversion(x);
        let mut out = self.l0 * x;
        out.gemv(w, &self.l_shift, x, 1.0);
        out
    }
}

/// Array copy of a generator pair for repeated evaluation: `l0` column-major
/// in plain arrays (vectorizes well) and the few nonzeros of `l_shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledFlow {
    cols: [[f64; N_COORDS]; N_COORDS],
    shift: Vec<(usize, usize, f64)>,
}

impl CompiledFlow {
    pub fn new(sup: &SuperOperatorPair) -> Self {
        let mut cols = [[0.0; N_COORDS]; N_COORDS];
        for (j, col) in cols.iter_mut().enumerate() {
            for (i, v) in col.iter_mut().enumerate() {
                *v = sup.l0[(i, j)];
            }
        }
        let mut shift = Vec::new();
        for i in 0..N_COORDS {
            for j in 0..N_COORDS {
                let v = sup.l_shift[(i, j)];
                if v != 0.0 {
                    shift.push((i, j, v));
                }
            }
        }
        Self { cols, shift }
    }

    pub fn shift_nnz(&self) -> usize {
        self.shift.len()
    }

    pub fn rhs(&self, x: &Coords) -> Coords {
        let w = inversion(x);
        let x: &[f64; N_COORDS] = x.as_ref();
        let mut out = [0.0; N_COORDS];
        for (col, &xj) in self.cols.iter().zip(x) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * xj;
            }
        }
        // indices are < 16; the masks only let the compiler drop bounds checks
        for &(i, j, v) in &self.shift {
            out[i & 15] += w * v * x[j & 15];
        }
        Coords::from(out)
    }
}

/// Matrix of a real-linear map on Hermitian matrices in coordinate form.
fn generator_of<F: Fn(&CMatrix4) -> CMatrix4>(map: F) -> Generator {
    let mut g = Generator::zeros();
    for k in 0..N_COORDS {
        let mut e = Coords::zeros();
        e[k] = 1.0;
        let image = matrix_to_coords(&map(&coords_to_matrix(&e)));
        g.set_column(k, &image);
    }
    g
}

pub fn build_superoperators(params: &ModelParams) -> SuperOperatorPair {
    let h = build_hamiltonian(params, 0.0);
    let jumps = jump_operators(params);
    let l0 = generator_of(|rho| lindblad_action(&h, &jumps, rho));
    let p = (sigma(2, 2) + sigma(3, 3)) * C64::from(params.delta_s);
    let l_shift = generator_of(|rho| lindblad_action(&p, &[], rho));
    SuperOperatorPair { l0, l_shift }
}

pub fn nonlinear_rhs(state: &DensityState, sup: &SuperOperatorPair) -> Coords {
    sup.rhs(&state.coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params_strategy() -> impl Strategy<Value = ModelParams> {
        (
            -5.0..5.0f64,
            -30.0..30.0f64,
            -1.0..1.0f64,
            0.0..3.0f64,
            0.0..1.5f64,
            -20.0..20.0f64,
            0.0..1.0f64,
            (0.0..1e-2f64, 0.0..1e-2f64, 0.0..1e-2f64),
        )
            .prop_map(|(d2, d3, split, om, ratio, ds, b, (gs, gpo, gps))| {
                let mut p = ModelParams {
                    delta2: mhz_to_rad_per_us(d2),
                    rabi_ratio: ratio,
                    delta_s: mhz_to_rad_per_us(ds),
                    branching: b,
                    gamma_spin: gs,
                    gamma_phi_opt: gpo,
                    gamma_phi_spin: gps,
                    ..ModelParams::default()
                };
                p.delta4 = p.delta3 + mhz_to_rad_per_us(split);
                p.with_detuning(mhz_to_rad_per_us(d3))
                    .with_drive(mhz_to_rad_per_us(om))
            })
    }

    fn state_strategy() -> impl Strategy<Value = DensityState> {
        proptest::collection::vec(-1.0..1.0f64, 32).prop_map(|v| {
            // ρ = A A† / tr(A A†) is a valid density matrix
            let a = CMatrix4::from_fn(|i, j| C64::new(v[4 * i + j], v[16 + 4 * i + j]));
            let rho = a * a.adjoint();
            let tr = rho.trace().re;
            DensityState::from_matrix(&(rho / C64::from(tr)))
        })
    }

    #[test]
    fn compiled_flow_matches_generators() {
        let p = ModelParams { gamma_phi_spin: 1e-3, ..ModelParams::default() }
            .with_detuning(mhz_to_rad_per_us(2.0))
            .with_drive(mhz_to_rad_per_us(0.4));
        let sup = build_superoperators(&p);
        let sp = CompiledFlow::new(&sup);
        assert_eq!(sp.shift_nnz(), 8);
        let x = Coords::from_fn(|i, _| 0.1 * (i as f64 + 1.0).sin());
        assert!((sp.rhs(&x) - sup.rhs(&x)).amax() < 1e-14);
    }

    #[test]
    fn drive_free_hamiltonian_is_diagonal() {
        let p = ModelParams::default().with_detuning(1.3).with_drive(0.0);
        let s = 0.7;
        let h = build_hamiltonian(&p, s);
        let expected = [0.0, p.delta2, p.delta3 + s, p.delta4 + s];
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { expected[i] } else { 0.0 };
                assert_abs_diff_eq!(h[(i, j)].re, want, epsilon = 1e-15);
                assert_abs_diff_eq!(h[(i, j)].im, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_shift_strength_leaves_hamiltonian_state_independent() {
        let p = ModelParams { delta_s: 0.0, ..ModelParams::default() }.with_drive(1.0);
        let shift_a = p.delta_s * DensityState::ground().inversion();
        let shift_b = p.delta_s * DensityState::diagonal([0.0, 0.0, 0.5, 0.5]).inversion();
        assert_eq!(build_hamiltonian(&p, shift_a), build_hamiltonian(&p, shift_b));
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(DensityState::diagonal([1.0, 0.0, 0.0, 0.0]).inversion(), -1.0);
        assert_eq!(DensityState::diagonal([0.0, 0.0, 0.5, 0.5]).inversion(), 1.0);
        assert_eq!(DensityState::maximally_mixed().inversion(), 0.0);
    }

    #[test]
    fn l_shift_annihilates_diagonal_states() {
        let sup = build_superoperators(&ModelParams::default().with_drive(2.0));
        let x = DensityState::diagonal([0.1, 0.2, 0.3, 0.4]).coords;
        assert!((sup.l_shift * x).amax() < 1e-15);
    }

    #[test]
    fn hamiltonian_part_vanishes_on_identity() {
        let p = ModelParams::default().with_detuning(3.0).with_drive(2.0);
        let sup = build_superoperators(&p);
        let jumps = jump_operators(&p);
        let mixed = DensityState::maximally_mixed();
        let dissipative =
            matrix_to_coords(&lindblad_action(&CMatrix4::zeros(), &jumps, &mixed.to_matrix()));
        assert!((sup.l0 * mixed.coords - dissipative).amax() < 1e-15);
    }

    #[test]
    fn ground_state_is_stationary_without_drive() {
        let sup = build_superoperators(&ModelParams::default());
        let rhs = nonlinear_rhs(&DensityState::ground(), &sup);
        assert!(rhs.amax() < 1e-12);
    }

    #[test]
    fn excited_level_decays_at_gamma() {
        let p = ModelParams::default();
        let sup = build_superoperators(&p);
        let x = DensityState::diagonal([0.0, 0.0, 1.0, 0.0]).coords;
        let d = sup.l0 * x;
        assert_abs_diff_eq!(d[2], -p.gamma_opt_decay, epsilon = 1e-18);
        assert_abs_diff_eq!(d[0] + d[1], p.gamma_opt_decay, epsilon = 1e-18);
    }

    #[test]
    fn coordinate_round_trip() {
        let c = Coords::from_fn(|i, _| (i as f64 * 0.37).sin());
        assert_eq!(matrix_to_coords(&coords_to_matrix(&c)), c);
    }

    #[test]
    fn laser_frequency_mapping() {
        let p = ModelParams { line_center: 0.5, ..ModelParams::default() };
        let q = p.with_laser_frequency(0.501);
        assert_abs_diff_eq!(q.delta3, -TWO_PI, epsilon = 1e-9);
        assert_abs_diff_eq!(q.excited_splitting(), p.excited_splitting(), epsilon = 1e-12);
        assert_abs_diff_eq!(q.laser_frequency(), 0.501, epsilon = 1e-12);
        let r = p.with_power(4.0);
        assert_abs_diff_eq!(r.omega_a, 2.0 * p.power_to_rabi, epsilon = 1e-12);
        assert_abs_diff_eq!(r.omega_b, p.rabi_ratio * r.omega_a, epsilon = 1e-12);
        assert_abs_diff_eq!(r.power_for_rabi(r.omega_a), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_rates() {
        let p = ModelParams { gamma_spin: -1.0, ..ModelParams::default() };
        assert_eq!(p.validate(), Err(ParamError::NegativeRate("gamma_spin")));
        let p = ModelParams { branching: 1.5, ..ModelParams::default() };
        assert_eq!(p.validate(), Err(ParamError::Branching(1.5)));
        assert!(ModelParams::default().validate().is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hamiltonian_is_hermitian(p in params_strategy(), s in -100.0..100.0f64) {
            let h = build_hamiltonian(&p, s);
            prop_assert_eq!(h, h.adjoint());
        }
    }

    proptest! {
        #[test]
        fn generators_annihilate_trace(p in params_strategy()) {
            let sup = build_superoperators(&p);
            let t = trace_weights();
            let scale = sup.l0.amax().max(1.0);
            prop_assert!((t.transpose() * sup.l0).amax() < 1e-12 * scale);
            prop_assert!((t.transpose() * sup.l_shift).amax() < 1e-12 * scale);
        }

        #[test]
        fn rhs_conserves_trace(p in params_strategy(), st in state_strategy()) {
            let sup = build_superoperators(&p);
            let d = nonlinear_rhs(&st, &sup);
            prop_assert!((d[0] + d[1] + d[2] + d[3]).abs() < 1e-12);
        }

        #[test]
        fn rhs_is_linear_without_shift(
            p in params_strategy(),
            x in proptest::collection::vec(-1.0..1.0f64, 16),
            y in proptest::collection::vec(-1.0..1.0f64, 16),
            a in -2.0..2.0f64,
            b in -2.0..2.0f64,
        ) {
            let p = ModelParams { delta_s: 0.0, ..p };
            let sup = build_superoperators(&p);
            // project onto trace zero
            let t = trace_weights() / 2.0;
            let mut x = Coords::from_vec(x);
            let mut y = Coords::from_vec(y);
            x -= t * t.dot(&x);
            y -= t * t.dot(&y);
            let lhs = sup.rhs(&(x * a + y * b));
            let rhs = sup.rhs(&x) * a + sup.rhs(&y) * b;
            prop_assert!((lhs - rhs).amax() < 1e-11);
        }

        #[test]
        fn dissipative_flow_stays_physical(p in params_strategy(), st in state_strategy()) {
            // exp(l0·dt) by scaling and squaring of a truncated series
            let sup = build_superoperators(&p);
            let dt = 0.5;
            let n = 12;
            let a = sup.l0 * (dt / f64::powi(2.0, n));
            let mut e = Generator::identity();
            let mut term = Generator::identity();
            for k in 1..=12 {
                term = term * a / k as f64;
                e += term;
            }
            for _ in 0..n {
                e = e * e;
            }
            let out = DensityState::new(e * st.coords);
            prop_assert!((out.trace() - 1.0).abs() < 1e-9);
            prop_assert!(out.min_eigenvalue() > -1e-9);
        }
    }
}
