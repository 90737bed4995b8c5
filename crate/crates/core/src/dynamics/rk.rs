//! Explicit embedded Runge–Kutta stepper (8th order with 5th/3rd order
//! error estimates) under proportional-integral step control.

use super::tableau::{A, B, E3, E5, STAGES};
use crate::model::{Coords, N_COORDS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// µs
    pub max_step: f64,
    /// µs; a rejected step that would fall below this is an error.
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, max_step: f64::INFINITY, min_step: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub rhs_evals: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Underflow {
    pub t: f64,
    pub h: f64,
}

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 1.0 / 8.0 - 0.2 * BETA;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 6.0;

/// Stateful integrator; keeps the step proposal and the previous error
/// across calls so that splitting an interval at output or kick times does
/// not restart the controller.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub control: StepControl,
    pub stats: StepStats,
    h: Option<f64>,
    err_old: f64,
    f_cache: Option<Coords>,
}

impl Stepper {
    pub fn new(control: StepControl) -> Self {
        Self { control, stats: StepStats::default(), h: None, err_old: 1e-4, f_cache: None }
    }

    /// Call after modifying the state or switching the right-hand side.
    pub fn invalidate(&mut self) {
        self.f_cache = None;
    }

    fn eval<F: Fn(&Coords) -> Coords>(&mut self, f: &F, y: &Coords) -> Coords {
        self.stats.rhs_evals += 1;
        f(y)
    }

    fn scale(&self, y: &Coords, y_new: &Coords) -> Coords {
        y.zip_map(y_new, |a, b| self.control.atol + self.control.rtol * a.abs().max(b.abs()))
    }

    fn initial_step<F: Fn(&Coords) -> Coords>(&mut self, f: &F, y: &Coords, f0: &Coords) -> f64 {
        let sc = self.scale(y, y);
        let d0 = y.component_div(&sc).norm() / 4.0;
        let d1 = f0.component_div(&sc).norm() / 4.0;
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1 = y + f0 * h0;
        let f1 = self.eval(f, &y1);
        let d2 = (f1 - f0).component_div(&sc).norm() / 4.0 / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(self.control.max_step)
    }

    /// Advances `(t, y)` to exactly `t_end`.
    pub fn advance<F: Fn(&Coords) -> Coords>(
        &mut self,
        f: &F,
        t: &mut f64,
        y: &mut Coords,
        t_end: f64,
    ) -> Result<(), Underflow> {
        let mut f0 = match self.f_cache {
            Some(v) => v,
            None => self.eval(f, y),
        };
        let mut h_prop = match self.h {
            Some(h) => h,
            None => self.initial_step(f, y, &f0),
        };
        let (atol, rtol) = (self.control.atol, self.control.rtol);
        let mut k = [[0.0f64; N_COORDS]; STAGES + 1];
        while *t < t_end {
            let remaining = t_end - *t;
            let truncated = h_prop >= remaining;
            let h = if truncated { remaining } else { h_prop.min(self.control.max_step) };

            k[0] = f0.into();
            let y0: [f64; N_COORDS] = (*y).into();
            for s in 1..STAGES {
                let mut ys = y0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] == 0.0 {
                        continue;
                    }
                    let a = h * A[s][j];
                    for (v, kv) in ys.iter_mut().zip(kj) {
                        *v += a * kv;
                    }
                }
                k[s] = self.eval(f, &Coords::from(ys)).into();
            }
            let mut yn = y0;
            for (s, ks) in k.iter().enumerate().take(STAGES) {
                if B[s] == 0.0 {
                    continue;
                }
                let b = h * B[s];
                for (v, kv) in yn.iter_mut().zip(ks) {
                    *v += b * kv;
                }
            }
            let y_new = Coords::from(yn);
            let f_new = self.eval(f, &y_new);
            k[STAGES] = f_new.into();

            let mut e5 = [0.0f64; N_COORDS];
            let mut e3 = [0.0f64; N_COORDS];
            for (s, ks) in k.iter().enumerate() {
                let (c5, c3) = (E5[s], E3[s]);
                for i in 0..N_COORDS {
                    e5[i] += c5 * ks[i];
                    e3[i] += c3 * ks[i];
                }
            }
            let (mut n5, mut n3) = (0.0, 0.0);
            for i in 0..N_COORDS {
                let inv = 1.0 / (atol + rtol * y0[i].abs().max(yn[i].abs()));
                n5 += (e5[i] * inv).powi(2);
                n3 += (e3[i] * inv).powi(2);
            }
            let err = if n5 == 0.0 && n3 == 0.0 {
                0.0
            } else {
                h * n5 / ((n5 + 0.01 * n3) * 16.0).sqrt()
            };

            if err <= 1.0 {
                self.stats.accepted += 1;
                *t = if truncated { t_end } else { *t + h };
                *y = y_new;
                f0 = f_new;
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * err.powf(-ALPHA) * self.err_old.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                self.err_old = err.max(1e-4);
                if !truncated {
                    h_prop = (h * factor).min(self.control.max_step);
                }
            } else {
                self.stats.rejected += 1;
                let factor = (SAFETY * err.powf(-1.0 / 8.0)).clamp(MIN_FACTOR, 1.0);
                h_prop = h * factor;
                if h_prop < self.control.min_step {
                    return Err(Underflow { t: *t, h: h_prop });
                }
            }
        }
        self.h = Some(h_prop);
        self.f_cache = Some(f0);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tableau::C;

    #[test]
    fn tableau_consistency() {
        for s in 0..STAGES {
            let row: f64 = A[s].iter().sum();
            assert!((row - C[s]).abs() < 1e-13, "row {s}");
        }
        assert!((B.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!(E3.iter().sum::<f64>().abs() < 1e-13);
        assert!(E5.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn harmonic_oscillator_phase() {
        // y0' = y1, y1' = -y0 on the first two coordinates
        let f = |y: &Coords| {
            let mut d = Coords::zeros();
            d[0] = y[1];
            d[1] = -y[0];
            d
        };
        let mut st = Stepper::new(StepControl::default());
        let mut y = Coords::zeros();
        y[0] = 1.0;
        let mut t = 0.0;
        for i in 1..=100 {
            st.advance(&f, &mut t, &mut y, 0.1 * i as f64).unwrap();
        }
        assert_eq!(t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-7);
        assert!((y[1] + 10f64.sin()).abs() < 1e-7);
    }

    #[test]
    fn error_shrinks_with_tolerance() {
        let f = |y: &Coords| -y;
        let run = |rtol: f64| {
            let mut st = Stepper::new(StepControl { rtol, atol: rtol * 1e-2, ..StepControl::default() });
            let mut y = Coords::repeat(1.0);
            let mut t = 0.0;
            st.advance(&f, &mut t, &mut y, 5.0).unwrap();
            (y[0] - (-5f64).exp()).abs()
        };
        let coarse = run(1e-5);
        let fine = run(1e-9);
        assert!(fine < coarse);
        assert!(fine < 1e-9);
    }

    #[test]
    fn underflow_on_singular_rhs() {
        let f = |y: &Coords| y.map(|v| 1.0 / (1.0 - v).powi(3));
        let mut st = Stepper::new(StepControl::default());
        let mut y = Coords::zeros();
        let mut t = 0.0;
        assert!(st.advance(&f, &mut t, &mut y, 10.0).is_err());
    }
}
