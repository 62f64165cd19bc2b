//! Adaptive Dormand–Prince 5(4) integrator for complex linear systems.
//!
//! Steps are clipped so the solution lands exactly on each requested output
//! time; no interpolation is involved.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

pub trait Rhs {
    fn dim(&self) -> usize;
    /// Writes dy/dt at time `t` into `dy`.
    fn eval(&self, t: f64, y: &[C64], dy: &mut [C64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { atol: 1e-10, rtol: 1e-8 }
    }
}

impl Tolerances {
    pub fn halved(self) -> Self {
        Tolerances {
            atol: self.atol / 2.0,
            rtol: self.rtol / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

impl std::ops::AddAssign for StepStats {
    fn add_assign(&mut self, o: Self) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rhs_evals += o.rhs_evals;
    }
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (embedded 4th order difference)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone)]
pub struct Integrator {
    pub tol: Tolerances,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Integrator {
    pub fn new(tol: Tolerances) -> Self {
        Integrator {
            tol,
            h_min: 1e-12,
            max_steps: 5_000_000,
        }
    }

    /// Integrates from `t0` through the ascending `outputs`, calling
    /// `on_output(k, t_k, y)` at each. Output times equal to `t0` are
    /// reported without stepping.
    pub fn integrate<R, F>(&self, rhs: &R, t0: f64, y: &mut [C64], outputs: &[f64], mut on_output: F) -> Result<StepStats>
    where
        R: Rhs + ?Sized,
        F: FnMut(usize, f64, &[C64]) -> Result<()>,
    {
        let n = rhs.dim();
        assert_eq!(y.len(), n);
        let mut stats = StepStats::default();
        if n == 0 {
            for (idx, &t_out) in outputs.iter().enumerate() {
                on_output(idx, t_out, y)?;
            }
            return Ok(stats);
        }
        let mut k: [Vec<C64>; 7] = std::array::from_fn(|_| vec![C64::default(); n]);
        let mut tmp = vec![C64::default(); n];
        let mut y_new = vec![C64::default(); n];

        let mut t = t0;
        rhs.eval(t, y, &mut k[0]);
        stats.rhs_evals += 1;
        let mut h = self.initial_step(y, &k[0], outputs.last().copied().unwrap_or(t0) - t0);
        let mut err_prev = 1e-4_f64;

        for (idx, &t_out) in outputs.iter().enumerate() {
            if t_out < t - 1e-12 {
                return Err(Error::IntegratorFailure {
                    t,
                    reason: format!("output time {t_out} precedes current time"),
                });
            }
            while t_out - t > 1e-13 * t_out.abs().max(1.0) {
                if stats.accepted + stats.rejected >= self.max_steps {
                    return Err(Error::IntegratorFailure {
                        t,
                        reason: "maximum step count exceeded".into(),
                    });
                }
                let remaining = t_out - t;
                let clipped = h >= remaining;
                let h_try = if clipped { remaining } else { h };

                macro_rules! stage {
                    ($dst:expr, $tc:expr, $( ($a:expr, $ki:expr) ),+ ) => {{
                        for i in 0..n {
                            let mut acc = C64::default();
                            $( acc += k[$ki][i] * $a; )+
                            tmp[i] = y[i] + acc * h_try;
                        }
                        rhs.eval(t + $tc * h_try, &tmp, &mut k[$dst]);
                    }};
                }
                stage!(1, C2, (A21, 0));
                stage!(2, C3, (A31, 0), (A32, 1));
                stage!(3, C4, (A41, 0), (A42, 1), (A43, 2));
                stage!(4, C5, (A51, 0), (A52, 1), (A53, 2), (A54, 3));
                stage!(5, 1.0, (A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4));
                for i in 0..n {
                    y_new[i] = y[i]
                        + (k[0][i] * B1 + k[2][i] * B3 + k[3][i] * B4 + k[4][i] * B5 + k[5][i] * B6) * h_try;
                }
                rhs.eval(t + h_try, &y_new, &mut k[6]);
                stats.rhs_evals += 6;

                let mut err_sq = 0.0;
                for i in 0..n {
                    let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7)
                        * h_try;
                    let scale = self.tol.atol + self.tol.rtol * y[i].norm().max(y_new[i].norm());
                    err_sq += (e.norm() / scale).powi(2);
                }
                let err = (err_sq / n as f64).sqrt();
                if !err.is_finite() {
                    return Err(Error::IntegratorFailure {
                        t,
                        reason: "non-finite error estimate".into(),
                    });
                }

                if err <= 1.0 {
                    t = if clipped { t_out } else { t + h_try };
                    y.copy_from_slice(&y_new);
                    k.swap(0, 6);
                    stats.accepted += 1;
                    // PI controller
                    let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
                    let h_next = h_try * fac.clamp(0.2, 5.0);
                    err_prev = err.max(1e-4);
                    // a clipped step does not shrink the natural step size
                    h = if clipped { h.max(h_next) } else { h_next };
                } else {
                    stats.rejected += 1;
                    h = h_try * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                    if h < self.h_min {
                        return Err(Error::IntegratorFailure {
                            t,
                            reason: format!("step size underflow (h = {h:e})"),
                        });
                    }
                }
            }
            on_output(idx, t_out, y)?;
        }
        Ok(stats)
    }

    fn initial_step(&self, y: &[C64], f0: &[C64], span: f64) -> f64 {
        let n = y.len().max(1) as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for (yi, fi) in y.iter().zip(f0) {
            let sc = self.tol.atol + self.tol.rtol * yi.norm();
            d0 += (yi.norm() / sc).powi(2);
            d1 += (fi.norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h = h.min(1e-3);
        if span > 0.0 {
            h.min(span)
        } else {
            h
        }
    }
}
