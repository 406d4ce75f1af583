//! Explicit Dormand-Prince 5(4) integrator with step-size control.
//!
//! Coefficients are the classic ones from Dormand & Prince (1980); see
//! also Hairer, Norsett & Wanner, Solving ODEs I, table 5.2. The first
//! stage of each step reuses the last stage of the previous one (FSAL).
//!
//! Accepted steps are reported to an observer together with the right
//! hand side values at both endpoints, which is exactly the data a cubic
//! Hermite table needs. A per-step cap h <= h_max_abs + h_max_rel * |t|
//! lets callers bound interpolation error on tables built from the
//! accepted nodes.

use crate::error::{Error, Result};

/// Outcome of an observer call after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// One accepted step: endpoint states and derivatives.
pub struct Step<'a> {
    pub t0: f64,
    pub t1: f64,
    pub y0: &'a [f64],
    pub y1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    /// Absolute part of the step cap.
    pub h_max_abs: f64,
    /// Relative part: the cap grows with |t|, matching how solution
    /// features spread out for the radial equations integrated here.
    pub h_max_rel: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-4,
            h_max_abs: f64::INFINITY,
            h_max_rel: 0.0,
            max_steps: 2_000_000,
        }
    }
}

// Butcher tableau.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
// Difference between the 5th and embedded 4th order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl Dopri5 {
    /// Integrate y' = f(t, y) from t0 to t_end. The observer sees every
    /// accepted step and may stop the run early; the final state is
    /// returned either way.
    pub fn integrate<F, O>(
        &self,
        mut f: F,
        t0: f64,
        y_init: &[f64],
        t_end: f64,
        mut observer: O,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        O: FnMut(&Step) -> Control,
    {
        assert!(t_end > t0, "forward integration only");
        let dim = y_init.len();
        let mut t = t0;
        let mut y = y_init.to_vec();
        let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
        let mut y_stage = vec![0.0; dim];
        let mut y_new = vec![0.0; dim];

        let (first, rest) = k.split_at_mut(1);
        f(t, &y, &mut first[0]);
        let _ = rest;

        let mut h = self.h_init.min(t_end - t0);
        let mut steps = 0usize;

        while t < t_end {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::numerical(format!(
                    "step limit {} exceeded at t = {t:.6e}",
                    self.max_steps
                )));
            }
            let cap = self.h_max_abs + self.h_max_rel * t.abs();
            if h > cap {
                h = cap;
            }
            if t + h > t_end {
                h = t_end - t;
            }

            // Stages 2..7. Stage 7 is the FSAL evaluation at (t+h, y_new).
            for (s, row) in [
                (1usize, &A2[..]),
                (2, &A3[..]),
                (3, &A4[..]),
                (4, &A5[..]),
                (5, &A6[..]),
            ] {
                for i in 0..dim {
                    let mut acc = 0.0;
                    for (j, &a) in row.iter().enumerate() {
                        acc += a * k[j][i];
                    }
                    y_stage[i] = y[i] + h * acc;
                }
                let (before, tail) = k.split_at_mut(s);
                f(t + C[s - 1] * h, &y_stage, &mut tail[0]);
                let _ = before;
            }
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..6 {
                    acc += B[j] * k[j][i];
                }
                y_new[i] = y[i] + h * acc;
            }
            let (before, tail) = k.split_at_mut(6);
            f(t + h, &y_new, &mut tail[0]);
            let _ = before;

            // Embedded error estimate.
            let mut err_sq = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                e *= h;
                let scale = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / scale) * (e / scale);
            }
            let err = (err_sq / dim as f64).sqrt();

            if err <= 1.0 {
                let t_new = t + h;
                let ctl = observer(&Step {
                    t0: t,
                    t1: t_new,
                    y0: &y,
                    y1: &y_new,
                    f0: &k[0],
                    f1: &k[6],
                });
                t = t_new;
                std::mem::swap(&mut y, &mut y_new);
                k.swap(0, 6);
                if ctl == Control::Stop {
                    return Ok((t, y));
                }
            }

            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
            if !(h > 0.0) || t + h == t {
                return Err(Error::numerical(format!(
                    "step size underflow at t = {t:.6e}"
                )));
            }
        }
        Ok((t, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let solver = Dopri5::default();
        let (_, y) = solver
            .integrate(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], 5.0, |_| Control::Continue)
            .unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let solver = Dopri5 {
            rtol: 1e-12,
            atol: 1e-14,
            ..Dopri5::default()
        };
        let (_, y) = solver
            .integrate(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                20.0 * std::f64::consts::PI,
                |_| Control::Continue,
            )
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn observer_can_stop() {
        let solver = Dopri5::default();
        let (t, y) = solver
            .integrate(
                |_, y, dy| dy[0] = y[0],
                0.0,
                &[1.0],
                10.0,
                |s| {
                    if s.y1[0] > 5.0 {
                        Control::Stop
                    } else {
                        Control::Continue
                    }
                },
            )
            .unwrap();
        assert!(t < 10.0);
        assert!(y[0] >= 5.0);
    }

    #[test]
    fn step_cap_is_respected() {
        let solver = Dopri5 {
            h_max_abs: 0.01,
            h_max_rel: 0.05,
            ..Dopri5::default()
        };
        let mut max_excess = 0.0f64;
        solver
            .integrate(
                |_, y, dy| dy[0] = -y[0],
                0.0,
                &[1.0],
                10.0,
                |s| {
                    let cap = 0.01 + 0.05 * s.t0.abs();
                    max_excess = max_excess.max(s.t1 - s.t0 - cap);
                    Control::Continue
                },
            )
            .unwrap();
        assert!(max_excess <= 1e-12, "cap exceeded by {max_excess}");
    }

    #[test]
    fn fifth_order_convergence() {
        // Fixed tolerance scan: halving rtol should shrink error ~ linearly,
        // which only holds if the embedded estimate is honest.
        let run = |rtol: f64| {
            let solver = Dopri5 {
                rtol,
                atol: 1e-16,
                ..Dopri5::default()
            };
            let (_, y) = solver
                .integrate(
                    |t, y, dy| dy[0] = y[0] * t.cos(),
                    0.0,
                    &[1.0],
                    6.0,
                    |_| Control::Continue,
                )
                .unwrap();
            (y[0] - 6.0f64.sin().exp()).abs()
        };
        assert!(run(1e-10) < 1e-8);
        assert!(run(1e-6) < 1e-4);
    }
}
