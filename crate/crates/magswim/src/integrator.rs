//! Adaptive embedded Runge-Kutta integration (Dormand-Prince 5(4)) with
//! dense output, event location, and flow-map sensitivities via the
//! variational equations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MagswimError, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// `None` selects the step automatically from the initial slope.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 100_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, tol) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(1e-14..=1e-2).contains(&tol) {
                return Err(MagswimError::InvalidConfig(format!(
                    "{name} = {tol} outside [1e-14, 1e-2]"
                )));
            }
        }
        if self.max_step <= 0.0 {
            return Err(MagswimError::InvalidConfig("max_step must be positive".into()));
        }
        Ok(())
    }
}

/// Dense-output coefficients for one accepted step (quartic interpolant).
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    cont: [DVector<f64>; 5],
}

impl DenseSegment {
    /// Evaluate the interpolant at `t` in `[t0, t0 + h]`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        &self.cont[0]
            + (&self.cont[1] + (&self.cont[2] + (&self.cont[3] + &self.cont[4] * theta1) * theta) * theta1)
                * theta
    }
}

/// Time-stamped solution of one integration with dense interpolants per
/// accepted step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub dense: Vec<DenseSegment>,
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        *self.times.first().unwrap()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// Sample the dense output at `t` (clamped to the integration span).
    pub fn sample(&self, t: f64) -> DVector<f64> {
        if self.dense.is_empty() || t <= self.start_time() {
            return self.states[0].clone();
        }
        if t >= self.end_time() {
            return self.final_state().clone();
        }
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.dense.len() - 1),
            Err(i) => i - 1,
        };
        if t == self.times[idx] {
            return self.states[idx].clone();
        }
        self.dense[idx].eval(t)
    }
}

/// Scalar event function; a root is reported at every sign change of
/// `g(t, y(t))` along the dense output.
pub type EventFn<'a> = &'a dyn Fn(f64, &DVector<f64>) -> f64;

#[derive(Debug, Clone)]
pub struct EventRecord {
    /// Index into the caller's event list.
    pub event_index: usize,
    pub t: f64,
    pub state: DVector<f64>,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

#[allow(clippy::type_complexity)]
fn initial_step_guess(
    rhs: &mut dyn FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    cfg: &IntegratorConfig,
    span: f64,
) -> f64 {
    let sc = cfg.abs_tol + cfg.rel_tol * y0.amax();
    let d0 = y0.norm() / sc;
    let d1 = f0.norm() / sc;
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    // One explicit Euler probe to estimate the second derivative.
    let y1 = y0 + f0 * h0;
    let mut f1 = DVector::zeros(y0.len());
    rhs(t0 + h0, &y1, &mut f1);
    let d2 = (&f1 - f0).norm() / sc / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span).min(cfg.max_step)
}

/// Integrate `dy/dt = rhs(t, y)` over `[t0, t1]` with embedded 5(4) error
/// control; events are located on the dense output and refined by
/// bisection.
pub fn integrate(
    mut rhs: impl FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    y0: &DVector<f64>,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    events: &[EventFn<'_>],
) -> Result<(Trajectory, Vec<EventRecord>)> {
    cfg.validate()?;
    let (t0, t1) = t_span;
    if t1 <= t0 {
        return Err(MagswimError::InvalidConfig(format!(
            "t_span [{t0}, {t1}] is not increasing"
        )));
    }
    let n = y0.len();
    let span = t1 - t0;
    let event_time_tol = 1e-12 * span;

    let mut t = t0;
    let mut y = y0.clone();
    let mut k: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(n)).collect();
    rhs(t, &y, &mut k[0]);

    let mut h = cfg
        .initial_step
        .unwrap_or_else(|| initial_step_guess(&mut rhs, t, &y, &k[0].clone(), cfg, span));
    h = h.min(cfg.max_step).min(span);

    let mut traj = Trajectory {
        times: vec![t],
        states: vec![y.clone()],
        dense: Vec::new(),
    };
    let mut records = Vec::new();
    let mut g_prev: Vec<f64> = events.iter().map(|g| g(t, &y)).collect();

    let mut steps = 0usize;
    let mut ytmp = DVector::zeros(n);
    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(MagswimError::MaxStepsExceeded {
                max_steps: cfg.max_steps,
                t,
            });
        }
        steps += 1;
        if h < f64::EPSILON * t.abs().max(1.0) {
            return Err(MagswimError::StepUnderflow { t });
        }
        if t + h > t1 {
            h = t1 - t;
        }

        for s in 1..7 {
            ytmp.copy_from(&y);
            for (j, kj) in k.iter().take(s).enumerate() {
                if A[s][j] != 0.0 {
                    ytmp.axpy(h * A[s][j], kj, 1.0);
                }
            }
            let (_head, tail) = k.split_at_mut(s);
            rhs(t + C[s] * h, &ytmp, &mut tail[0]);
        }
        // FSAL: stage 7 is evaluated at (t + h, y_new); ytmp now holds y_new.
        let y_new = ytmp.clone();

        // Embedded error estimate.
        let mut err_sq = 0.0;
        for i in 0..n {
            let e: f64 = (0..7).map(|s| E[s] * k[s][i]).sum::<f64>() * h;
            let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            // Accept: build the dense interpolant for [t, t + h].
            let ydiff = &y_new - &y;
            let cont0 = y.clone();
            let cont2 = &k[0] * h - &ydiff;
            let cont3 = &ydiff - &k[6] * h - &cont2;
            let mut cont4 = DVector::zeros(n);
            for s in 0..7 {
                if D[s] != 0.0 {
                    cont4.axpy(h * D[s], &k[s], 1.0);
                }
            }
            let seg = DenseSegment {
                t0: t,
                h,
                cont: [cont0, ydiff, cont2, cont3, cont4],
            };

            let t_new = t + h;
            // Locate events by sign change over the accepted step.
            for (ei, g) in events.iter().enumerate() {
                let g_new = g(t_new, &y_new);
                if g_prev[ei] == 0.0 || g_prev[ei].signum() != g_new.signum() {
                    let mut lo = t;
                    let mut hi = t_new;
                    let mut g_lo = g_prev[ei];
                    while hi - lo > event_time_tol {
                        let mid = 0.5 * (lo + hi);
                        let g_mid = g(mid, &seg.eval(mid));
                        if g_lo.signum() != g_mid.signum() {
                            hi = mid;
                        } else {
                            lo = mid;
                            g_lo = g_mid;
                        }
                    }
                    let t_event = 0.5 * (lo + hi);
                    records.push(EventRecord {
                        event_index: ei,
                        t: t_event,
                        state: seg.eval(t_event),
                    });
                }
                g_prev[ei] = g_new;
            }

            traj.dense.push(seg);
            traj.times.push(t_new);
            traj.states.push(y_new.clone());
            t = t_new;
            y = y_new;
            k.swap(0, 6); // FSAL reuse

            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h = (h * fac).min(cfg.max_step);
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
            // Re-evaluate stage 1 is not needed; k[0] still valid at (t, y).
        }
    }

    Ok((traj, records))
}

/// Integrate the flow together with its variational equations and return
/// `(y(T), d y(T) / d y0)`. The Jacobian of `rhs` is formed by central
/// finite differences.
pub fn flow_map_with_sensitivity(
    mut rhs: impl FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    y0: &DVector<f64>,
    t_final: f64,
    cfg: &IntegratorConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = y0.len();
    if t_final == 0.0 {
        return Ok((y0.clone(), DMatrix::identity(n, n)));
    }
    let mut aug0 = DVector::zeros(n + n * n);
    aug0.rows_mut(0, n).copy_from(y0);
    for i in 0..n {
        aug0[n + i * n + i] = 1.0; // identity, column-major
    }

    let mut fp = DVector::zeros(n);
    let mut fm = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    let aug_rhs = |t: f64, aug: &DVector<f64>, daug: &mut DVector<f64>| {
        let y = aug.rows(0, n).clone_owned();
        let mut f = DVector::zeros(n);
        rhs(t, &y, &mut f);
        daug.rows_mut(0, n).copy_from(&f);

        let step = f64::EPSILON.sqrt() * (1.0 + y.norm());
        for j in 0..n {
            let mut yp = y.clone();
            yp[j] += step;
            let mut ym = y.clone();
            ym[j] -= step;
            rhs(t, &yp, &mut fp);
            rhs(t, &ym, &mut fm);
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
        let s = DMatrix::from_column_slice(n, n, aug.rows(n, n * n).as_slice());
        let ds = &jac * s;
        daug.rows_mut(n, n * n).copy_from_slice(ds.as_slice());
    };

    let (traj, _) = integrate(aug_rhs, &aug0, (0.0, t_final), cfg, &[])?;
    let aug_final = traj.final_state();
    let y_final = aug_final.rows(0, n).clone_owned();
    let sens = DMatrix::from_column_slice(n, n, aug_final.rows(n, n * n).as_slice());
    Ok((y_final, sens))
}
