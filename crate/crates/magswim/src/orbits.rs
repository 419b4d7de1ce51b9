//! Periodic orbits of the quaternion formulation: recurrence detection,
//! Newton shooting with variational sensitivities, Floquet multipliers,
//! and pseudo-arclength continuation in a parameter.
//!
//! Quaternions double-cover SO(3): a symmetric orbit returns to `-q0`
//! after one SO(3) period, so the shooting equation is
//! `Phi_T(q0) - s q0 = 0` with `s = -1` for symmetric orbits. Because the
//! right-hand side is odd in `q`, the flow is odd and its derivative is
//! even; the monodromy over the full quaternion period is then the square
//! of the half-period sensitivity.

use nalgebra::{Complex, DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::dynamics::{rhs_quaternion_corrected, rhs_quaternion_slice, Parameters};
use crate::error::{MagswimError, Result};
use crate::integrator::{flow_map_with_sensitivity, integrate, IntegratorConfig};
use crate::model::SwimmerModel;

/// Distance on the double cover: `min(|q - p|, |q + p|)`.
pub fn quat_distance(q: &Vector4<f64>, p: &Vector4<f64>) -> f64 {
    (q - p).norm().min((q + p).norm())
}

/// Transient to discard before searching for recurrences.
pub fn default_transient(params: &Parameters) -> f64 {
    50f64.max(10.0 * TAU / params.a)
}

#[derive(Debug, Clone)]
pub struct RecurrenceResult {
    /// Settled point on (or near) the attractor.
    pub q0: Vector4<f64>,
    /// Approximate SO(3) period.
    pub period: f64,
    /// True if the trajectory returned to `-q0` rather than `q0`.
    pub symmetric: bool,
    /// Double-cover distance at the detected recurrence.
    pub distance: f64,
}

/// Integrate past the transient, then search `[0, horizon]` for the first
/// close return to the settled state on the double cover.
pub fn detect_recurrence(
    model: &SwimmerModel,
    params: &Parameters,
    q_init: &Vector4<f64>,
    horizon: f64,
    cfg: &IntegratorConfig,
) -> Result<RecurrenceResult> {
    let rhs = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), params, model);
    };

    let transient = default_transient(params);
    let y_init = DVector::from_column_slice(q_init.as_slice());
    let (pre, _) = integrate(rhs, &y_init, (0.0, transient), cfg, &[])?;
    let mut q_ref = Vector4::from_column_slice(pre.final_state().as_slice());
    q_ref /= q_ref.norm();

    let y0 = DVector::from_column_slice(q_ref.as_slice());
    let (traj, _) = integrate(rhs, &y0, (0.0, horizon), cfg, &[])?;

    // Sample step endpoints and midpoints; adaptive steps track the
    // solution's own time scale.
    let mut samples: Vec<(f64, f64, bool)> = Vec::new();
    for seg in &traj.dense {
        for frac in [0.5, 1.0] {
            let t = seg.t0 + frac * seg.h;
            let q = Vector4::from_column_slice(seg.eval(t).as_slice());
            let d_plus = (q - q_ref).norm();
            let d_minus = (q + q_ref).norm();
            if d_minus < d_plus {
                samples.push((t, d_minus, true));
            } else {
                samples.push((t, d_plus, false));
            }
        }
    }

    // Wait until the trajectory has left the neighbourhood of q_ref, then
    // take the first local minimum that comes back close.
    const ESCAPE: f64 = 0.2;
    const ACCEPT: f64 = 0.1;
    let escape_idx = match samples.iter().position(|&(_, d, _)| d > ESCAPE) {
        Some(i) => i,
        None => return Err(MagswimError::SteadyState),
    };
    let mut best: Option<usize> = None;
    for i in (escape_idx + 1).max(1)..samples.len() - 1 {
        let (_, d, _) = samples[i];
        if d < ACCEPT && d <= samples[i - 1].1 && d <= samples[i + 1].1 {
            best = Some(i);
            break;
        }
    }
    let idx = best.ok_or(MagswimError::NoRecurrence { horizon })?;
    let symmetric = samples[idx].2;

    // Ternary search on the dense output around the bracketing samples.
    let dist_at = |t: f64| {
        let q = Vector4::from_column_slice(traj.sample(t).as_slice());
        if symmetric {
            (q + q_ref).norm()
        } else {
            (q - q_ref).norm()
        }
    };
    let mut lo = samples[idx - 1].0;
    let mut hi = samples[idx + 1].0;
    while hi - lo > 1e-10 * horizon {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if dist_at(m1) < dist_at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let period = 0.5 * (lo + hi);
    Ok(RecurrenceResult {
        q0: q_ref,
        period,
        symmetric,
        distance: dist_at(period),
    })
}

/// A converged periodic orbit of the quaternion system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub q0: [f64; 4],
    /// SO(3) period (half the quaternion period for symmetric orbits).
    pub period: f64,
    pub symmetric: bool,
    /// Final shooting residual norm.
    pub residual: f64,
    /// Floquet multipliers of the full-period monodromy restricted to the
    /// tangent space of the unit sphere at `q0`; one of them is the
    /// trivial multiplier 1.
    pub floquet: Vec<(f64, f64)>,
    pub a: f64,
    pub psi: f64,
}

impl PeriodicOrbit {
    pub fn q0_vector(&self) -> Vector4<f64> {
        Vector4::from_column_slice(&self.q0)
    }

    pub fn multipliers(&self) -> Vec<Complex<f64>> {
        self.floquet.iter().map(|&(re, im)| Complex::new(re, im)).collect()
    }

    /// Index of the multiplier closest to 1 (the trivial one).
    fn trivial_index(&self) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, m) in self.multipliers().iter().enumerate() {
            let d = (m - Complex::new(1.0, 0.0)).norm();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn trivial_multiplier(&self) -> Complex<f64> {
        self.multipliers()[self.trivial_index()]
    }

    pub fn max_nontrivial_multiplier_abs(&self) -> f64 {
        let trivial = self.trivial_index();
        self.multipliers()
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != trivial)
            .map(|(_, m)| m.norm())
            .fold(0.0, f64::max)
    }

    pub fn stable(&self) -> bool {
        self.max_nontrivial_multiplier_abs() <= 1.0 + 1e-6
    }
}

/// Orthonormal basis of the hyperplane orthogonal to `q` (Householder
/// reflector columns).
fn orthonormal_complement(q: &Vector4<f64>) -> DMatrix<f64> {
    let qn = q / q.norm();
    let sign = if qn[0] >= 0.0 { 1.0 } else { -1.0 };
    let mut v = qn;
    v[0] += sign;
    let h = Matrix4::identity() - (v * v.transpose()) * (2.0 / v.norm_squared());
    // column 0 of h is -sign * qn; the rest span its complement
    let mut out = DMatrix::zeros(4, 3);
    for j in 0..3 {
        out.column_mut(j).copy_from(&h.column(j + 1));
    }
    out
}

fn floquet_multipliers(
    monodromy_half: &DMatrix<f64>,
    q0: &Vector4<f64>,
    symmetric: bool,
) -> Vec<(f64, f64)> {
    let mono = if symmetric {
        monodromy_half * monodromy_half
    } else {
        monodromy_half.clone()
    };
    let v = orthonormal_complement(q0);
    let restricted = v.transpose() * mono * v;
    restricted
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect()
}

pub const SHOOTING_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITER: usize = 25;

/// Refine `(q0, T)` by Newton shooting on `Phi_T(q0) - s q0 = 0` plus a
/// phase condition anchored at the initial guess.
pub fn shoot_periodic(
    model: &SwimmerModel,
    params: &Parameters,
    q_guess: &Vector4<f64>,
    t_guess: f64,
    symmetric: bool,
    cfg: &IntegratorConfig,
) -> Result<PeriodicOrbit> {
    let s = if symmetric { -1.0 } else { 1.0 };
    let mut q0 = q_guess / q_guess.norm();
    let mut period = t_guess;
    let q_anchor = q0;
    let f_anchor = rhs_quaternion_corrected(&q_anchor, params, model);

    let rhs = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
        rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), params, model);
    };

    let mut best_residual = f64::INFINITY;
    let mut stall = 0usize;
    let mut last: Option<(DVector<f64>, DMatrix<f64>)> = None;

    for iteration in 0..MAX_NEWTON_ITER {
        let y0 = DVector::from_column_slice(q0.as_slice());
        let (y_final, sens) = flow_map_with_sensitivity(rhs, &y0, period, cfg)?;
        let mut residual_vec = DVector::zeros(5);
        for i in 0..4 {
            residual_vec[i] = y_final[i] - s * q0[i];
        }
        residual_vec[4] = f_anchor.dot(&(q0 - q_anchor));
        let residual = residual_vec.norm();

        if residual < SHOOTING_TOL {
            let floquet = floquet_multipliers(&sens, &q0, symmetric);
            return Ok(PeriodicOrbit {
                q0: [q0[0], q0[1], q0[2], q0[3]],
                period,
                symmetric,
                residual,
                floquet,
                a: params.a,
                psi: params.psi,
            });
        }
        if residual < best_residual * 0.9 {
            best_residual = residual;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 5 {
                return Err(MagswimError::NewtonStagnation {
                    iterations: iteration,
                    residual,
                });
            }
        }

        let q_final = Vector4::from_column_slice(y_final.as_slice());
        let f_final = rhs_quaternion_corrected(&q_final, params, model);
        let mut jac = DMatrix::zeros(5, 5);
        for i in 0..4 {
            for j in 0..4 {
                jac[(i, j)] = sens[(i, j)];
            }
            jac[(i, i)] -= s;
            jac[(i, 4)] = f_final[i];
            jac[(4, i)] = f_anchor[i];
        }
        let delta = jac
            .lu()
            .solve(&residual_vec)
            .ok_or(MagswimError::SingularShootingJacobian)?;

        // Damp the update if it would drive the period non-positive.
        let mut scale = 1.0;
        while period - scale * delta[4] <= 1e-6 {
            scale *= 0.5;
            if scale < 1e-8 {
                return Err(MagswimError::NewtonStagnation {
                    iterations: iteration,
                    residual,
                });
            }
        }
        for i in 0..4 {
            q0[i] -= scale * delta[i];
        }
        period -= scale * delta[4];
        last = Some((y_final, sens));
    }
    let _ = last;
    Err(MagswimError::NewtonStagnation {
        iterations: MAX_NEWTON_ITER,
        residual: best_residual,
    })
}

/// Which external parameter a continuation run varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ContinuationParameter {
    MasonNumber,
    ConicalAngle,
}

impl ContinuationParameter {
    pub fn get(&self, params: &Parameters) -> f64 {
        match self {
            Self::MasonNumber => params.a,
            Self::ConicalAngle => params.psi,
        }
    }

    pub fn set(&self, params: &Parameters, value: f64) -> Parameters {
        match self {
            Self::MasonNumber => Parameters::new(value, params.psi),
            Self::ConicalAngle => Parameters::new(params.a, value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BranchEvent {
    Fold,
    StabilityChange,
    /// The corrector failed to converge even at the minimum step; the
    /// branch is truncated at this point.
    CorrectorFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub a: f64,
    pub psi: f64,
    pub period: f64,
    pub symmetric: bool,
    pub q0: [f64; 4],
    pub max_nontrivial_multiplier_abs: f64,
    pub stable: bool,
    pub event: Option<BranchEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationBranch {
    pub parameter: ContinuationParameter,
    pub points: Vec<BranchPoint>,
}

impl ContinuationBranch {
    /// CSV table of the branch (no header comments; callers prepend run
    /// metadata).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("a,psi,period,symmetric,max_nontrivial_multiplier_abs,stable,event\n");
        for p in &self.points {
            let event = match p.event {
                None => "",
                Some(BranchEvent::Fold) => "fold",
                Some(BranchEvent::StabilityChange) => "stability_change",
                Some(BranchEvent::CorrectorFailure) => "corrector_failure",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt17(p.a),
                fmt17(p.psi),
                fmt17(p.period),
                p.symmetric,
                fmt17(p.max_nontrivial_multiplier_abs),
                p.stable,
                event
            ));
        }
        out
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub parameter: ContinuationParameter,
    /// Initial signed arclength step (sign selects the direction of the
    /// first parameter move).
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    /// Stop once the parameter passes this value (in the direction of
    /// travel), if set.
    pub target: Option<f64>,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            parameter: ContinuationParameter::ConicalAngle,
            step: 0.02,
            min_step: 1e-7,
            max_step: 0.2,
            max_points: 200,
            target: None,
        }
    }
}

/// Extended state for continuation: `(q0, T, p)`.
type Z = [f64; 6];

fn z_from(orbit_q0: &Vector4<f64>, period: f64, p: f64) -> Z {
    [orbit_q0[0], orbit_q0[1], orbit_q0[2], orbit_q0[3], period, p]
}

/// Newton corrector for `Phi_T(q0; p) - s q0 = 0`, phase condition, and a
/// linear constraint `constraint . (z - z_ref) = 0`. Returns the
/// converged point with its half-period sensitivity.
#[allow(clippy::too_many_arguments)]
fn correct(
    model: &SwimmerModel,
    base_params: &Parameters,
    which: ContinuationParameter,
    z: &mut Z,
    symmetric: bool,
    q_anchor: &Vector4<f64>,
    f_anchor: &Vector4<f64>,
    constraint: &Z,
    z_ref: &Z,
    cfg: &IntegratorConfig,
) -> Result<(DMatrix<f64>, f64)> {
    let s = if symmetric { -1.0 } else { 1.0 };
    let mut best_residual = f64::INFINITY;
    let mut stall = 0usize;

    for iteration in 0..MAX_NEWTON_ITER {
        let params = which.set(base_params, z[5]);
        let rhs = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), &params, model);
        };
        let q0 = Vector4::new(z[0], z[1], z[2], z[3]);
        let period = z[4];
        let y0 = DVector::from_column_slice(q0.as_slice());
        let (y_final, sens) = flow_map_with_sensitivity(rhs, &y0, period, cfg)?;

        let mut residual_vec = DVector::zeros(6);
        for i in 0..4 {
            residual_vec[i] = y_final[i] - s * q0[i];
        }
        residual_vec[4] = f_anchor.dot(&(q0 - q_anchor));
        residual_vec[5] = (0..6).map(|i| constraint[i] * (z[i] - z_ref[i])).sum();
        let residual = residual_vec.norm();
        if residual < SHOOTING_TOL {
            return Ok((sens, residual));
        }
        if residual < best_residual * 0.9 {
            best_residual = residual;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 5 {
                return Err(MagswimError::NewtonStagnation {
                    iterations: iteration,
                    residual,
                });
            }
        }

        // Parameter derivative of the flow map by central differences.
        let dp = 1e-6 * (1.0 + z[5].abs());
        let mut dflow_dp = DVector::zeros(4);
        for (sign, acc) in [(1.0, 1.0), (-1.0, -1.0)] {
            let pp = which.set(base_params, z[5] + sign * dp);
            let rhs_p = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
                rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), &pp, model);
            };
            let (traj, _) = integrate(rhs_p, &y0, (0.0, period), cfg, &[])?;
            dflow_dp.axpy(acc / (2.0 * dp), traj.final_state(), 1.0);
        }

        let q_final = Vector4::from_column_slice(y_final.as_slice());
        let f_final = rhs_quaternion_corrected(&q_final, &params, model);
        let mut jac = DMatrix::zeros(6, 6);
        for i in 0..4 {
            for j in 0..4 {
                jac[(i, j)] = sens[(i, j)];
            }
            jac[(i, i)] -= s;
            jac[(i, 4)] = f_final[i];
            jac[(i, 5)] = dflow_dp[i];
            jac[(4, i)] = f_anchor[i];
        }
        for j in 0..6 {
            jac[(5, j)] = constraint[j];
        }
        let delta = jac
            .lu()
            .solve(&residual_vec)
            .ok_or(MagswimError::SingularShootingJacobian)?;

        let mut scale = 1.0;
        while z[4] - scale * delta[4] <= 1e-6 {
            scale *= 0.5;
            if scale < 1e-8 {
                return Err(MagswimError::NewtonStagnation {
                    iterations: iteration,
                    residual,
                });
            }
        }
        for i in 0..6 {
            z[i] -= scale * delta[i];
        }
    }
    Err(MagswimError::NewtonStagnation {
        iterations: MAX_NEWTON_ITER,
        residual: best_residual,
    })
}

fn branch_point(
    which: ContinuationParameter,
    base_params: &Parameters,
    z: &Z,
    symmetric: bool,
    sens: &DMatrix<f64>,
) -> BranchPoint {
    let params = which.set(base_params, z[5]);
    let q0 = Vector4::new(z[0], z[1], z[2], z[3]);
    let floquet = floquet_multipliers(sens, &q0, symmetric);
    let orbit = PeriodicOrbit {
        q0: [z[0], z[1], z[2], z[3]],
        period: z[4],
        symmetric,
        residual: 0.0,
        floquet,
        a: params.a,
        psi: params.psi,
    };
    BranchPoint {
        a: params.a,
        psi: params.psi,
        period: z[4],
        symmetric,
        q0: orbit.q0,
        max_nontrivial_multiplier_abs: orbit.max_nontrivial_multiplier_abs(),
        stable: orbit.stable(),
        event: None,
    }
}

/// Pseudo-arclength continuation of a converged orbit in `a` or `psi`.
///
/// Secant predictor, Newton corrector with an arclength constraint, step
/// halving down to `min_step` on corrector failure. Fold events are
/// flagged when the parameter component of the secant changes sign,
/// stability events when the largest nontrivial multiplier crosses 1.
pub fn continue_branch(
    model: &SwimmerModel,
    seed: &PeriodicOrbit,
    options: &ContinuationOptions,
    cfg: &IntegratorConfig,
) -> Result<ContinuationBranch> {
    let which = options.parameter;
    let base_params = Parameters::new(seed.a, seed.psi);
    let p0 = which.get(&base_params);
    let symmetric = seed.symmetric;

    let mut points: Vec<BranchPoint> = Vec::new();
    let mut zs: Vec<Z> = Vec::new();

    // Seed point: re-evaluate to get the sensitivity at the seed.
    let mut z = z_from(&seed.q0_vector(), seed.period, p0);
    let q_anchor = seed.q0_vector();
    let f_anchor = rhs_quaternion_corrected(&q_anchor, &base_params, model);
    let natural = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    let z_ref = z;
    let (sens, _) = correct(
        model,
        &base_params,
        which,
        &mut z,
        symmetric,
        &q_anchor,
        &f_anchor,
        &natural,
        &z_ref,
        cfg,
    )?;
    points.push(branch_point(which, &base_params, &z, symmetric, &sens));
    zs.push(z);

    let mut step = options.step;
    let mut prev_secant_p: Option<f64> = None;

    while points.len() < options.max_points {
        let z_last = *zs.last().unwrap();

        // Predictor: secant when available, otherwise a pure parameter
        // step.
        let (mut z_pred, tangent) = if zs.len() >= 2 {
            let z_prev = zs[zs.len() - 2];
            let mut secant = [0.0; 6];
            let mut norm = 0.0;
            for i in 0..6 {
                secant[i] = z_last[i] - z_prev[i];
                norm += secant[i] * secant[i];
            }
            let norm = norm.sqrt();
            if norm == 0.0 {
                break;
            }
            for v in secant.iter_mut() {
                *v /= norm;
            }
            let mut z_pred = z_last;
            for i in 0..6 {
                z_pred[i] += step.abs() * secant[i];
            }
            (z_pred, secant)
        } else {
            let mut z_pred = z_last;
            z_pred[5] += step;
            let mut tangent = [0.0; 6];
            tangent[5] = step.signum();
            (z_pred, tangent)
        };

        let q_anchor = Vector4::new(z_pred[0], z_pred[1], z_pred[2], z_pred[3]);
        let params_pred = which.set(&base_params, z_pred[5]);
        let f_anchor = rhs_quaternion_corrected(&q_anchor, &params_pred, model);
        let z_ref = z_pred;
        match correct(
            model,
            &base_params,
            which,
            &mut z_pred,
            symmetric,
            &q_anchor,
            &f_anchor,
            &tangent,
            &z_ref,
            cfg,
        ) {
            Ok((sens, _)) => {
                let mut point = branch_point(which, &base_params, &z_pred, symmetric, &sens);

                // Fold: the parameter component of the secant reverses.
                let secant_p = z_pred[5] - z_last[5];
                if let Some(prev) = prev_secant_p {
                    if prev != 0.0 && secant_p != 0.0 && prev.signum() != secant_p.signum() {
                        point.event = Some(BranchEvent::Fold);
                    }
                }
                prev_secant_p = Some(secant_p);

                // Stability exchange relative to the previous point.
                if let Some(last_point) = points.last() {
                    if last_point.stable != point.stable && point.event.is_none() {
                        point.event = Some(BranchEvent::StabilityChange);
                    }
                }

                let p_new = z_pred[5];
                points.push(point);
                zs.push(z_pred);
                step = (step.abs() * 1.3).min(options.max_step) * step.signum();

                if let Some(target) = options.target {
                    let dir = if zs.len() >= 2 {
                        zs[zs.len() - 1][5] - zs[zs.len() - 2][5]
                    } else {
                        step
                    };
                    if (dir > 0.0 && p_new >= target) || (dir < 0.0 && p_new <= target) {
                        break;
                    }
                }
            }
            Err(_) => {
                step *= 0.5;
                if step.abs() < options.min_step {
                    // Truncate the branch and record the failure instead of
                    // discarding the points already computed.
                    if let Some(last_point) = points.last_mut() {
                        last_point.event = Some(BranchEvent::CorrectorFailure);
                    }
                    break;
                }
            }
        }
    }

    Ok(ContinuationBranch {
        parameter: which,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{quat_to_rotation, rotation_to_quat};
    use crate::model::example_model;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    /// Quaternion whose rotation maps the magnetic third axis onto the
    /// moment, a good starting point in every regime.
    fn aligned_quat(model: &SwimmerModel) -> Vector4<f64> {
        let m = model.m;
        let z = Vector3::z();
        let axis = z.cross(&m);
        let angle = m.z.clamp(-1.0, 1.0).acos();
        let rot = if axis.norm() < 1e-12 {
            Matrix3::identity()
        } else {
            nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
                .into_inner()
        };
        rotation_to_quat(&rot)
    }

    fn default_cfg() -> IntegratorConfig {
        IntegratorConfig::default()
    }

    #[test]
    fn detects_small_psi_orbit_near_field_period() {
        let model = example_model();
        let params = Parameters::new(1.0, 0.1);
        let rec = detect_recurrence(
            &model,
            &params,
            &aligned_quat(&model),
            10.0 * TAU,
            &default_cfg(),
        )
        .unwrap();
        // body locks to the rotating field: SO(3) period = field period
        assert_relative_eq!(rec.period, TAU, max_relative = 0.05);
        assert!(rec.distance < 0.05);
    }

    #[test]
    fn shooting_converges_and_closes_orbit() {
        let model = example_model();
        let params = Parameters::new(1.0, 0.1);
        let cfg = default_cfg();
        let rec =
            detect_recurrence(&model, &params, &aligned_quat(&model), 10.0 * TAU, &cfg).unwrap();
        let orbit =
            shoot_periodic(&model, &params, &rec.q0, rec.period, rec.symmetric, &cfg).unwrap();
        assert!(orbit.residual < SHOOTING_TOL);

        // re-integrate and confirm closure on the double cover
        let rhs = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), &params, &model);
        };
        let y0 = DVector::from_column_slice(&orbit.q0);
        let (traj, _) = integrate(rhs, &y0, (0.0, orbit.period), &cfg, &[]).unwrap();
        let qf = Vector4::from_column_slice(traj.final_state().as_slice());
        assert!(quat_distance(&qf, &orbit.q0_vector()) < 1e-8);

        // trivial multiplier and stability
        let trivial = orbit.trivial_multiplier();
        assert!((trivial - Complex::new(1.0, 0.0)).norm() < 1e-6);
        assert!(orbit.stable(), "multipliers: {:?}", orbit.floquet);
    }

    #[test]
    fn shooting_reconverges_from_perturbed_guess() {
        let model = example_model();
        let params = Parameters::new(1.0, 0.1);
        let cfg = default_cfg();
        let rec =
            detect_recurrence(&model, &params, &aligned_quat(&model), 10.0 * TAU, &cfg).unwrap();
        let orbit =
            shoot_periodic(&model, &params, &rec.q0, rec.period, rec.symmetric, &cfg).unwrap();

        let mut q_pert = orbit.q0_vector();
        q_pert[1] += 1e-3;
        q_pert[3] -= 2e-3;
        let again = shoot_periodic(
            &model,
            &params,
            &q_pert,
            orbit.period * 1.001,
            orbit.symmetric,
            &cfg,
        )
        .unwrap();
        assert_relative_eq!(again.period, orbit.period, max_relative = 1e-8);
        assert!(quat_distance(&again.q0_vector(), &orbit.q0_vector()) < 1e-2);
    }

    #[test]
    fn time_reversal_symmetry_maps_orbits_to_orbits() {
        // Q(t) -> Q(-t) R2(pi) maps solutions to solutions; the
        // transformed state must also lie on a periodic orbit of the same
        // period.
        let model = example_model();
        let params = Parameters::new(1.0, 0.1);
        let cfg = default_cfg();
        let rec =
            detect_recurrence(&model, &params, &aligned_quat(&model), 10.0 * TAU, &cfg).unwrap();
        let orbit =
            shoot_periodic(&model, &params, &rec.q0, rec.period, rec.symmetric, &cfg).unwrap();

        let r2 = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let q_mapped =
            rotation_to_quat(&(quat_to_rotation(&orbit.q0_vector()).unwrap() * r2));
        let mapped = shoot_periodic(
            &model,
            &params,
            &q_mapped,
            orbit.period,
            orbit.symmetric,
            &cfg,
        )
        .unwrap();
        assert!(mapped.residual < SHOOTING_TOL);
        assert_relative_eq!(mapped.period, orbit.period, max_relative = 1e-6);
        // the shooting correction should be small: the mapped state is
        // (close to) an exact orbit point already
        assert!(quat_distance(&mapped.q0_vector(), &q_mapped) < 1e-6);
    }

    #[test]
    fn steady_state_detected_in_equilibrium_band() {
        // psi well inside the low-a equilibrium band: the trajectory
        // settles to a fixed point of the quaternion system.
        let model = example_model();
        let params = Parameters::new(0.02, std::f64::consts::FRAC_PI_2);
        let out = detect_recurrence(&model, &params, &aligned_quat(&model), 500.0, &default_cfg());
        assert!(matches!(out, Err(MagswimError::SteadyState)), "got {out:?}");
    }

    #[test]
    fn continuation_tracks_parameter_and_period() {
        let model = example_model();
        let params = Parameters::new(1.0, 0.1);
        let cfg = default_cfg();
        let rec =
            detect_recurrence(&model, &params, &aligned_quat(&model), 10.0 * TAU, &cfg).unwrap();
        let orbit =
            shoot_periodic(&model, &params, &rec.q0, rec.period, rec.symmetric, &cfg).unwrap();

        let options = ContinuationOptions {
            parameter: ContinuationParameter::MasonNumber,
            step: 0.05,
            max_step: 0.3,
            max_points: 12,
            target: Some(1.5),
            ..Default::default()
        };
        let branch = continue_branch(&model, &orbit, &options, &cfg).unwrap();
        assert!(branch.points.len() >= 3);
        assert!(branch.points.last().unwrap().a > 1.2);
        for point in &branch.points {
            // the orbit stays locked to the field: period tracks 2 pi / a
            assert_relative_eq!(point.period, TAU / point.a, max_relative = 0.05);
            assert_eq!(point.psi, 0.1);
        }

        let csv = branch.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "a,psi,period,symmetric,max_nontrivial_multiplier_abs,stable,event"
        );
        assert_eq!(csv.lines().count(), branch.points.len() + 1);
    }

    #[test]
    fn complement_basis_is_orthonormal() {
        let q = Vector4::new(0.3, -0.4, 0.5, 0.7);
        let v = orthonormal_complement(&q);
        let gram = v.transpose() * &v;
        assert!((gram - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let proj = v.transpose() * q;
        assert!(proj.norm() < 1e-12);
    }
}
