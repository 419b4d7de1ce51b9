//! Closed-form asymptotic predictions in the three regimes: low Mason
//! number, high Mason number (averaging), and small conical angle.
//!
//! Epsilon bookkeeping: the high-a regime uses `epsilon = 1/a`, the
//! small-psi regime uses `epsilon = sin psi`; each prediction stores its
//! own epsilon to avoid unit confusion.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector3, Vector4};
use serde::Serialize;
use std::f64::consts::{PI, TAU};

use crate::dynamics::{rot3, FrameState, Parameters};
use crate::error::{MagswimError, Result};
use crate::integrator::{integrate, IntegratorConfig};
use crate::model::{PSpectrum, SwimmerModel};

/// Tolerance on `||psi - pi/2| - iota|` below which the low-a reduced flow
/// sits on the infinite-period boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RotationDirection {
    Clockwise,
    Anticlockwise,
}

/// Low Mason number: either a pair of relative equilibria of the reduced
/// phase equation, or a periodic orbit with a closed-form period.
#[derive(Debug, Clone, Serialize)]
pub enum LowAPrediction {
    Equilibrium {
        lambda_stable: f64,
        lambda_unstable: f64,
    },
    Periodic {
        /// Period in rescaled time `T = a t`.
        period_rescaled: f64,
        /// Period in physical time, `period_rescaled / a`.
        period_physical: f64,
        direction: RotationDirection,
    },
}

/// Low-a reduced dynamics: equilibria for `|psi - pi/2| < iota`, otherwise
/// a periodic orbit of rescaled period
/// `2 pi cos(iota) / sqrt(cos(iota + psi) cos(iota - psi))`.
pub fn lowa_predict(spec: &PSpectrum, params: &Parameters) -> Result<LowAPrediction> {
    let psi = params.psi;
    let iota = spec.iota;
    if ((psi - PI / 2.0).abs() - iota).abs() < BOUNDARY_TOL {
        return Err(MagswimError::InfinitePeriodBoundary);
    }
    if psi.cos().abs() < psi.sin() * iota.tan() {
        let offset = (psi.cos() * iota.cos() / (psi.sin() * iota.sin())).acos();
        Ok(LowAPrediction::Equilibrium {
            lambda_stable: spec.zeta + PI / 2.0 - offset,
            lambda_unstable: spec.zeta + PI / 2.0 + offset,
        })
    } else {
        let period_rescaled =
            TAU * iota.cos() / ((iota + psi).cos() * (iota - psi).cos()).sqrt();
        let direction = if psi < PI / 2.0 - iota {
            RotationDirection::Clockwise
        } else {
            RotationDirection::Anticlockwise
        };
        Ok(LowAPrediction::Periodic {
            period_rescaled,
            period_physical: period_rescaled / params.a,
            direction,
        })
    }
}

/// Right-hand side of the reduced low-a phase equation,
/// `dlambda/dT = cos psi - sin psi tan(iota) sin(lambda - zeta)`.
pub fn lowa_phase_rhs(spec: &PSpectrum, params: &Parameters, lambda: f64) -> f64 {
    params.psi.cos() - params.psi.sin() * spec.iota.tan() * (lambda - spec.zeta).sin()
}

/// Leading-order rotation axis reconstructed from the phase,
/// `e3 = cos psi b0 + sin psi (cos lambda b1 + sin lambda b2)`.
pub fn lowa_axis_from_phase(spec: &PSpectrum, params: &Parameters, lambda: f64) -> Vector3<f64> {
    spec.beta0 * params.psi.cos()
        + (spec.beta1 * lambda.cos() + spec.beta2 * lambda.sin()) * params.psi.sin()
}

/// Integrate the reduced phase equation over a rescaled-time span and
/// return `(T_k, lambda_k)` samples.
pub fn lowa_reduced_flow(
    spec: &PSpectrum,
    params: &Parameters,
    lambda0: f64,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
) -> Result<Vec<(f64, f64)>> {
    let rhs = |_t: f64, y: &nalgebra::DVector<f64>, dy: &mut nalgebra::DVector<f64>| {
        dy[0] = lowa_phase_rhs(spec, params, y[0]);
    };
    let y0 = nalgebra::DVector::from_vec(vec![lambda0]);
    let (traj, _) = integrate(rhs, &y0, t_span, cfg, &[])?;
    Ok(traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, y)| (t, y[0]))
        .collect())
}

/// Second-order averaged drift term of the guiding system,
/// `g2 = sin^2(psi)/2 (P (c1 x P c2) + P (P c1 x c2) - (P c1) x (P c2))`.
pub fn guiding_g2(
    c1: &Vector3<f64>,
    c2: &Vector3<f64>,
    params: &Parameters,
    model: &SwimmerModel,
) -> Vector3<f64> {
    let p = &model.p;
    let pc1 = p * c1;
    let pc2 = p * c2;
    (p * c1.cross(&pc2) + p * pc1.cross(c2) - pc1.cross(&pc2)) * (0.5 * params.psi.sin().powi(2))
}

/// Guiding (averaged) system at large `a`, in physical time:
/// order 0 is `dc_i/dt = -cos psi (P c3) x c_i`; order 1 adds the
/// `epsilon g2` drift with `epsilon = 1/a`.
pub fn higha_guiding_rhs(
    y: &[f64],
    dy: &mut [f64],
    params: &Parameters,
    model: &SwimmerModel,
    order: u8,
) {
    let c = FrameState::from_slice(y);
    let mut omega = model.p * c.e3 * (-params.psi.cos());
    if order >= 1 {
        omega += guiding_g2(&c.e1, &c.e2, params, model) / params.a;
    }
    let d1 = omega.cross(&c.e1);
    let d2 = omega.cross(&c.e2);
    let d3 = omega.cross(&c.e3);
    dy[0..3].copy_from_slice(d1.as_slice());
    dy[3..6].copy_from_slice(d2.as_slice());
    dy[6..9].copy_from_slice(d3.as_slice());
}

/// High Mason number prediction: alignment of `e3` with `varsigma b0` and
/// the slow secular rotation of `(e1, e2)` about it.
#[derive(Debug, Clone)]
pub struct HighAPrediction {
    /// `varsigma b0`; the axis `e3` aligns with at leading order.
    pub aligned_axis: Vector3<f64>,
    /// Physical-time drift rate of `tau`,
    /// `-varsigma sigma1 sigma2 sin^2(psi) / (2 a cos iota)`.
    pub tau_rate: f64,
    /// First-order equilibrium offset `x` of the frame from the stable
    /// manifold.
    pub x_offset: Vector3<f64>,
    pub tau0: f64,
    pub epsilon: f64,
    varsigma: f64,
    params: Parameters,
    spec: PSpectrum,
    model: SwimmerModel,
}

impl HighAPrediction {
    pub fn tau(&self, t: f64) -> f64 {
        self.tau0 + self.tau_rate * t
    }

    /// Stable-manifold frame at drift phase `tau`.
    pub fn manifold_frame(&self, tau: f64) -> FrameState {
        let s = &self.spec;
        let vs = self.varsigma;
        FrameState {
            e1: s.beta1 * tau.cos() + s.beta2 * tau.sin(),
            e2: (s.beta1 * (-tau.sin()) + s.beta2 * tau.cos()) * vs,
            e3: s.beta0 * vs,
        }
    }

    /// Predicted lab frame at time `t`, including the first-order
    /// correction `(x + u1(a t)) x f_i`.
    pub fn frame_at(&self, t: f64) -> FrameState {
        let f = self.manifold_frame(self.tau(t));
        let big_t = self.params.a * t;
        let u1 = (self.model.p * f.e1 * (-big_t.sin()) + self.model.p * f.e2 * big_t.cos())
            * self.params.psi.sin();
        let w = self.x_offset + u1;
        FrameState {
            e1: f.e1 + w.cross(&f.e1) * self.epsilon,
            e2: f.e2 + w.cross(&f.e2) * self.epsilon,
            e3: f.e3 + w.cross(&f.e3) * self.epsilon,
        }
    }

    /// Predicted position of the magnetic moment in the magnetic frame.
    pub fn magnetic_curve_point(&self, t: f64) -> Vector3<f64> {
        let e = self.frame_at(t);
        let m = self.model.m;
        rot3(self.params.a * t).transpose() * Vector3::new(e.e1.dot(&m), e.e2.dot(&m), e.e3.dot(&m))
    }

    pub fn sample_curve(&self, t_end: f64, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| self.magnetic_curve_point(t_end * i as f64 / n as f64))
            .collect()
    }
}

pub fn higha_predict(
    spec: &PSpectrum,
    model: &SwimmerModel,
    params: &Parameters,
    tau0: f64,
) -> Result<HighAPrediction> {
    if params.psi.cos().abs() < 1e-12 {
        return Err(MagswimError::RegimeViolation(
            "high-a averaging degenerates at psi = pi/2 (sign of cos psi undefined)".into(),
        ));
    }
    let vs = params.varsigma();
    let sig12 = spec.sigma1 * spec.sigma2;
    let epsilon = 1.0 / params.a;
    let tau_rate = -vs * sig12 * params.psi.sin().powi(2) / (2.0 * params.a * spec.iota.cos());

    let f1 = spec.beta1 * tau0.cos() + spec.beta2 * tau0.sin();
    let f2 = (spec.beta1 * (-tau0.sin()) + spec.beta2 * tau0.cos()) * vs;
    let f3 = spec.beta0 * vs;
    let g2 = guiding_g2(&f1, &f2, params, model);
    let proj = nalgebra::Matrix3::identity() - f3 * f3.transpose();
    let x_offset = proj * model.p.transpose() * f3.cross(&g2)
        / (sig12 * params.psi.cos() * spec.iota.cos());

    Ok(HighAPrediction {
        aligned_axis: f3,
        tau_rate,
        x_offset,
        tau0,
        epsilon,
        varsigma: vs,
        params: *params,
        spec: spec.clone(),
        model: model.clone(),
    })
}

/// Second-order (harmonic-balance) coefficients of the small-psi
/// correction `u2 = w1 b1 + w2 b2` with
/// `w(theta) = w0 + wc cos(2 theta) + ws sin(2 theta)`.
#[derive(Debug, Clone)]
pub struct SecondOrderHarmonics {
    pub w0: Vector2<f64>,
    pub wc: Vector2<f64>,
    pub ws: Vector2<f64>,
}

/// Small conical angle prediction: the first-order trajectory of the
/// magnetic moment in the magnetic frame is a circle of radius `radius_r`
/// about `center_m0`.
#[derive(Debug, Clone)]
pub struct SmallPsiPrediction {
    pub a_matrix: Matrix2<f64>,
    pub tilde_tau1: f64,
    pub tilde_tau2: f64,
    pub center_m0: Vector3<f64>,
    pub radius_r: f64,
    /// Radius polynomial coefficients `c0..c4`.
    pub c: [f64; 5],
    pub epsilon: f64,
    pub varsigma: f64,
    /// Set when `sin psi > 0.35`, outside the advertised accuracy range.
    pub outside_advertised_range: bool,
    a: f64,
    /// `u1(theta) = h_cos (vs cos, sin) + h_rot (-vs sin, cos)`.
    h_cos: Matrix2<f64>,
    h_rot: Matrix2<f64>,
    second_order: Option<SecondOrderHarmonics>,
}

impl SmallPsiPrediction {
    /// First-order in-plane coefficients `(u1, u2)` at phase `theta = a t`.
    pub fn u1(&self, theta: f64) -> Vector2<f64> {
        let vs = self.varsigma;
        let (s, c) = theta.sin_cos();
        self.h_cos * Vector2::new(vs * c, s) + self.h_rot * Vector2::new(-vs * s, c)
    }

    /// Predicted magnetic-frame position of the moment at phase `theta`,
    /// to the stored order.
    pub fn curve_point(&self, theta: f64) -> Vector3<f64> {
        let vs = self.varsigma;
        let u = self.u1(theta);
        let mut v = Vector3::new(-u[1], vs * u[0], 0.0) * self.epsilon;
        v.z += vs;
        if let Some(h) = &self.second_order {
            let (s2, c2) = (2.0 * theta).sin_cos();
            let w = h.w0 + h.wc * c2 + h.ws * s2;
            // The slow phase oscillates at first order, which shifts the
            // first-order circle's phase; that feeds back into the curve at
            // second order alongside the u2 correction.
            let tau1 = self.tilde_tau1 * theta.cos() + self.tilde_tau2 * theta.sin();
            v += Vector3::new(
                -w[1] + vs * tau1 * u[0],
                vs * w[0] + tau1 * u[1],
                -vs * 0.5 * u.norm_squared(),
            ) * self.epsilon.powi(2);
        }
        rot3(theta).transpose() * v
    }

    pub fn sample_curve(&self, n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|i| self.curve_point(TAU * i as f64 / n as f64)).collect()
    }

    pub fn second_order(&self) -> Option<&SecondOrderHarmonics> {
        self.second_order.as_ref()
    }
}

/// Evaluate the small-psi prediction at the given order (1 or 2).
///
/// The order-2 harmonic coefficients are obtained by projecting the
/// second-order balance on `b1`, `b2`, extracting the Fourier content of
/// the known quadratic forcing by quadrature, and solving the resulting
/// linear systems per harmonic.
pub fn smallpsi_predict(
    model: &SwimmerModel,
    spec: &PSpectrum,
    params: &Parameters,
    order: u8,
) -> Result<SmallPsiPrediction> {
    let a = params.a;
    if a <= 0.0 {
        return Err(MagswimError::RegimeViolation("Mason number must be positive".into()));
    }
    let vs = params.varsigma();
    let eps = params.psi.sin().abs();

    let p = &model.p;
    let (b0, b1, b2) = (spec.beta0, spec.beta1, spec.beta2);
    let pb1 = p * b1;
    let pb2 = p * b2;
    let q11 = pb1.dot(&b1);
    let q12 = pb1.dot(&b2); // P b1 . b2
    let q21 = pb2.dot(&b1); // P b2 . b1
    let q22 = pb2.dot(&b2);
    let p10 = pb1.dot(&b0);
    let p20 = pb2.dot(&b0);

    let a_matrix = Matrix2::new(-q21, q11, -q22, q12);
    let s = spec.sigma1 * spec.sigma2 * spec.iota.cos();
    // Displayed identity for the resolvent determinant.
    let det = s * s + a * a * (a_matrix * a_matrix).trace() + a.powi(4);
    assert!(
        det > 1e-14,
        "det(a^2 I + A^2) = {det} vanished; impossible for sigma1 sigma2 cos iota > 0"
    );

    let resolvent = (Matrix2::identity() * (a * a) + a_matrix * a_matrix)
        .try_inverse()
        .expect("resolvent invertible");
    let h_cos = -resolvent * a_matrix * a; // multiplies (vs cos, sin)
    let h_rot = -resolvent * a_matrix * a_matrix; // multiplies (-vs sin, cos)

    // tilde tau coefficients of tau^[1], from the b0 projection of the
    // first-order balance: vs d(tau1)/dt = lead . u1 - cos p10 - vs sin p20
    // with lead = (p20, -p10), matched per harmonic of theta.
    let lead = Vector2::new(p20, -p10);
    let tilde_tau1 = (-vs * lead.dot(&(h_cos * Vector2::y()))
        + lead.dot(&(h_rot * Vector2::x()))
        + p20)
        / a;
    let tilde_tau2 = (lead.dot(&(h_cos * Vector2::x()))
        + vs * lead.dot(&(h_rot * Vector2::y()))
        - vs * p10)
        / a;

    // Reference radius-polynomial coefficients (kept for inspection; the
    // reported circle below is computed directly from the first-order
    // solution, which direct integration confirms).
    let diff = q11 - q22;
    let sum = q12 + q21;
    let quad = -p10 * p10 - p20 * p20 + spec.sigma1.powi(2) + spec.sigma2.powi(2);
    let c0 = s * s * (diff * diff + sum * sum);
    let c1 = 2.0 * s * (-vs * diff * quad - 4.0 * sum * p10 * p20);
    let c2 = -2.0 * s * (diff * diff + sum * sum) + quad * quad + 4.0 * p10 * p10 * p20 * p20;
    let c3 = 2.0 * vs * quad * diff + 4.0 * p10 * p20 * sum;
    let c4 = diff * diff + sum * sum;

    // The first-order in-plane curve R3^T(theta) (-u2, vs u1) is a trig
    // polynomial of degree 2 tracing a circle; its mean and radius are
    // recovered exactly by equispaced quadrature.
    let u1_at = |theta: f64| -> Vector2<f64> {
        let (st, ct) = theta.sin_cos();
        h_cos * Vector2::new(vs * ct, st) + h_rot * Vector2::new(-vs * st, ct)
    };
    let plane_point = |theta: f64| -> Vector2<f64> {
        let u = u1_at(theta);
        let (st, ct) = theta.sin_cos();
        // rows of R3(theta)^T applied to (-u2, vs u1)
        Vector2::new(ct * (-u[1]) + st * (vs * u[0]), -st * (-u[1]) + ct * (vs * u[0]))
    };
    let nq = 16;
    let mut mean = Vector2::zeros();
    for k in 0..nq {
        mean += plane_point(TAU * k as f64 / nq as f64);
    }
    mean /= nq as f64;
    let mut radius1 = 0.0;
    for k in 0..nq {
        radius1 += (plane_point(TAU * k as f64 / nq as f64) - mean).norm();
    }
    radius1 /= nq as f64;
    let radius_r = eps * radius1;
    let center_m0 = Vector3::new(eps * mean[0], eps * mean[1], vs);

    let mut prediction = SmallPsiPrediction {
        a_matrix,
        tilde_tau1,
        tilde_tau2,
        center_m0,
        radius_r,
        c: [c0, c1, c2, c3, c4],
        epsilon: eps,
        varsigma: vs,
        outside_advertised_range: eps > 0.35,
        a,
        h_cos,
        h_rot,
        second_order: None,
    };

    if order >= 2 {
        prediction.second_order = Some(solve_second_order(model, spec, &prediction, vs));
    }
    Ok(prediction)
}

/// Harmonic balance for `u2`: collect the known quadratic forcing of the
/// second-order balance projected on `(b1, b2)`, Fourier-analyse it, and
/// solve per harmonic.
fn solve_second_order(
    model: &SwimmerModel,
    spec: &PSpectrum,
    first: &SmallPsiPrediction,
    vs: f64,
) -> SecondOrderHarmonics {
    let a = first.a;
    let p = &model.p;
    let (b0, b1, b2) = (spec.beta0, spec.beta1, spec.beta2);
    let a_matrix = first.a_matrix;

    let forcing = |theta: f64| -> Vector2<f64> {
        let u = first.u1(theta);
        let u1v = b1 * u[0] + b2 * u[1];
        // du1/dtheta * a = physical-time derivative of u1.
        let h = 1e-6;
        let dudtheta = (first.u1(theta + h) - first.u1(theta - h)) / (2.0 * h);
        let du1v = (b1 * dudtheta[0] + b2 * dudtheta[1]) * a;
        let tau1 = first.tilde_tau1 * theta.cos() + first.tilde_tau2 * theta.sin();
        let dtau1 = a * (-first.tilde_tau1 * theta.sin() + first.tilde_tau2 * theta.cos());

        let cross0 = u1v.cross(&b0);
        let term_tau = cross0 * (vs * dtau1);
        let term_comm = u1v.cross(&du1v) * 0.5;
        let term_p = p * u1v.cross(&cross0) * 0.5;
        let term_field =
            p * (u1v.cross(&b1) * theta.cos() + u1v.cross(&b2) * (vs * theta.sin()));
        // The field phase itself oscillates at first order (theta carries
        // tau1), giving an extra forcing along the phase derivative of the
        // field direction.
        let term_phase = p * (b1 * (-theta.sin()) + b2 * (vs * theta.cos())) * tau1;
        let g = -(term_tau + term_comm + term_p + term_field + term_phase);
        Vector2::new(g.dot(&b1), g.dot(&b2))
    };

    // Fourier extraction; the forcing is a trig polynomial of degree 2 so
    // a 64-point trapezoid rule is exact to round-off.
    let n = 64;
    let mut g0 = Vector2::zeros();
    let mut gc = Vector2::zeros();
    let mut gs = Vector2::zeros();
    for i in 0..n {
        let theta = TAU * i as f64 / n as f64;
        let g = forcing(theta);
        g0 += g;
        gc += g * (2.0 * theta).cos();
        gs += g * (2.0 * theta).sin();
    }
    g0 /= n as f64;
    gc *= 2.0 / n as f64;
    gs *= 2.0 / n as f64;

    // Mean: A w0 = g0. Second harmonic: block system
    // [A, 2aI; -2aI, A] (wc; ws) = (gc; gs).
    let w0 = a_matrix.try_inverse().expect("A invertible") * g0;
    let mut block = Matrix4::zeros();
    block.fixed_view_mut::<2, 2>(0, 0).copy_from(&a_matrix);
    block
        .fixed_view_mut::<2, 2>(0, 2)
        .copy_from(&(Matrix2::identity() * (2.0 * a)));
    block
        .fixed_view_mut::<2, 2>(2, 0)
        .copy_from(&(Matrix2::identity() * (-2.0 * a)));
    block.fixed_view_mut::<2, 2>(2, 2).copy_from(&a_matrix);
    let rhs = Vector4::new(gc[0], gc[1], gs[0], gs[1]);
    let sol = block.try_inverse().expect("second-harmonic system invertible") * rhs;

    SecondOrderHarmonics {
        w0,
        wc: Vector2::new(sol[0], sol[1]),
        ws: Vector2::new(sol[2], sol[3]),
    }
}
