//! Right-hand sides of the governing ODE in its three equivalent
//! formulations (lab-frame vectors, (e3, B) pair, quaternion), plus the
//! quaternion/rotation maps.
//!
//! Conventions: all vectors are expressed in body components. The
//! quaternion is stored as `(q1, q2, q3, q4)` with `q4` the scalar part,
//! and parametrises the body-to-magnetic-frame rotation `Q`, so that a
//! vector with magnetic-frame components `v` has body components `Q v`.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{MagswimError, Result};
use crate::model::SwimmerModel;

/// External parameters: Mason number `a` and conical angle `psi`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Parameters {
    pub a: f64,
    pub psi: f64,
}

impl Parameters {
    pub fn new(a: f64, psi: f64) -> Self {
        Self { a, psi }
    }

    /// Sign of `cos(psi)`.
    pub fn varsigma(&self) -> f64 {
        if self.psi.cos() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// The lab-frame formulation leaves `e1`, `e2` undetermined when
    /// `sin(psi) = 0`.
    pub fn frame_formulation_valid(&self) -> bool {
        self.psi.sin().abs() > 1e-12
    }

    /// Field direction in magnetic-frame components, `(sin psi, 0, cos psi)`.
    pub fn field_magnetic(&self) -> Vector3<f64> {
        Vector3::new(self.psi.sin(), 0.0, self.psi.cos())
    }
}

/// Lab basis expressed in body components, flattened as `[e1, e2, e3]`.
#[derive(Debug, Clone, Copy)]
pub struct FrameState {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
}

impl FrameState {
    pub fn identity() -> Self {
        Self {
            e1: Vector3::x(),
            e2: Vector3::y(),
            e3: Vector3::z(),
        }
    }

    pub fn from_slice(y: &[f64]) -> Self {
        Self {
            e1: Vector3::new(y[0], y[1], y[2]),
            e2: Vector3::new(y[3], y[4], y[5]),
            e3: Vector3::new(y[6], y[7], y[8]),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(9);
        v.extend_from_slice(self.e1.as_slice());
        v.extend_from_slice(self.e2.as_slice());
        v.extend_from_slice(self.e3.as_slice());
        v
    }
}

/// Rotating external field in body components, Eq. form
/// `B(t) = sin psi (cos(at) e1 + sin(at) e2) + cos psi e3`.
pub fn field_lab(t: f64, state: &FrameState, params: &Parameters) -> Vector3<f64> {
    let (s, c) = (params.a * t).sin_cos();
    (state.e1 * c + state.e2 * s) * params.psi.sin() + state.e3 * params.psi.cos()
}

/// Lab-frame formulation: `de_i/dt = -(P B(t)) x e_i`.
pub fn rhs_frames(t: f64, y: &[f64], dy: &mut [f64], params: &Parameters, model: &SwimmerModel) {
    let state = FrameState::from_slice(y);
    let omega = model.p * field_lab(t, &state, params);
    let d1 = -omega.cross(&state.e1);
    let d2 = -omega.cross(&state.e2);
    let d3 = -omega.cross(&state.e3);
    dy[0..3].copy_from_slice(d1.as_slice());
    dy[3..6].copy_from_slice(d2.as_slice());
    dy[6..9].copy_from_slice(d3.as_slice());
}

/// Autonomous (e3, B) formulation, state flattened as `[e3, B]`:
/// `de3/dt = -(P B) x e3`, `dB/dt = (a e3 - P B) x B`.
pub fn rhs_eb(y: &[f64], dy: &mut [f64], params: &Parameters, model: &SwimmerModel) {
    let e3 = Vector3::new(y[0], y[1], y[2]);
    let b = Vector3::new(y[3], y[4], y[5]);
    let omega = model.p * b;
    let d3 = -omega.cross(&e3);
    let db = (e3 * params.a - omega).cross(&b);
    dy[0..3].copy_from_slice(d3.as_slice());
    dy[3..6].copy_from_slice(db.as_slice());
}

/// Rotation matrix `Q(q)`, norm-independent (valid for any nonzero `q`).
pub fn quat_to_rotation(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    let n2 = q.norm_squared();
    if n2 == 0.0 {
        return Err(MagswimError::ZeroQuaternion);
    }
    let (q1, q2, q3, q4) = (q[0], q[1], q[2], q[3]);
    Ok(Matrix3::new(
        q1 * q1 - q2 * q2 - q3 * q3 + q4 * q4,
        2.0 * (q1 * q2 - q3 * q4),
        2.0 * (q1 * q3 + q2 * q4),
        2.0 * (q1 * q2 + q3 * q4),
        -q1 * q1 + q2 * q2 - q3 * q3 + q4 * q4,
        2.0 * (q2 * q3 - q1 * q4),
        2.0 * (q1 * q3 - q2 * q4),
        2.0 * (q2 * q3 + q1 * q4),
        -q1 * q1 - q2 * q2 + q3 * q3 + q4 * q4,
    ) / n2)
}

/// Quaternion from a rotation matrix (Shepperd's method). Returns a unit
/// quaternion `q` with `quat_to_rotation(q) = r`.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> Vector4<f64> {
    let tr = r.trace();
    let mut q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        Vector4::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
            0.25 * s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(2, 1)] - r[(1, 2)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Vector4::new(
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Vector4::new(
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    };
    q /= q.norm();
    q
}

/// The 3x4 matrix `F(q)` of the quaternion kinematics; satisfies
/// `F(q) q = 0`.
pub fn quat_f_matrix(q: &Vector4<f64>) -> Matrix3x4<f64> {
    let (q1, q2, q3, q4) = (q[0], q[1], q[2], q[3]);
    Matrix3x4::new(
        q4, -q3, q2, -q1, //
        q3, q4, -q1, -q2, //
        -q2, q1, q4, -q3,
    )
}

/// Body angular velocity mismatch `u(q) = a Q e3 - P Q (sin psi, 0, cos psi)`.
pub fn quat_u(q: &Vector4<f64>, params: &Parameters, model: &SwimmerModel) -> Vector3<f64> {
    let rot = quat_to_rotation(q).expect("nonzero quaternion");
    rot * Vector3::z() * params.a - model.p * (rot * params.field_magnetic())
}

/// Uncorrected quaternion flow `dq/dt = F^T(q) u(q) / 2`; conserves the
/// quaternion norm analytically.
pub fn rhs_quaternion(q: &Vector4<f64>, params: &Parameters, model: &SwimmerModel) -> Vector4<f64> {
    quat_f_matrix(q).transpose() * quat_u(q, params, model) * 0.5
}

/// Norm-corrected quaternion flow,
/// `dq/dt = F^T(q) u(q) / 2 - (|q|^2 - 1) q / 2`.
pub fn rhs_quaternion_corrected(
    q: &Vector4<f64>,
    params: &Parameters,
    model: &SwimmerModel,
) -> Vector4<f64> {
    rhs_quaternion(q, params, model) - q * (0.5 * (q.norm_squared() - 1.0))
}

/// Slice adapter for the integrator.
pub fn rhs_quaternion_slice(y: &[f64], dy: &mut [f64], params: &Parameters, model: &SwimmerModel) {
    let q = Vector4::new(y[0], y[1], y[2], y[3]);
    let d = rhs_quaternion_corrected(&q, params, model);
    dy.copy_from_slice(d.as_slice());
}

/// `e3` (field rotation axis) in body components for a quaternion state.
pub fn e3_body(q: &Vector4<f64>) -> Vector3<f64> {
    quat_to_rotation(q).expect("nonzero quaternion") * Vector3::z()
}

/// Field `B` in body components for a quaternion state.
pub fn field_body(q: &Vector4<f64>, params: &Parameters) -> Vector3<f64> {
    quat_to_rotation(q).expect("nonzero quaternion") * params.field_magnetic()
}

/// Lab-frame state at `t = 0` matching a quaternion state: the body
/// components of the lab basis vectors are the columns of `Q(q)`.
pub fn frame_state_from_quat(q: &Vector4<f64>) -> Result<FrameState> {
    let rot = quat_to_rotation(q)?;
    Ok(FrameState {
        e1: rot.column(0).into(),
        e2: rot.column(1).into(),
        e3: rot.column(2).into(),
    })
}

/// Explicit `R3(phi)` rotation about the third axis.
pub fn rot3(phi: f64) -> Matrix3<f64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_model, isotropic_model};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit_quat(rng: &mut impl Rng) -> Vector4<f64> {
        let mut q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        q /= q.norm();
        q
    }

    #[test]
    fn field_lab_axes() {
        let params = Parameters::new(1.0, std::f64::consts::FRAC_PI_2);
        let frame = FrameState::identity();
        let b0 = field_lab(0.0, &frame, &params);
        assert!((b0 - Vector3::x()).norm() < 1e-15);
        let bq = field_lab(std::f64::consts::FRAC_PI_2, &frame, &params);
        assert!((bq - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn field_lab_cone_angle() {
        let params = Parameters::new(0.7, 0.3);
        let frame = FrameState::identity();
        for t in [0.0, 0.4, 2.1, 17.3] {
            let b = field_lab(t, &frame, &params);
            assert_relative_eq!(b.dot(&frame.e3), 0.3f64.cos(), epsilon = 1e-14);
            assert_relative_eq!(b.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn rhs_frames_vanishes_when_field_on_moment() {
        // At t = 0, psi = 0 the field is e3; with the frame rotated so that
        // e3 coincides with m, P B = 0 and the derivative vanishes.
        let model = example_model();
        let params = Parameters::new(0.5, 0.0);
        // build a frame whose e3 = m
        let m = model.m;
        let e1 = Vector3::x().cross(&m).normalize();
        let e2 = m.cross(&e1);
        let state = FrameState { e1, e2, e3: m };
        let mut dy = [0.0; 9];
        rhs_frames(0.0, &state.to_vec(), &mut dy, &params, &model);
        assert!(dy.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rhs_frames_isotropic_hand_value() {
        // Isotropic model, identity frame, psi = pi/2, t = 0:
        // B = e1, P B = e3 x e1 = e2, so de3/dt = -e2 x e3 = -e1.
        let model = isotropic_model();
        let params = Parameters::new(1.0, std::f64::consts::FRAC_PI_2);
        let state = FrameState::identity();
        let mut dy = [0.0; 9];
        rhs_frames(0.0, &state.to_vec(), &mut dy, &params, &model);
        let d3 = Vector3::new(dy[6], dy[7], dy[8]);
        assert!((d3 - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rhs_frames_preserves_orthonormality() {
        // d/dt (ei . ej) = 0 since the generator is a cross product.
        let model = example_model();
        let params = Parameters::new(2.0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_unit_quat(&mut rng);
        let state = frame_state_from_quat(&q).unwrap();
        let y = state.to_vec();
        let mut dy = [0.0; 9];
        rhs_frames(1.3, &y, &mut dy, &params, &model);
        let d = FrameState::from_slice(&dy);
        let pairs = [
            (state.e1, d.e1, state.e1, d.e1),
            (state.e1, d.e1, state.e2, d.e2),
            (state.e2, d.e2, state.e3, d.e3),
            (state.e3, d.e3, state.e3, d.e3),
        ];
        for (u, du, v, dv) in pairs {
            assert!((du.dot(&v) + u.dot(&dv)).abs() < 1e-13);
        }
    }

    #[test]
    fn rhs_eb_fixed_point_on_moment() {
        let model = example_model();
        let params = Parameters::new(0.0, 0.0);
        let m = model.m;
        let mut y = [0.0; 6];
        y[0..3].copy_from_slice(m.as_slice());
        y[3..6].copy_from_slice(m.as_slice());
        let mut dy = [0.0; 6];
        rhs_eb(&y, &mut dy, &params, &model);
        assert!(dy.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rhs_eb_conserves_cone_angle() {
        let model = example_model();
        let params = Parameters::new(1.7, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q = random_unit_quat(&mut rng);
            let rot = quat_to_rotation(&q).unwrap();
            let e3 = rot * Vector3::z();
            let b = rot * params.field_magnetic();
            let mut y = [0.0; 6];
            y[0..3].copy_from_slice(e3.as_slice());
            y[3..6].copy_from_slice(b.as_slice());
            let mut dy = [0.0; 6];
            rhs_eb(&y, &mut dy, &params, &model);
            let d3 = Vector3::new(dy[0], dy[1], dy[2]);
            let db = Vector3::new(dy[3], dy[4], dy[5]);
            assert!((d3.dot(&b) + e3.dot(&db)).abs() < 1e-14);
            assert!(d3.dot(&e3).abs() < 1e-14);
            assert!(db.dot(&b).abs() < 1e-14);
        }
    }

    #[test]
    fn quat_rotation_identity_and_double_cover() {
        let q = Vector4::new(0.0, 0.0, 0.0, 1.0);
        let rot = quat_to_rotation(&q).unwrap();
        assert_relative_eq!(rot, Matrix3::identity(), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_unit_quat(&mut rng);
        let r1 = quat_to_rotation(&q).unwrap();
        let r2 = quat_to_rotation(&(-q)).unwrap();
        assert_relative_eq!(r1, r2, epsilon = 1e-15);
    }

    #[test]
    fn quat_rotation_about_third_axis() {
        let theta: f64 = 0.9;
        let q = Vector4::new(0.0, 0.0, (theta / 2.0).sin(), (theta / 2.0).cos());
        let rot = quat_to_rotation(&q).unwrap();
        assert_relative_eq!(rot, rot3(theta), epsilon = 1e-14);
    }

    #[test]
    fn quat_rotation_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let q = random_unit_quat(&mut rng);
            let rot = quat_to_rotation(&q).unwrap();
            assert!(((rot.transpose() * rot) - Matrix3::identity()).abs().max() <= 1e-14);
            assert_relative_eq!(rot.determinant(), 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn rotation_quat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let q = random_unit_quat(&mut rng);
            let rot = quat_to_rotation(&q).unwrap();
            let q2 = rotation_to_quat(&rot);
            let dist = (q - q2).norm().min((q + q2).norm());
            assert!(dist < 1e-12);
        }
    }

    #[test]
    fn f_matrix_annihilates_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let q = Vector4::from_fn(|_, _| rng.gen_range(-2.0..2.0));
            assert!((quat_f_matrix(&q) * q).norm() < 1e-14);
        }
    }

    #[test]
    fn corrected_rhs_matches_uncorrected_on_unit_sphere() {
        let model = example_model();
        let params = Parameters::new(1.2, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let q = random_unit_quat(&mut rng);
        let a = rhs_quaternion(&q, &params, &model);
        let b = rhs_quaternion_corrected(&q, &params, &model);
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn corrected_rhs_contracts_norm() {
        let model = example_model();
        let params = Parameters::new(1.2, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let q = random_unit_quat(&mut rng) * 1.1;
        let dq = rhs_quaternion_corrected(&q, &params, &model);
        // F(q) q = 0 makes the uncorrected part norm-neutral, so
        // d|q|^2/dt = -|q|^2 (|q|^2 - 1) < 0 here.
        let expected = -q.norm_squared() * (q.norm_squared() - 1.0);
        assert_relative_eq!(2.0 * q.dot(&dq), expected, epsilon = 1e-12);
    }

    #[test]
    fn quaternion_flow_generates_rotation_kinematics() {
        // dQ/dt = [u x] Q checked by finite differences of Q(q(t)).
        let model = example_model();
        let params = Parameters::new(0.8, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let q = random_unit_quat(&mut rng);
        let u = quat_u(&q, &params, &model);
        let dq = rhs_quaternion(&q, &params, &model);
        let h = 1e-6;
        let qp = q + dq * h;
        let qm = q - dq * h;
        let dr_fd = (quat_to_rotation(&qp).unwrap() - quat_to_rotation(&qm).unwrap()) / (2.0 * h);
        let dr = crate::model::cross_matrix(&u) * quat_to_rotation(&q).unwrap();
        assert!((dr_fd - dr).abs().max() < 1e-6);
    }
}
