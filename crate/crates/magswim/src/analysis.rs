//! Curves traced by the magnetic moment in the magnetic frame, circle
//! fitting, and error metrics between numerical and analytical results.

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3, Vector4};
use serde::Serialize;

use crate::dynamics::quat_to_rotation;
use crate::error::{MagswimError, Result};
use crate::integrator::Trajectory;
use crate::model::SwimmerModel;

/// Moment in magnetic-frame components for a quaternion state,
/// `Q(q)^T m`.
pub fn moment_in_magnetic_frame(model: &SwimmerModel, q: &Vector4<f64>) -> Result<Vector3<f64>> {
    Ok(quat_to_rotation(q)?.transpose() * model.m)
}

/// Time-stamped magnetic-frame curve of the moment.
#[derive(Debug, Clone, Serialize)]
pub struct MagneticFrameCurve {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub points: Vec<Vector3<f64>>,
}

impl MagneticFrameCurve {
    /// CSV table `t,mx,my,mz` (full precision).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mx,my,mz\n");
        for (t, p) in self.times.iter().zip(&self.points) {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                t, p.x, p.y, p.z
            ));
        }
        out
    }
}

/// Sample the magnetic-frame curve of a quaternion trajectory uniformly
/// over `[t_start, end]` of the trajectory.
pub fn magnetic_frame_curve(
    model: &SwimmerModel,
    traj: &Trajectory,
    t_start: f64,
    n_samples: usize,
) -> Result<MagneticFrameCurve> {
    let t0 = t_start.max(traj.start_time());
    let t1 = traj.end_time();
    if t1 <= t0 || n_samples < 2 {
        return Err(MagswimError::InvalidConfig(
            "curve sampling needs an increasing span and at least 2 samples".into(),
        ));
    }
    let mut times = Vec::with_capacity(n_samples);
    let mut points = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let t = t0 + (t1 - t0) * i as f64 / (n_samples - 1) as f64;
        let y = traj.sample(t);
        let q = Vector4::from_column_slice(y.as_slice());
        times.push(t);
        points.push(moment_in_magnetic_frame(model, &q)?);
    }
    Ok(MagneticFrameCurve { times, points })
}

/// Least-squares circle through a 3D point cloud: principal-plane
/// projection, algebraic (Kasa) initialisation, Gauss-Newton geometric
/// refinement.
#[derive(Debug, Clone, Serialize)]
pub struct CircleFit {
    #[serde(skip)]
    pub center: Vector3<f64>,
    pub radius: f64,
    #[serde(skip)]
    pub normal: Vector3<f64>,
    /// RMS distance of the points to the fitted circle (in 3D).
    pub rms: f64,
    pub center_coords: [f64; 3],
    pub normal_coords: [f64; 3],
}

pub fn fit_circle(points: &[Vector3<f64>]) -> Result<CircleFit> {
    if points.len() < 3 {
        return Err(MagswimError::Incomparable);
    }
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // normal = direction of least spread
    let mut min_idx = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
            min_idx = i;
        }
    }
    let normal: Vector3<f64> = eig.eigenvectors.column(min_idx).into_owned();
    let (i1, i2) = match min_idx {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    if eig.eigenvalues[i1].max(eig.eigenvalues[i2]) < 1e-24 {
        return Err(MagswimError::Incomparable);
    }
    let u: Vector3<f64> = eig.eigenvectors.column(i1).into_owned();
    let v: Vector3<f64> = eig.eigenvectors.column(i2).into_owned();

    // In-plane coordinates.
    let xy: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            Vector2::new(d.dot(&u), d.dot(&v))
        })
        .collect();

    // Kasa fit: minimise |x|^2 - 2 c . x - k over (c, k).
    let mut a_mat = DMatrix::zeros(xy.len(), 3);
    let mut b_vec = DVector::zeros(xy.len());
    for (i, p) in xy.iter().enumerate() {
        a_mat[(i, 0)] = 2.0 * p.x;
        a_mat[(i, 1)] = 2.0 * p.y;
        a_mat[(i, 2)] = 1.0;
        b_vec[i] = p.norm_squared();
    }
    let sol = a_mat
        .svd(true, true)
        .solve(&b_vec, 1e-14)
        .map_err(|_| MagswimError::Incomparable)?;
    let mut cx = sol[0];
    let mut cy = sol[1];
    let mut r = (sol[2] + cx * cx + cy * cy).max(0.0).sqrt();
    if !(r.is_finite() && r > 0.0) {
        return Err(MagswimError::Incomparable);
    }

    // Gauss-Newton on the geometric distance in the plane.
    for _ in 0..30 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for p in &xy {
            let dx = p.x - cx;
            let dy = p.y - cy;
            let d = (dx * dx + dy * dy).sqrt();
            if d < 1e-14 {
                continue;
            }
            let res = d - r;
            let grad = Vector3::new(-dx / d, -dy / d, -1.0);
            jtj += grad * grad.transpose();
            jtr += grad * res;
        }
        let delta = match jtj.try_inverse() {
            Some(inv) => inv * jtr,
            None => break,
        };
        cx -= delta[0];
        cy -= delta[1];
        r -= delta[2];
        if delta.norm() < 1e-14 * (1.0 + r.abs()) {
            break;
        }
    }

    // 3D residual: distance to the circle as a space curve.
    let center = centroid + u * cx + v * cy;
    let mut ss = 0.0;
    for p in points {
        let d = p - center;
        let z = d.dot(&normal);
        let in_plane = (d - normal * z).norm();
        ss += (in_plane - r) * (in_plane - r) + z * z;
    }
    let rms = (ss / n).sqrt();

    Ok(CircleFit {
        center,
        radius: r,
        normal,
        rms,
        center_coords: [center.x, center.y, center.z],
        normal_coords: [normal.x, normal.y, normal.z],
    })
}

/// Relative period mismatch `|numeric - analytic| / |analytic|`.
pub fn compare_period(numeric: f64, analytic: f64) -> Result<f64> {
    if analytic == 0.0 || !analytic.is_finite() || !numeric.is_finite() {
        return Err(MagswimError::Incomparable);
    }
    Ok((numeric - analytic).abs() / analytic.abs())
}

/// One-sided Hausdorff distance from `a` to `b`: insensitive to phase or
/// parametrisation, only to the traced sets.
pub fn hausdorff_one_sided(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MagswimError::Incomparable);
    }
    let mut worst: f64 = 0.0;
    for p in a {
        let mut nearest = f64::INFINITY;
        for q in b {
            nearest = nearest.min((p - q).norm_squared());
        }
        worst = worst.max(nearest);
    }
    Ok(worst.sqrt())
}

/// Symmetric Hausdorff distance.
pub fn hausdorff_symmetric(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<f64> {
    Ok(hausdorff_one_sided(a, b)?.max(hausdorff_one_sided(b, a)?))
}

/// Phase-free curve comparison: `(max, mean)` over samples of `numeric`
/// of the distance to the nearest sample of `predicted`.
pub fn compare_curves(
    numeric: &[Vector3<f64>],
    predicted: &[Vector3<f64>],
) -> Result<(f64, f64)> {
    if numeric.is_empty() || predicted.is_empty() {
        return Err(MagswimError::Incomparable);
    }
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for p in numeric {
        let mut nearest = f64::INFINITY;
        for q in predicted {
            nearest = nearest.min((p - q).norm_squared());
        }
        let nearest = nearest.sqrt();
        worst = worst.max(nearest);
        total += nearest;
    }
    Ok((worst, total / numeric.len() as f64))
}
