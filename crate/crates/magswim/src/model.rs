//! Swimmer model construction: drag-matrix ingestion, mobility, and the
//! singular structure of the torque map `P = M22 [m x]`.

use nalgebra::{Matrix3, Matrix6, Vector3};
use serde::Serialize;

use crate::error::{MagswimError, Result};

/// Relative tolerance below which `sigma2` is treated as zero and the
/// swimmer rejected as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Raw 6x6 drag matrix in non-dimensional drag units, as produced by an
/// exterior-Stokes solver. Not necessarily exactly symmetric.
#[derive(Debug, Clone)]
pub struct DragMatrix {
    pub entries: Matrix6<f64>,
    /// Max-norm of `D - D^T`, recorded at load time for diagnostics.
    pub asymmetry: f64,
}

/// Swimmer model: symmetrized mobility, its rotational block, the unit
/// magnetic moment and the derived matrix `P = M22 [m x]`.
#[derive(Debug, Clone)]
pub struct SwimmerModel {
    pub mobility: Matrix6<f64>,
    pub m22: Matrix3<f64>,
    pub m: Vector3<f64>,
    pub p: Matrix3<f64>,
}

/// Singular structure of `P`: singular values `sigma1 >= sigma2 > 0`
/// (`sigma0 = 0` implicit), right/left singular triples, and the material
/// angles `iota`, `zeta`.
#[derive(Debug, Clone, Serialize)]
pub struct PSpectrum {
    pub sigma1: f64,
    pub sigma2: f64,
    #[serde(skip)]
    pub beta0: Vector3<f64>,
    #[serde(skip)]
    pub beta1: Vector3<f64>,
    #[serde(skip)]
    pub beta2: Vector3<f64>,
    #[serde(skip)]
    pub eta0: Vector3<f64>,
    #[serde(skip)]
    pub eta1: Vector3<f64>,
    #[serde(skip)]
    pub eta2: Vector3<f64>,
    pub iota: f64,
    pub zeta: f64,
    /// Sign convention used for the (beta1, beta2) pair, recorded so that
    /// downstream outputs can state which branch of `zeta` they use.
    pub sign_convention: &'static str,
}

/// Skew matrix `[a x]` such that `[a x] b = a x b`.
pub fn cross_matrix(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Parse a drag matrix from plain text: 6 rows of 6 whitespace-separated
/// numbers, `#`-comment lines allowed.
pub fn load_drag_matrix(source: &str) -> Result<DragMatrix> {
    let mut values = Vec::with_capacity(36);
    for line in source.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| MagswimError::DragParse(format!("invalid number {tok:?}")))?;
            values.push(v);
        }
    }
    if values.len() != 36 {
        return Err(MagswimError::DragParse(format!(
            "expected 36 numbers, found {}",
            values.len()
        )));
    }
    let entries = Matrix6::from_row_slice(&values);
    let asymmetry = (entries - entries.transpose()).abs().max();
    Ok(DragMatrix { entries, asymmetry })
}

/// Symmetrized mobility `M = (D^-1 + D^-T) / 2`.
fn symmetrized_mobility(drag: &DragMatrix) -> Result<Matrix6<f64>> {
    let inv = drag
        .entries
        .try_inverse()
        .ok_or(MagswimError::SingularDrag)?;
    let mobility = (inv + inv.transpose()) * 0.5;
    let min_eig = mobility
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig <= 0.0 {
        return Err(MagswimError::MobilityNotPositiveDefinite { min_eig });
    }
    Ok(mobility)
}

/// Build the swimmer model from a drag matrix and a magnetic moment.
/// The moment is normalized internally.
pub fn build_model(drag: &DragMatrix, m: Vector3<f64>) -> Result<SwimmerModel> {
    let norm = m.norm();
    if norm == 0.0 {
        return Err(MagswimError::ZeroMoment);
    }
    let m = m / norm;
    let mobility = symmetrized_mobility(drag)?;
    let m22 = mobility.fixed_view::<3, 3>(3, 3).into_owned();
    let p = m22 * cross_matrix(&m);
    Ok(SwimmerModel { mobility, m22, m, p })
}

/// Compute the singular structure of `P` with the sign and handedness
/// conventions fixed:
/// - `beta0 = m` exactly, `eta0 = M22^-1 m / ||.||` (so `beta0 . eta0 > 0`),
/// - `eta_i = P beta_i / sigma_i` for i = 1, 2,
/// - if `det(beta0 | beta1 | beta2) < 0`, flip `beta2` and `eta2`,
/// - `zeta = atan2(eta0 . beta1, -eta0 . beta2)`.
pub fn compute_spectrum(model: &SwimmerModel) -> Result<PSpectrum> {
    let svd = model.p.svd(true, true);
    let u = svd.u.expect("svd with vectors");
    let vt = svd.v_t.expect("svd with vectors");
    // nalgebra returns singular values in descending order.
    let sigma1 = svd.singular_values[0];
    let sigma2 = svd.singular_values[1];
    if sigma2 <= DEGENERACY_TOL * sigma1 {
        return Err(MagswimError::DegenerateSpectrum {
            sigma2,
            tol: DEGENERACY_TOL,
        });
    }

    let beta0 = model.m;
    let eta0_raw = model
        .m22
        .try_inverse()
        .ok_or(MagswimError::SingularDrag)?
        * model.m;
    let eta0 = eta0_raw / eta0_raw.norm();

    let mut beta1: Vector3<f64> = vt.row(0).transpose();
    let mut beta2: Vector3<f64> = vt.row(1).transpose();
    // Re-derive the left vectors from the pairing constraint so that
    // P beta_i = sigma_i eta_i holds with the chosen beta signs.
    let mut eta1: Vector3<f64> = u.column(0).into();
    let mut eta2: Vector3<f64> = u.column(1).into();
    if (model.p * beta1).dot(&eta1) < 0.0 {
        eta1 = -eta1;
    }
    if (model.p * beta2).dot(&eta2) < 0.0 {
        eta2 = -eta2;
    }
    if Matrix3::from_columns(&[beta0, beta1, beta2]).determinant() < 0.0 {
        beta2 = -beta2;
        eta2 = -eta2;
    }
    // Fix the remaining joint sign of (beta1, eta1) so that beta1 has a
    // nonnegative component along a fixed reference direction; any
    // consistent choice only shifts zeta by pi.
    let reference = if beta0.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let probe = reference - beta0 * reference.dot(&beta0);
    if beta1.dot(&probe) < 0.0 {
        beta1 = -beta1;
        eta1 = -eta1;
        // Restore handedness after the single flip.
        beta2 = -beta2;
        eta2 = -eta2;
    }

    let cos_iota = beta0.dot(&eta0).clamp(-1.0, 1.0);
    let iota = cos_iota.acos();
    let mut zeta = f64::atan2(eta0.dot(&beta1), -eta0.dot(&beta2));
    if zeta < 0.0 {
        zeta += std::f64::consts::TAU;
    }

    Ok(PSpectrum {
        sigma1,
        sigma2,
        beta0,
        beta1,
        beta2,
        eta0,
        eta1,
        eta2,
        iota,
        zeta,
        sign_convention: "beta1 aligned with projected reference axis; zeta = atan2(eta0.b1, -eta0.b2)",
    })
}

/// Drag matrix of the bundled helical example swimmer.
pub const EXAMPLE_DRAG: &str = include_str!("../data/helical_swimmer_drag.txt");

/// Magnetic moment of the bundled helical example swimmer (body frame).
pub fn example_moment() -> Vector3<f64> {
    Vector3::new(0.0, 0.1736, 0.9848)
}

/// Convenience constructor for the bundled example swimmer.
pub fn example_model() -> SwimmerModel {
    let drag = load_drag_matrix(EXAMPLE_DRAG).expect("bundled drag matrix parses");
    build_model(&drag, example_moment()).expect("bundled swimmer is valid")
}

/// Isotropic reference model: `M22 = I`, `m = e3`, so `P = [e3 x]` with unit
/// singular values and `iota = 0`. Used as a closed-form oracle.
pub fn isotropic_model() -> SwimmerModel {
    SwimmerModel {
        mobility: Matrix6::identity(),
        m22: Matrix3::identity(),
        m: Vector3::z(),
        p: cross_matrix(&Vector3::z()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_example_drag() {
        let drag = load_drag_matrix(EXAMPLE_DRAG).unwrap();
        assert_relative_eq!(drag.entries[(0, 0)], 12.4654);
        assert_relative_eq!(drag.entries[(5, 5)], 1.0196);
        assert!(drag.asymmetry > 0.0);
    }

    #[test]
    fn identity_drag_is_identity_mobility() {
        let drag = load_drag_matrix(
            "1 0 0 0 0 0\n0 1 0 0 0 0\n0 0 1 0 0 0\n0 0 0 1 0 0\n0 0 0 0 1 0\n0 0 0 0 0 1\n",
        )
        .unwrap();
        assert_eq!(drag.asymmetry, 0.0);
        let model = build_model(&drag, Vector3::z()).unwrap();
        assert_relative_eq!(model.mobility, Matrix6::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(load_drag_matrix("1 2 3").is_err());
        assert!(load_drag_matrix(&"x ".repeat(36)).is_err());
    }

    #[test]
    fn comments_are_skipped() {
        let txt = "# drag matrix\n1 0 0 0 0 0\n0 1 0 0 0 0\n# middle\n0 0 1 0 0 0\n0 0 0 1 0 0\n0 0 0 0 1 0\n0 0 0 0 0 1\n";
        assert!(load_drag_matrix(txt).is_ok());
    }

    #[test]
    fn example_mobility_symmetric_positive_definite() {
        let drag = load_drag_matrix(EXAMPLE_DRAG).unwrap();
        let model = build_model(&drag, example_moment()).unwrap();
        let asym = (model.mobility - model.mobility.transpose()).abs().max();
        assert_eq!(asym, 0.0);
        // Independent dense eigen-solve on the symmetrized inverse.
        let min_eig = model
            .mobility
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > 0.0);
    }

    #[test]
    fn identity_mobility_p_is_cross_matrix() {
        let drag = load_drag_matrix(
            "1 0 0 0 0 0\n0 1 0 0 0 0\n0 0 1 0 0 0\n0 0 0 1 0 0\n0 0 0 0 1 0\n0 0 0 0 0 1\n",
        )
        .unwrap();
        let model = build_model(&drag, Vector3::z()).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(model.p, expected, epsilon = 1e-15);
    }

    #[test]
    fn p_annihilates_moment_and_has_rank_two() {
        let model = example_model();
        assert!((model.p * model.m).norm() < 1e-14);
        let svd = model.p.svd(false, false);
        assert!(svd.singular_values[1] > 1e-3);
        assert!(svd.singular_values[2] < 1e-14);
    }

    #[test]
    fn isotropic_spectrum() {
        let spec = compute_spectrum(&isotropic_model()).unwrap();
        assert_relative_eq!(spec.sigma1, 1.0, epsilon = 1e-14);
        assert_relative_eq!(spec.sigma2, 1.0, epsilon = 1e-14);
        assert_relative_eq!(spec.iota, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn example_sigma2_matches_reference() {
        let spec = compute_spectrum(&example_model()).unwrap();
        assert!((spec.sigma2 - 0.0497).abs() < 1e-3, "sigma2 = {}", spec.sigma2);
    }

    #[test]
    fn eta0_decomposition_closes() {
        let spec = compute_spectrum(&example_model()).unwrap();
        let rebuilt = spec.beta0 * spec.iota.cos()
            + (spec.beta1 * spec.zeta.sin() - spec.beta2 * spec.zeta.cos()) * spec.iota.sin();
        assert!((rebuilt - spec.eta0).norm() < 1e-10);
    }

    #[test]
    fn singular_triples_consistent() {
        let model = example_model();
        let spec = compute_spectrum(&model).unwrap();
        let sig = [0.0, spec.sigma1, spec.sigma2];
        let betas = [spec.beta0, spec.beta1, spec.beta2];
        let etas = [spec.eta0, spec.eta1, spec.eta2];
        for i in 0..3 {
            assert!((model.p * betas[i] - etas[i] * sig[i]).norm() <= 1e-12 * spec.sigma1);
            assert!((model.p.transpose() * etas[i] - betas[i] * sig[i]).norm() <= 1e-12 * spec.sigma1);
        }
        let bdet = Matrix3::from_columns(&betas).determinant();
        let edet = Matrix3::from_columns(&etas).determinant();
        assert_relative_eq!(bdet, 1.0, epsilon = 1e-12);
        assert_relative_eq!(edet, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_swimmer_rejected() {
        // M22 collapsing the plane orthogonal to one singular direction:
        // rank-one m22 * cross gives sigma2 = 0.
        let mut model = isotropic_model();
        model.m22 = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        model.p = model.m22 * cross_matrix(&model.m);
        assert!(matches!(
            compute_spectrum(&model),
            Err(MagswimError::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn iota_invariant_under_mobility_scaling() {
        let base = example_model();
        let spec = compute_spectrum(&base).unwrap();
        let scaled = SwimmerModel {
            mobility: base.mobility * 3.7,
            m22: base.m22 * 3.7,
            m: base.m,
            p: base.p * 3.7,
        };
        let spec_scaled = compute_spectrum(&scaled).unwrap();
        assert_relative_eq!(spec_scaled.sigma1, spec.sigma1 * 3.7, epsilon = 1e-12);
        assert_relative_eq!(spec_scaled.sigma2, spec.sigma2 * 3.7, epsilon = 1e-12);
        assert_relative_eq!(spec_scaled.iota, spec.iota, epsilon = 1e-12);
        assert_relative_eq!(spec_scaled.zeta, spec.zeta, epsilon = 1e-10);
    }
}
