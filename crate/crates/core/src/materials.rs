//! Hyperelastic constitutive models returning Kirchhoff stress.

use std::fmt;
use std::str::FromStr;

use nalgebra::SVD;

use crate::{Error, Mat3, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstitutiveModel {
    FixedCorotated,
    NeoHookean,
}

impl fmt::Display for ConstitutiveModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstitutiveModel::FixedCorotated => "fixed_corotated",
            ConstitutiveModel::NeoHookean => "neo_hookean",
        })
    }
}

impl FromStr for ConstitutiveModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_corotated" => Ok(ConstitutiveModel::FixedCorotated),
            "neo_hookean" => Ok(ConstitutiveModel::NeoHookean),
            _ => Err(Error::config(format!("unknown constitutive model `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
    pub model: ConstitutiveModel,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            youngs_modulus: 1e4,
            poisson_ratio: 0.3,
            density: 1000.0,
            model: ConstitutiveModel::FixedCorotated,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::config("Young's modulus must be positive"));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::config("Poisson ratio must lie in [0, 0.5)"));
        }
        if !(self.density > 0.0) {
            return Err(Error::config("density must be positive"));
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let e = self.youngs_modulus;
        let nu = self.poisson_ratio;
        let mu = e / (2.0 * (1.0 + nu));
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        (mu, lambda)
    }

    /// P-wave speed `sqrt((lambda + 2 mu) / rho)`, used by the CFL guard.
    pub fn wave_speed(&self) -> f64 {
        let (mu, lambda) = self.lame();
        ((lambda + 2.0 * mu) / self.density).sqrt()
    }
}

/// Rotation factor `R` of the polar decomposition `F = R S`.
///
/// Computed from the SVD with the sign of the weakest singular direction
/// flipped when needed so that `det(R) = +1`.
pub fn polar_rotation(f: &Mat3) -> Result<Mat3> {
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Error::NonPositiveDeterminant { det });
    }
    let svd = SVD::new(*f, true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sigma = svd.singular_values;
    let weakest = sigma.imin();
    if sigma[weakest] < 1e-10 {
        return Err(Error::NearSingular {
            sigma_min: sigma[weakest],
        });
    }
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(weakest).neg_mut();
    }
    Ok(u * v_t)
}

/// Kirchhoff stress `tau = P F^T` of the material at deformation `f`.
pub fn kirchhoff_stress(f: &Mat3, mat: &MaterialParams) -> Result<Mat3> {
    let j = f.determinant();
    if !(j > 0.0) {
        return Err(Error::NonPositiveDeterminant { det: j });
    }
    let (mu, lambda) = mat.lame();
    let tau = match mat.model {
        ConstitutiveModel::FixedCorotated => {
            let r = polar_rotation(f)?;
            (f - r) * f.transpose() * (2.0 * mu) + Mat3::identity() * (lambda * (j - 1.0) * j)
        }
        ConstitutiveModel::NeoHookean => {
            (f * f.transpose() - Mat3::identity()) * mu + Mat3::identity() * (lambda * j.ln())
        }
    };
    Ok((tau + tau.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;

    fn rel_err(a: &Mat3, b: &Mat3) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn mat(model: ConstitutiveModel) -> MaterialParams {
        MaterialParams {
            model,
            ..Default::default()
        }
    }

    #[test]
    fn rest_state_is_stress_free() {
        for model in [
            ConstitutiveModel::FixedCorotated,
            ConstitutiveModel::NeoHookean,
        ] {
            let tau = kirchhoff_stress(&Mat3::identity(), &mat(model)).unwrap();
            assert_eq!(tau, Mat3::zeros(), "{model}");
        }
    }

    #[test]
    fn pure_rotation_is_stress_free_for_corotated() {
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let r = q.to_rotation_matrix().into_inner();
        let tau = kirchhoff_stress(&r, &mat(ConstitutiveModel::FixedCorotated)).unwrap();
        assert!(tau.norm() < 1e-9, "{tau}");
    }

    #[test]
    fn uniaxial_stretch_matches_closed_form() {
        // F = diag(1.1, 1, 1): R = I, J = 1.1.
        let m = MaterialParams {
            youngs_modulus: 1e4,
            poisson_ratio: 0.3,
            ..Default::default()
        };
        let f = Mat3::from_diagonal(&Vector3::new(1.1, 1.0, 1.0));
        let tau = kirchhoff_stress(&f, &m).unwrap();
        let mu = 1e4 / 2.6;
        let lambda = 1e4 * 0.3 / (1.3 * 0.4);
        let j = 1.1;
        let vol = lambda * (j - 1.0) * j;
        let expected = Mat3::from_diagonal(&Vector3::new(2.0 * mu * 0.1 * 1.1 + vol, vol, vol));
        assert!(rel_err(&tau, &expected) < 1e-12, "{tau} vs {expected}");
    }

    #[test]
    fn polar_factor_recovers_constructed_rotation() {
        let r0 = UnitQuaternion::from_euler_angles(0.7, 0.2, -0.4)
            .to_rotation_matrix()
            .into_inner();
        let f = r0 * Mat3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let r = polar_rotation(&f).unwrap();
        assert!((r - r0).norm() < 1e-8);
        assert_eq!(polar_rotation(&Mat3::identity()).unwrap(), Mat3::identity());
    }

    #[test]
    fn invalid_deformations_are_rejected() {
        let flip = Mat3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(matches!(
            kirchhoff_stress(&flip, &MaterialParams::default()),
            Err(Error::NonPositiveDeterminant { .. })
        ));
        let thin = Mat3::from_diagonal(&Vector3::new(1e-12, 1e6, 1e6));
        assert!(matches!(
            polar_rotation(&thin),
            Err(Error::NearSingular { .. })
        ));
    }

    fn arb_rotation() -> impl Strategy<Value = Mat3> {
        (-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64).prop_map(|(a, b, c)| {
            UnitQuaternion::from_euler_angles(a, b, c)
                .to_rotation_matrix()
                .into_inner()
        })
    }

    fn arb_deformation() -> impl Strategy<Value = Mat3> {
        (arb_rotation(), prop::array::uniform9(-0.3..0.3f64))
            .prop_map(|(r, e)| {
                let perturb = Mat3::from_row_slice(&e);
                r * (Mat3::identity() + perturb * 0.8)
            })
            .prop_filter("det > 0.1", |f| f.determinant() > 0.1)
    }

    proptest! {
        #[test]
        fn polar_factor_is_a_proper_rotation(f in arb_deformation(), qs in prop::collection::vec(arb_rotation(), 20)) {
            let r = polar_rotation(&f).unwrap();
            prop_assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-8);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-8);
            let best = (f - r).norm();
            for q in &qs {
                prop_assert!(best <= (f - q).norm() + 1e-12);
            }
        }

        #[test]
        fn stress_is_symmetric_and_objective(f in arb_deformation(), q in arb_rotation()) {
            for model in [ConstitutiveModel::FixedCorotated, ConstitutiveModel::NeoHookean] {
                let m = mat(model);
                let tau = kirchhoff_stress(&f, &m).unwrap();
                prop_assert!((tau - tau.transpose()).norm() <= 1e-9 * tau.norm());
                let rotated = kirchhoff_stress(&(q * f), &m).unwrap();
                let expected = q * tau * q.transpose();
                prop_assert!(rel_err(&rotated, &expected) < 1e-7);
            }
        }

        #[test]
        fn small_strain_matches_linear_elasticity(e in prop::array::uniform9(-1.0..1.0f64)) {
            let a = Mat3::from_row_slice(&e);
            let eps = 1e-6;
            let f = Mat3::identity() + a * eps;
            for model in [ConstitutiveModel::FixedCorotated, ConstitutiveModel::NeoHookean] {
                let m = mat(model);
                let (mu, lambda) = m.lame();
                let sym = (a + a.transpose()) * 0.5;
                let linear = sym * (2.0 * mu * eps) + Mat3::identity() * (lambda * a.trace() * eps);
                let tau = kirchhoff_stress(&f, &m).unwrap();
                prop_assert!(rel_err(&tau, &linear) < 1e-3);
            }
        }
    }
}
