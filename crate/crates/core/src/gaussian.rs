//! Per-primitive Gaussian parameters and covariance construction.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of non-DC spherical-harmonics scalars stored for `degree`.
pub const fn sh_rest_len(degree: u8) -> usize {
    let d = degree as usize;
    3 * ((d + 1) * (d + 1) - 1)
}

/// Scalars per Gaussian with `sh_rest_len(degree)` SH coefficients:
/// mean (3), scale (3), rotation (4), opacity (1), base color (3), SH rest.
pub const fn floats_per_gaussian(degree: u8) -> usize {
    14 + sh_rest_len(degree)
}

/// Parameters of a single Gaussian primitive as stored on disk and in RAM.
///
/// Scales are linear (not log) and strictly positive. `rotation` is a unit
/// quaternion in `[w, x, y, z]` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianAttributes {
    pub mean: [f32; 3],
    pub scale: [f32; 3],
    pub rotation: [f32; 4],
    pub opacity: f32,
    pub base_color: [f32; 3],
    /// Higher-order SH coefficients, coefficient-major: `sh_rest[3 * k + channel]`.
    pub sh_rest: Vec<f32>,
}

impl Default for GaussianAttributes {
    fn default() -> Self {
        Self {
            mean: [0.0; 3],
            scale: [1.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 1.0,
            base_color: [0.5; 3],
            sh_rest: Vec::new(),
        }
    }
}

impl GaussianAttributes {
    pub fn new(mean: [f32; 3], scale: [f32; 3], rotation: [f32; 4], opacity: f32, base_color: [f32; 3]) -> Self {
        Self {
            mean,
            scale,
            rotation,
            opacity,
            base_color,
            sh_rest: Vec::new(),
        }
    }

    pub fn isotropic(mean: [f32; 3], scale: f32, opacity: f32, base_color: [f32; 3]) -> Self {
        Self::new(mean, [scale; 3], [1.0, 0.0, 0.0, 0.0], opacity, base_color)
    }

    /// Pads or truncates the SH coefficients to match `degree`.
    pub fn with_sh_degree(mut self, degree: u8) -> Self {
        self.sh_rest.resize(sh_rest_len(degree), 0.0);
        self
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        Vector3::new(self.mean[0] as f64, self.mean[1] as f64, self.mean[2] as f64)
    }

    pub fn scale_vec(&self) -> Vector3<f64> {
        Vector3::new(self.scale[0] as f64, self.scale[1] as f64, self.scale[2] as f64)
    }

    pub fn quaternion(&self) -> Quaternion<f64> {
        let [w, x, y, z] = self.rotation;
        Quaternion::new(w as f64, x as f64, y as f64, z as f64)
    }

    pub fn max_scale(&self) -> f64 {
        self.scale.iter().fold(0.0f32, |m, &s| m.max(s)) as f64
    }

    /// Product of the three scales (ellipsoid volume up to a constant).
    pub fn volume(&self) -> f64 {
        self.scale.iter().map(|&s| s as f64).product()
    }

    /// Radius of the conservative bounding sphere used for culling.
    pub fn cull_radius(&self) -> f64 {
        3.0 * self.max_scale()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_unchecked(&self.scale_vec(), &self.quaternion())
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.base_color.iter().all(|v| v.is_finite())
            && self.sh_rest.iter().all(|v| v.is_finite())
    }

    /// Checks the data-model invariants: positive scales, unit quaternion
    /// (within 1e-6) and opacity in `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidParameter("non-finite attribute".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidParameter(format!("non-positive scale {:?}", self.scale)));
        }
        let norm = self.quaternion().norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("quaternion norm {norm} is not 1")));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidParameter(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        Ok(())
    }
}

/// Rotation matrix of a (not necessarily normalized) quaternion.
pub fn rotation_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    UnitQuaternion::from_quaternion(*q).to_rotation_matrix().into_inner()
}

/// Covariance `R diag(s^2) R^T` of a Gaussian.
pub fn covariance_from(scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    if !scale.iter().all(|s| s.is_finite()) || !rotation.coords.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite scale or rotation".into()));
    }
    if rotation.norm() == 0.0 {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    Ok(covariance_unchecked(scale, rotation))
}

pub(crate) fn covariance_unchecked(scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Matrix3<f64> {
    let r = rotation_matrix(rotation);
    let m = r * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn quat_axis_angle(axis: Vector3<f64>, angle: f64) -> Quaternion<f64> {
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
    }

    #[test]
    fn identity_scale_gives_identity() {
        let c = covariance_from(&Vector3::new(1.0, 1.0, 1.0), &Quaternion::identity()).unwrap();
        assert_relative_eq!(c, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn axis_aligned_scale() {
        let c = covariance_from(&Vector3::new(2.0, 1.0, 1.0), &Quaternion::identity()).unwrap();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn rotation_about_z_permutes_axes() {
        let q = quat_axis_angle(Vector3::z(), FRAC_PI_2);
        let c = covariance_from(&Vector3::new(2.0, 1.0, 1.0), &q).unwrap();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(covariance_from(&Vector3::new(f64::NAN, 1.0, 1.0), &Quaternion::identity()).is_err());
        assert!(covariance_from(&Vector3::new(1.0, 1.0, 1.0), &Quaternion::new(0.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn sh_layout_sizes() {
        assert_eq!(sh_rest_len(0), 0);
        assert_eq!(sh_rest_len(1), 9);
        assert_eq!(sh_rest_len(3), 45);
        assert_eq!(floats_per_gaussian(1), 23);
    }

    #[test]
    fn check_reports_invariant_violations() {
        let good = GaussianAttributes::isotropic([0.0; 3], 1.0, 0.5, [0.2; 3]);
        assert!(good.check().is_ok());
        let mut bad = good.clone();
        bad.scale[1] = 0.0;
        assert!(bad.check().is_err());
        let mut bad = good.clone();
        bad.opacity = 1.5;
        assert!(bad.check().is_err());
        let mut bad = good;
        bad.rotation = [2.0, 0.0, 0.0, 0.0];
        assert!(bad.check().is_err());
    }

    proptest::proptest! {
        #[test]
        fn covariance_is_symmetric_psd_with_squared_scale_eigenvalues(
            s in proptest::array::uniform3(0.01f64..10.0),
            q in proptest::array::uniform4(-1.0f64..1.0),
        ) {
            proptest::prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
            let c = covariance_from(&Vector3::from(s), &quat).unwrap();
            proptest::prop_assert!((c - c.transpose()).norm() <= 1e-9 * c.norm());
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            sq.sort_by(f64::total_cmp);
            for (e, t) in eig.iter().zip(&sq) {
                proptest::prop_assert!(*e >= -1e-9);
                proptest::prop_assert!((e - t).abs() <= 1e-9 * sq[2].max(1.0));
            }
        }
    }
}
