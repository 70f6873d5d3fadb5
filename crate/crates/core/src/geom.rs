//! Rigid-body and pinhole-camera primitives.
//!
//! Conventions used throughout the crate:
//!
//! * An extrinsic `T_i` maps world coordinates into camera-i coordinates,
//!   `X_cam = R_i X_world + k_i`.
//! * Cameras look down `+z`, with `x` to the right and `y` down the image.
//! * Integer pixel coordinates are pixel centers; depth maps are row-major
//!   with row 0 at the top.
//! * Tangent vectors act by left multiplication, `T <- exp(xi) * T`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use std::fmt;
use thiserror::Error;

/// Below this rotation angle the closed forms switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `log_se3` refuses rotations whose angle is within this distance of pi.
pub const LOG_PI_MARGIN: f64 = 1e-6;

/// Tolerance for the orthonormality and determinant checks on a rotation matrix.
pub const ROTATION_TOL: f64 = 1e-9;

/// Points closer than this to the image plane cannot be projected.
pub const MIN_PROJECT_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("matrix is not a rotation (orthonormality error {ortho_err:.3e}, det {det})")]
    NotARotation { ortho_err: f64, det: f64 },
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth map is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

#[inline]
fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// An element of SO(3), stored as a 3x3 matrix.
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rotation({:?})", self.row_major())
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Accepts `m` only if it satisfies the rotation invariants at [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let (ortho_err, det) = orthonormality_error(&m);
        if ortho_err > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeomError::NotARotation { ortho_err, det });
        }
        Ok(Rotation(m))
    }

    /// Projects `m` onto the nearest rotation (polar decomposition) if it is
    /// within `tol` of one; rejects it otherwise.
    pub fn from_matrix_within(m: Matrix3<f64>, tol: f64) -> Result<Self, GeomError> {
        let (ortho_err, det) = orthonormality_error(&m);
        if ortho_err > tol || (det - 1.0).abs() > tol || !det.is_finite() {
            return Err(GeomError::NotARotation { ortho_err, det });
        }
        Ok(Rotation(m).renormalized())
    }

    pub fn from_row_major(v: &[f64; 9]) -> Matrix3<f64> {
        Matrix3::from_row_slice(v)
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rodrigues' formula.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let w = hat(omega);
        let (a, b) = if theta < SMALL_ANGLE {
            (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
        } else {
            let half = 0.5 * theta;
            (theta.sin() / theta, 2.0 * (half.sin() / theta).powi(2))
        };
        Rotation(Matrix3::identity() + w * a + w * w * b)
    }

    /// Rotation vector of this rotation. Fails within [`LOG_PI_MARGIN`] of pi.
    pub fn log(&self) -> Result<Vector3<f64>, GeomError> {
        let m = &self.0;
        let cos_theta = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
        let s = 0.5 * vee(&(m - m.transpose()));
        let sin_theta = s.norm();
        let theta = sin_theta.atan2(cos_theta);
        if theta >= std::f64::consts::PI - LOG_PI_MARGIN {
            return Err(GeomError::AngleNearPi { angle: theta });
        }
        let scale = if theta < SMALL_ANGLE {
            1.0 + theta * theta / 6.0
        } else {
            theta / sin_theta
        };
        Ok(s * scale)
    }

    /// Geodesic angle of this rotation, in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let c = 0.5 * (self.0.trace() - 1.0);
        let s = 0.5 * vee(&(self.0 - self.0.transpose())).norm();
        s.atan2(c.clamp(-1.0, 1.0))
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }

    /// Nearest rotation in the Frobenius sense (polar factor via SVD).
    pub fn renormalized(&self) -> Rotation {
        let svd = self.0.svd(true, true);
        let u = svd.u.expect("svd computes U");
        let v_t = svd.v_t.expect("svd computes V^T");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = u * d * v_t;
        }
        Rotation(r)
    }

    /// Largest entry of `|R^T R - I|` and the determinant.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        orthonormality_error(&self.0)
    }
}

fn orthonormality_error(m: &Matrix3<f64>) -> (f64, f64) {
    let e = m.transpose() * m - Matrix3::identity();
    let err = e.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    (
        if err.is_nan() { f64::INFINITY } else { err },
        m.determinant(),
    )
}

/// A 6-dof tangent vector: rotation part `omega` (radians) and translation part `v` (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentVector {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl TangentVector {
    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { omega, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Layout `[omega; v]`, the same column order the Jacobians use.
    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            omega: Vector3::new(x[0], x[1], x[2]),
            v: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.v.x,
            self.v.y,
            self.v.z,
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let half = 0.5 * theta;
        (
            2.0 * (half.sin() / theta).powi(2),
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + w * b + w * w * c
}

fn left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

/// An element of SE(3): `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vector3::zeros())
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p + self.translation
    }

    /// `(self * other)(p) = self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.0 * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r_t = self.rotation.inverse();
        RigidTransform {
            translation: -(r_t.0 * self.translation),
            rotation: r_t,
        }
    }

    pub fn exp(xi: &TangentVector) -> RigidTransform {
        RigidTransform {
            rotation: Rotation::exp(&xi.omega),
            translation: left_jacobian(&xi.omega) * xi.v,
        }
    }

    pub fn log(&self) -> Result<TangentVector, GeomError> {
        let omega = self.rotation.log()?;
        Ok(TangentVector {
            omega,
            v: left_jacobian_inverse(&omega) * self.translation,
        })
    }

    /// Applies a left-multiplicative update and re-orthonormalizes the rotation.
    pub fn retract(&self, xi: &TangentVector) -> RigidTransform {
        let mut t = RigidTransform::exp(xi).compose(self);
        t.rotation = t.rotation.renormalized();
        t
    }

    /// Position of the frame origin expressed in the source frame,
    /// i.e. the camera center in world coordinates for an extrinsic.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.0.transpose() * self.translation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a world-to-camera extrinsic for a camera at `eye` looking at `target`,
    /// with `up` as the world up direction (image `y` points away from it).
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> RigidTransform {
        let z = (target - eye).normalize();
        let x = z.cross(up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        RigidTransform {
            translation: -(r * eye),
            rotation: Rotation(r),
        }
    }

    /// Largest absolute entry difference of the 3x4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let dr = (self.rotation.0 - other.rotation.0).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

pub fn exp_se3(xi: &TangentVector) -> RigidTransform {
    RigidTransform::exp(xi)
}

pub fn log_se3(t: &RigidTransform) -> Result<TangentVector, GeomError> {
    t.log()
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// `T_ji = T_j * T_i^-1`: maps camera-i coordinates to camera-j coordinates.
pub fn relative_transform(t_i: &RigidTransform, t_j: &RigidTransform) -> RigidTransform {
    t_j.compose(&t_i.inverse())
}

/// Continuous pixel coordinates; integer values are pixel centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeomError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let err = |m: String| Err(GeomError::InvalidIntrinsics(m));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return err(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            ));
        }
        if self.width == 0 || self.height == 0 {
            return err(format!(
                "image size {}x{} is empty",
                self.width, self.height
            ));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return err(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return err(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.width - 1) as f64
            && px.v <= (self.height - 1) as f64
    }

    /// Camera-frame ray through `px` with unit z component.
    pub fn ray(&self, px: &Pixel) -> Vector3<f64> {
        Vector3::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy, 1.0)
    }

    /// Jacobian of [`project`] with respect to the camera-frame point.
    pub fn project_jacobian(&self, x: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let iz = 1.0 / x.z;
        nalgebra::Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * x.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * x.y * iz * iz,
        )
    }
}

pub fn project(k: &CameraIntrinsics, x_cam: &Vector3<f64>) -> Result<Pixel, GeomError> {
    if !(x_cam.z > MIN_PROJECT_DEPTH) {
        return Err(GeomError::BehindCamera { z: x_cam.z });
    }
    Ok(Pixel {
        u: k.fx * x_cam.x / x_cam.z + k.cx,
        v: k.fy * x_cam.y / x_cam.z + k.cy,
    })
}

pub fn backproject(
    k: &CameraIntrinsics,
    px: &Pixel,
    depth: f64,
) -> Result<Vector3<f64>, GeomError> {
    if !(depth > 0.0) {
        return Err(GeomError::NonPositiveDepth { depth });
    }
    Ok(Vector3::new(
        (px.u - k.cx) * depth / k.fx,
        (px.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Interpolated depth together with its gradient in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    pub depth: f64,
    /// `(d depth / du, d depth / dv)` of the interpolant at the sample point.
    pub grad: [f64; 2],
}

/// Dense z-depth image in meters. Stored as `f32` to match the on-disk format bit for bit.
#[derive(Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl fmt::Debug for DepthMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DepthMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("valid", &self.valid_count())
            .finish()
    }
}

#[inline]
pub fn is_valid_depth(d: f32) -> bool {
    d.is_finite() && d > 0.0
}

impl DepthMap {
    /// `values` must hold `width * height` entries in row-major order.
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Option<Self> {
        if width == 0 || height == 0 || values.len() != width as usize * height as usize {
            return None;
        }
        Some(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn is_valid_at(&self, col: u32, row: u32) -> bool {
        is_valid_depth(self.get(col, row))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| is_valid_depth(**d)).count()
    }

    pub fn check_dims(&self, k: &CameraIntrinsics) -> Result<(), GeomError> {
        if self.width != k.width || self.height != k.height {
            return Err(GeomError::DimensionMismatch {
                got_w: self.width,
                got_h: self.height,
                want_w: k.width,
                want_h: k.height,
            });
        }
        Ok(())
    }

    /// Bilinear depth at `px`, or `None` when `px` is outside the image or
    /// any of the four surrounding pixel centers is invalid.
    pub fn sample(&self, px: &Pixel) -> Option<f64> {
        self.sample_with_gradient(px).map(|s| s.depth)
    }

    pub fn sample_with_gradient(&self, px: &Pixel) -> Option<DepthSample> {
        let (w, h) = (self.width, self.height);
        if !(px.u >= 0.0 && px.v >= 0.0 && px.u <= (w - 1) as f64 && px.v <= (h - 1) as f64) {
            return None;
        }
        let (c0, c1, tu) = cell(px.u, w);
        let (r0, r1, tv) = cell(px.v, h);
        let d00 = self.get(c0, r0);
        let d10 = self.get(c1, r0);
        let d01 = self.get(c0, r1);
        let d11 = self.get(c1, r1);
        if !(is_valid_depth(d00)
            && is_valid_depth(d10)
            && is_valid_depth(d01)
            && is_valid_depth(d11))
        {
            return None;
        }
        let (d00, d10, d01, d11) = (d00 as f64, d10 as f64, d01 as f64, d11 as f64);
        let top = d00 + tu * (d10 - d00);
        let bottom = d01 + tu * (d11 - d01);
        let depth = top + tv * (bottom - top);
        let du = (1.0 - tv) * (d10 - d00) + tv * (d11 - d01);
        let dv = bottom - top;
        Some(DepthSample {
            depth,
            grad: [du, dv],
        })
    }
}

/// Left/right neighbor indices and the fractional offset along one axis.
/// The last pixel center maps to the far edge of the final cell.
fn cell(x: f64, n: u32) -> (u32, u32, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (x.floor() as u32).min(n - 2);
    (i0, i0 + 1, x - i0 as f64)
}

pub fn sample_depth(d: &DepthMap, px: &Pixel) -> Option<f64> {
    d.sample(px)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn exp_zero_is_identity() {
        let t = exp_se3(&TangentVector::zero());
        assert_eq!(t, RigidTransform::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = exp_se3(&TangentVector::new(
            Vector3::new(0.0, 0.0, FRAC_PI_2),
            Vector3::zeros(),
        ));
        let p = t.apply(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(t.translation.norm() < 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        let xi = log_se3(&RigidTransform::identity()).unwrap();
        assert_eq!(xi.to_array(), [0.0; 6]);
    }

    #[test]
    fn log_rejects_half_turn() {
        let t = exp_se3(&TangentVector::new(
            Vector3::new(std::f64::consts::PI, 0.0, 0.0),
            Vector3::zeros(),
        ));
        assert!(matches!(log_se3(&t), Err(GeomError::AngleNearPi { .. })));
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = exp_se3(&TangentVector::new(
            Vector3::new(0.1, -0.4, 0.2),
            Vector3::new(1.0, 2.0, -3.0),
        ));
        assert_eq!(
            compose(&t, &RigidTransform::identity()).max_abs_diff(&t),
            0.0
        );
        assert!(compose(&t, &inverse(&t)).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        assert!(compose(&inverse(&t), &t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn relative_transform_edge_cases() {
        let t = exp_se3(&TangentVector::new(
            Vector3::new(0.3, 0.1, -0.2),
            Vector3::new(0.5, 0.0, 1.0),
        ));
        assert!(relative_transform(&t, &t).max_abs_diff(&RigidTransform::identity()) < 1e-12);
        assert!(relative_transform(&RigidTransform::identity(), &t).max_abs_diff(&t) < 1e-15);
    }

    #[test]
    fn projection_examples() {
        let k = k500();
        let p = project(&k, &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
        // 500 * 0.5 / 2 + 320 = 445; 500 * -0.2 / 2 + 240 = 190
        let p = project(&k, &Vector3::new(0.5, -0.2, 2.0)).unwrap();
        assert!((p.u - 445.0).abs() < 1e-12 && (p.v - 190.0).abs() < 1e-12);
        assert!(matches!(
            project(&k, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeomError::BehindCamera { .. })
        ));
    }

    #[test]
    fn backprojection_examples() {
        let k = k500();
        let x = backproject(&k, &Pixel::new(320.0, 240.0), 2.0).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 2.0));
        let x = backproject(&k, &Pixel::new(445.0, 190.0), 2.0).unwrap();
        assert!((x - Vector3::new(0.5, -0.2, 2.0)).norm() < 1e-12);
        assert!(matches!(
            backproject(&k, &Pixel::new(1.0, 1.0), 0.0),
            Err(GeomError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn bilinear_examples() {
        let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(sample_depth(&d, &Pixel::new(0.5, 0.5)), Some(2.5));
        assert_eq!(sample_depth(&d, &Pixel::new(0.0, 0.0)), Some(1.0));
        assert_eq!(sample_depth(&d, &Pixel::new(1.0, 1.0)), Some(4.0));
        assert_eq!(sample_depth(&d, &Pixel::new(-0.1, 0.0)), None);
        assert_eq!(sample_depth(&d, &Pixel::new(0.0, 1.0001)), None);
    }

    #[test]
    fn bilinear_rejects_invalid_neighbor() {
        let d = DepthMap::new(3, 1, vec![1.0, f32::NAN, 2.0]).unwrap();
        assert_eq!(d.sample(&Pixel::new(0.25, 0.0)), None);
        assert_eq!(d.sample(&Pixel::new(1.5, 0.0)), None);
        let d = DepthMap::new(3, 1, vec![1.0, 0.0, 2.0]).unwrap();
        assert_eq!(d.sample(&Pixel::new(0.0, 0.0)), None);
    }

    #[test]
    fn bilinear_gradient_is_cell_slope() {
        let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = d.sample_with_gradient(&Pixel::new(0.25, 0.75)).unwrap();
        assert_eq!(s.grad, [1.0, 2.0]);
    }

    #[test]
    fn renormalize_repairs_drift() {
        let r = Rotation::exp(&Vector3::new(0.3, 0.2, 0.1));
        let mut m = *r.matrix();
        m[(0, 1)] += 1e-7;
        let fixed = Rotation::from_matrix_within(m, 1e-6).unwrap();
        assert!(fixed.orthonormality_error().0 < 1e-14);
        assert!(Rotation::from_matrix(m).is_err());
        let mut flip = *r.matrix();
        flip.column_mut(0).neg_mut();
        assert!(Rotation::from_matrix_within(flip, 1e-6).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.9, 0.0, 4, 4).is_ok());
    }

    #[test]
    fn look_at_points_optical_axis() {
        let eye = Vector3::new(2.0, 0.0, 1.0);
        let t = RigidTransform::look_at(&eye, &Vector3::zeros(), &Vector3::z());
        assert!(t.center().metric_distance(&eye) < 1e-12);
        let c = t.apply(&Vector3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
        // world up should appear towards negative image y
        let up = t.apply(&(eye + Vector3::new(-1.0, 0.0, 0.5)));
        assert!(up.y < 0.0);
        assert!(Rotation::from_matrix(*t.rotation.matrix()).is_ok());
    }
}
