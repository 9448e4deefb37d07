//! Camera extrinsics, intrinsics and ray generation.
//!
//! Conventions: a camera looks down its local −z axis with +x to the right
//! and +y up. [`Extrinsic::rotation`] maps world to camera coordinates, so
//! its transpose is the camera-to-world rotation whose columns are the
//! camera's right, up and back axes expressed in world coordinates.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Elevation is kept this far away from the poles during optimization.
pub const POLE_MARGIN: f64 = 1e-4;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),
    #[error("look-at is degenerate: view direction is parallel to the world up axis")]
    DegenerateUp,
    #[error("look-at is degenerate: camera position equals the target")]
    CoincidentTarget,
    #[error("rotation axis must have unit norm, got norm {0}")]
    NonUnitAxis(f64),
    #[error("matrix is not a rotation: {0}")]
    NotRotation(String),
    #[error("upright angle undefined for axis {0:?}: k_x^2 k_z^2 + k_y^2 is zero")]
    DegenerateAxis([f64; 3]),
    #[error("pixel ({row}, {col}) outside {height}x{width} image")]
    PixelOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, CameraError>;

/// Object-centric camera: azimuth, elevation (radians) and distance to the
/// origin. The camera always looks at the origin with world +z up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub phi: f64,
    pub theta: f64,
    pub rho: f64,
}

impl CameraPose {
    pub fn new(phi: f64, theta: f64, rho: f64) -> Result<Self> {
        let pose = Self { phi, theta, rho };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(CameraError::InvalidPose(format!("rho must be > 0, got {}", self.rho)));
        }
        if !(self.theta.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(CameraError::InvalidPose(format!(
                "theta must lie strictly inside (-pi/2, pi/2), got {}",
                self.theta
            )));
        }
        if !self.phi.is_finite() {
            return Err(CameraError::InvalidPose("phi is not finite".into()));
        }
        Ok(())
    }

    /// Camera center `p = rho (cos t cos f, cos t sin f, sin t)`.
    pub fn center(&self) -> Vec3 {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        self.rho * Vec3::new(ct * cp, ct * sp, st)
    }

    /// Azimuth wrapped to `[0, 2pi)`; for reporting only.
    pub fn canonical(&self) -> Self {
        Self {
            phi: self.phi.rem_euclid(std::f64::consts::TAU),
            ..*self
        }
    }

    /// Recovers the pose from a camera center (the orientation is implied).
    pub fn from_center(p: &Vec3) -> Result<Self> {
        let rho = p.norm();
        if rho == 0.0 {
            return Err(CameraError::InvalidPose("camera at the origin".into()));
        }
        let theta = (p.z / rho).clamp(-1.0, 1.0).asin();
        let phi = p.y.atan2(p.x);
        Self::new(phi, theta, rho)
    }
}

/// Rigid camera placement: world-to-camera rotation plus camera center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsic {
    pub rotation: Mat3,
    pub center: Vec3,
}

impl Extrinsic {
    pub fn new(rotation: Mat3, center: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self { rotation, center })
    }

    pub fn c2w_rotation(&self) -> Mat3 {
        self.rotation.transpose()
    }

    /// Homogeneous camera-to-world matrix `[R^T | p; 0 1]`.
    pub fn c2w(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.transpose());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.center);
        m
    }

    /// Parses a row-major camera-to-world matrix, validating its rotation.
    pub fn from_c2w(m: &Matrix4<f64>) -> Result<Self> {
        let c2w_rot: Mat3 = m.fixed_view::<3, 3>(0, 0).into_owned();
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
            return Err(CameraError::NotRotation(format!(
                "bottom row of camera-to-world matrix must be (0 0 0 1): {m}"
            )));
        }
        Self::new(c2w_rot.transpose(), m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    pub fn to_rows(&self) -> [f64; 16] {
        let m = self.c2w();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_rows(rows: &[f64; 16]) -> Result<Self> {
        Self::from_c2w(&Matrix4::from_row_slice(rows))
    }
}

impl From<CameraPose> for Extrinsic {
    fn from(pose: CameraPose) -> Self {
        rotation_from_pose(&pose)
    }
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
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

    /// Square pixels with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c < n as f64;
        if !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Unit viewing direction of a pixel in camera coordinates.
    pub fn camera_direction(&self, row: usize, col: usize) -> Vec3 {
        Vec3::new(
            (col as f64 - self.cx) / self.fx,
            -(row as f64 - self.cy) / self.fy,
            -1.0,
        )
        .normalize()
    }

    /// Every pixel in row-major order.
    pub fn all_pixels(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .collect()
    }

    pub fn check_pixel(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.height || col >= self.width {
            return Err(CameraError::PixelOutOfBounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.direction
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

fn check_rotation(r: &Mat3) -> Result<()> {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = r.determinant();
    if !(err <= ORTHO_TOL) || !((det - 1.0).abs() <= ORTHO_TOL) {
        return Err(CameraError::NotRotation(format!(
            "|R^T R - I| = {err:e}, det = {det}: {r}"
        )));
    }
    Ok(())
}

/// World-to-camera rotation and camera center for an orbit pose.
pub fn rotation_from_pose(pose: &CameraPose) -> Extrinsic {
    let (sp, cp) = pose.phi.sin_cos();
    let (st, ct) = pose.theta.sin_cos();
    #[rustfmt::skip]
    let rotation = Mat3::new(
        -sp,      cp,       0.0,
        -st * cp, -st * sp, ct,
        ct * cp,  ct * sp,  st,
    );
    Extrinsic {
        rotation,
        center: pose.center(),
    }
}

/// Look-at camera with world up `(0, 0, 1)`.
pub fn look_at(origin: &Vec3, target: &Vec3) -> Result<Extrinsic> {
    let b = origin - target;
    let len = b.norm();
    if len == 0.0 {
        return Err(CameraError::CoincidentTarget);
    }
    let b = b / len;
    let w = Vec3::z();
    let r = w.cross(&b);
    // |w x b| = sin of the angle between the view axis and up
    if r.norm() < 1e-6 {
        return Err(CameraError::DegenerateUp);
    }
    let r = r.normalize();
    let u = b.cross(&r);
    let c2w = Mat3::from_columns(&[r, u, b]);
    Ok(Extrinsic {
        rotation: c2w.transpose(),
        center: *origin,
    })
}

/// The orbit parametrization and the look-at construction for the same pose.
pub fn pose_lookat_consistency(pose: &CameraPose) -> Result<(Extrinsic, Extrinsic)> {
    pose.validate()?;
    let from_pose = rotation_from_pose(pose);
    let from_look = look_at(&from_pose.center, &Vec3::zeros())?;
    Ok((from_pose, from_look))
}

fn skew(k: &Vec3) -> Mat3 {
    #[rustfmt::skip]
    let m = Mat3::new(
        0.0,  -k.z, k.y,
        k.z,  0.0,  -k.x,
        -k.y, k.x,  0.0,
    );
    m
}

/// `R = I + sin(a) K + (1 - cos(a)) K^2` for a unit axis.
pub fn rodrigues(aa: &AxisAngle) -> Result<Mat3> {
    let n = aa.axis.norm();
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(CameraError::NonUnitAxis(n));
    }
    let k = skew(&aa.axis);
    let (s, c) = aa.angle.sin_cos();
    Ok(Mat3::identity() + s * k + (1.0 - c) * k * k)
}

/// Inverse of a rigid transform: `[R | t] -> [R^T | -R^T t]`.
pub fn world_to_cam(t_wc: &RigidTransform) -> Result<RigidTransform> {
    check_rotation(&t_wc.rotation)?;
    let rt = t_wc.rotation.transpose();
    Ok(RigidTransform {
        rotation: rt,
        translation: -(rt * t_wc.translation),
    })
}

/// Rotation angle about `k` that keeps the camera x-axis in the world
/// plane `z = 0`, i.e. entry `(2, 0)` of `rodrigues(k, angle)` vanishes.
///
/// The magnitude is `acos((kx^2 kz^2 - ky^2) / (kx^2 kz^2 + ky^2))`. The
/// arccos only yields the non-negative root; when `kx ky kz < 0` the root
/// that satisfies the condition is the negated one, so the sign follows
/// `sign(kx ky kz)`.
pub fn upright_theta(k: &Vec3) -> Result<f64> {
    let n = k.norm();
    if !((n - 1.0).abs() <= 1e-9) {
        return Err(CameraError::NonUnitAxis(n));
    }
    let a = k.x * k.x * k.z * k.z;
    let b = k.y * k.y;
    if a + b <= 1e-12 {
        return Err(CameraError::DegenerateAxis([k.x, k.y, k.z]));
    }
    let mag = ((a - b) / (a + b)).clamp(-1.0, 1.0).acos();
    Ok(if k.x * k.y * k.z < 0.0 { -mag } else { mag })
}

/// Unsigned formula value, kept for comparison against [`upright_theta`].
pub fn upright_theta_unsigned(k: &Vec3) -> Result<f64> {
    upright_theta(k).map(f64::abs)
}

/// World-space rays through the given pixels.
pub fn generate_rays(camera: &Extrinsic, k: &Intrinsics, pixels: &[(usize, usize)]) -> Result<Vec<Ray>> {
    let c2w = camera.c2w_rotation();
    pixels
        .iter()
        .map(|&(row, col)| {
            k.check_pixel(row, col)?;
            let d = c2w * k.camera_direction(row, col);
            Ok(Ray {
                origin: camera.center,
                direction: d.normalize(),
            })
        })
        .collect()
}

/// Orbit pose parameters living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PoseVars {
    pub phi: Var,
    pub theta: Var,
    pub rho: Var,
}

/// Ray bundle on a tape: origin `[1, 3]`, directions `[n, 3]`.
#[derive(Debug, Clone, Copy)]
pub struct RayVars {
    pub origin: Var,
    pub directions: Var,
}

fn scalar_to_cell(tape: &mut Tape, v: Var) -> Result<Var> {
    Ok(tape.reshape(v, &[1, 1])?)
}

/// World-to-camera rotation `[3, 3]` as a differentiable function of
/// azimuth and elevation (each a 1-element var).
pub fn pose_rotation_vars(tape: &mut Tape, phi: Var, theta: Var) -> Result<Var> {
    let sp = tape.sin(phi);
    let cp = tape.cos(phi);
    let st = tape.sin(theta);
    let ct = tape.cos(theta);
    let zero = tape.constant(Tensor::zeros(&[1]));
    let neg_sp = tape.neg(sp);
    let st_cp = tape.mul(st, cp)?;
    let neg_st_cp = tape.neg(st_cp);
    let st_sp = tape.mul(st, sp)?;
    let neg_st_sp = tape.neg(st_sp);
    let ct_cp = tape.mul(ct, cp)?;
    let ct_sp = tape.mul(ct, sp)?;
    let entries = [[neg_sp, cp, zero], [neg_st_cp, neg_st_sp, ct], [ct_cp, ct_sp, st]];
    let mut rows = Vec::with_capacity(3);
    for row in entries {
        let cells = row
            .iter()
            .map(|&v| scalar_to_cell(tape, v))
            .collect::<Result<Vec<_>>>()?;
        rows.push(tape.concat(&cells, 1)?);
    }
    Ok(tape.concat(&rows, 0)?)
}

/// Camera center `[1, 3]`, differentiable in all three pose parameters.
pub fn pose_center_vars(tape: &mut Tape, pose: &PoseVars) -> Result<Var> {
    let sp = tape.sin(pose.phi);
    let cp = tape.cos(pose.phi);
    let st = tape.sin(pose.theta);
    let ct = tape.cos(pose.theta);
    let x = tape.mul(ct, cp)?;
    let y = tape.mul(ct, sp)?;
    let cells = [x, y, st]
        .iter()
        .map(|&v| scalar_to_cell(tape, v))
        .collect::<Result<Vec<_>>>()?;
    let dir = tape.concat(&cells, 1)?;
    Ok(tape.mul(dir, pose.rho)?)
}

/// Rays through `pixels` for a pose held on the tape. Directions are
/// rotated by the camera-to-world rotation, i.e. `d_world^T = d_cam^T R`.
pub fn generate_rays_vars(
    tape: &mut Tape,
    pose: &PoseVars,
    k: &Intrinsics,
    pixels: &[(usize, usize)],
) -> Result<RayVars> {
    let mut cam = Vec::with_capacity(pixels.len() * 3);
    for &(row, col) in pixels {
        k.check_pixel(row, col)?;
        cam.extend_from_slice(k.camera_direction(row, col).as_slice());
    }
    let cam = tape.constant(Tensor::new(vec![pixels.len(), 3], cam)?);
    let rot = pose_rotation_vars(tape, pose.phi, pose.theta)?;
    let directions = tape.matmul(cam, rot)?;
    let origin = pose_center_vars(tape, pose)?;
    Ok(RayVars { origin, directions })
}

/// Constant ray bundle for a fixed extrinsic.
pub fn generate_rays_const(
    tape: &mut Tape,
    camera: &Extrinsic,
    k: &Intrinsics,
    pixels: &[(usize, usize)],
) -> Result<RayVars> {
    let rays = generate_rays(camera, k, pixels)?;
    let dirs = rays.iter().flat_map(|r| r.direction.iter().copied()).collect();
    let directions = tape.constant(Tensor::new(vec![rays.len(), 3], dirs)?);
    let origin = tape.constant(Tensor::new(vec![1, 3], camera.center.as_slice().to_vec())?);
    Ok(RayVars { origin, directions })
}
