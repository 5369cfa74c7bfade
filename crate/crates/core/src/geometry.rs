//! Camera model, rigid transforms and the reprojection-error functional
//! shared by tracking and evaluation.
//!
//! Pose convention: `PoseSE3` maps world points into the camera frame
//! (world-to-camera). Trajectory I/O converts to camera-to-world at the
//! file boundary.

use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

pub type Vector6 = nalgebra::Vector6<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {depth}")]
    InvalidDepth { depth: f64 },
    #[error("invalid intrinsics: {reason}")]
    InvalidIntrinsics { reason: String },
    #[error("pixel ({u}, {v}) outside image border")]
    OutsideBorder { u: i64, v: i64 },
}

/// Pinhole camera intrinsics. `depth_scale` is raw-depth-units per meter
/// (TUM uses 5000).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        depth_scale: f64,
    ) -> Result<Self, GeometryError> {
        let fail = |reason: &str| GeometryError::InvalidIntrinsics {
            reason: reason.to_string(),
        };
        if fx <= 0.0 || fy <= 0.0 {
            return Err(fail("focal lengths must be positive"));
        }
        if cx <= 0.0 || cx >= width as f64 {
            return Err(fail("cx must lie inside the image"));
        }
        if cy <= 0.0 || cy >= height as f64 {
            return Err(fail("cy must lie inside the image"));
        }
        if depth_scale <= 0.0 {
            return Err(fail("depth_scale must be positive"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        })
    }

    /// TUM fr3 defaults at VGA resolution.
    pub fn tum_default() -> Self {
        Self {
            fx: 535.4,
            fy: 539.2,
            cx: 320.1,
            cy: 247.6,
            width: 640,
            height: 480,
            depth_scale: 5000.0,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }
}

/// Project a camera-frame point to pixel coordinates.
pub fn project(k: &CameraIntrinsics, p: &Vector3<f64>) -> Result<(f64, f64), GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Back-project a pixel with known depth to a camera-frame point.
pub fn backproject(
    k: &CameraIntrinsics,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::InvalidDepth { depth });
    }
    Ok(Vector3::new(
        (u - k.cx) / k.fx * depth,
        (v - k.cy) / k.fy * depth,
        depth,
    ))
}

/// Rigid transform, world-to-camera: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::from_euler_angles(roll, pitch, yaw),
            translation,
        }
    }

    /// Build from a (possibly slightly denormalized) quaternion in TUM
    /// order (qx, qy, qz, qw).
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>) -> Self {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let unit = UnitQuaternion::from_quaternion(quat);
        Self {
            rotation: unit.to_rotation_matrix(),
            translation,
        }
    }

    /// Quaternion in TUM order (qx, qy, qz, qw), with qw >= 0.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let (w, x, y, z) = (q.w, q.i, q.j, q.k);
        if w < 0.0 {
            [-x, -y, -z, -w]
        } else {
            [x, y, z, w]
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.inverse();
        Self {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    /// Re-orthonormalize the rotation after long composition chains.
    pub fn renormalize(&mut self) {
        self.rotation = Rotation3::from_matrix(&self.rotation.into_inner());
    }

    /// Left-multiplicative update by a 6-DoF increment
    /// `delta = [rho; phi]` (translation first, rotation second):
    /// the result applies `(exp([phi]x), rho)` after `self`.
    pub fn perturb(&self, delta: &Vector6) -> Self {
        let rho = Vector3::new(delta[0], delta[1], delta[2]);
        let phi = Vector3::new(delta[3], delta[4], delta[5]);
        let r_delta = Rotation3::from_scaled_axis(phi);
        Self {
            rotation: r_delta * self.rotation,
            translation: r_delta * self.translation + rho,
        }
    }

    /// Geodesic angle of the relative rotation to `other`, radians.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }

    pub fn translation_distance_to(&self, other: &Self) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;

    /// `self * other` applies `other` first: `(R1 R2, R1 t2 + t1)`.
    fn mul(self, other: PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// What to do with observations whose point lands behind the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehindCamera {
    Skip,
    Fail,
}

#[derive(Debug, Clone, Copy)]
pub struct ReprojStats {
    /// `1/2 * sum of squared pixel residuals` over the used observations.
    pub error: f64,
    pub used: usize,
    pub excluded: usize,
}

/// An observation of a world point at a measured pixel.
pub type Observation = (Vector3<f64>, (f64, f64));

/// `e = 1/2 * sum_i || u_i - proj(K, T * P_i) ||^2`
pub fn reprojection_error(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    observations: &[Observation],
    policy: BehindCamera,
) -> Result<ReprojStats, GeometryError> {
    let mut error = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for (world, (u, v)) in observations {
        let p_cam = pose.transform(world);
        if p_cam.z <= 0.0 {
            match policy {
                BehindCamera::Skip => {
                    excluded += 1;
                    continue;
                }
                BehindCamera::Fail => return Err(GeometryError::BehindCamera { z: p_cam.z }),
            }
        }
        let (pu, pv) = project(k, &p_cam)?;
        let du = u - pu;
        let dv = v - pv;
        error += 0.5 * (du * du + dv * dv);
        used += 1;
    }
    Ok(ReprojStats {
        error,
        used,
        excluded,
    })
}

/// Jacobian of the projected pixel w.r.t. the camera-frame point.
pub fn projection_jacobian(k: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let z_inv = 1.0 / p_cam.z;
    let z_inv2 = z_inv * z_inv;
    Matrix2x3::new(
        k.fx * z_inv,
        0.0,
        -k.fx * p_cam.x * z_inv2,
        0.0,
        k.fy * z_inv,
        -k.fy * p_cam.y * z_inv2,
    )
}

/// Jacobian of the pixel residual `u_obs - proj(T * P)` w.r.t. the pose
/// increment of [`PoseSE3::perturb`], evaluated at delta = 0.
pub fn residual_pose_jacobian(k: &CameraIntrinsics, p_cam: &Vector3<f64>) -> Matrix2x6<f64> {
    let j_proj = projection_jacobian(k, p_cam);
    let skew = Matrix3::new(
        0.0, -p_cam.z, p_cam.y, //
        p_cam.z, 0.0, -p_cam.x, //
        -p_cam.y, p_cam.x, 0.0,
    );
    let mut j = Matrix2x6::zeros();
    // d p_cam / d rho = I, d p_cam / d phi = -[p_cam]x; residual carries
    // an extra minus sign.
    let j_point = -j_proj;
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&j_point);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(j_point * (-skew)));
    j
}

/// Gradient of [`reprojection_error`] w.r.t. the 6-DoF increment of
/// [`PoseSE3::perturb`], evaluated at delta = 0. Behind-camera points are
/// rejected.
pub fn reprojection_gradient(
    k: &CameraIntrinsics,
    pose: &PoseSE3,
    observations: &[Observation],
) -> Result<Vector6, GeometryError> {
    let mut grad = Vector6::zeros();
    for (world, (u, v)) in observations {
        let p_cam = pose.transform(world);
        if p_cam.z <= 0.0 {
            return Err(GeometryError::BehindCamera { z: p_cam.z });
        }
        let (pu, pv) = project(k, &p_cam)?;
        let r = Vector2::new(u - pu, v - pv);
        let j = residual_pose_jacobian(k, &p_cam);
        grad += j.transpose() * r;
    }
    Ok(grad)
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    /// Bilinear sample; coordinates are clamped to the valid domain
    /// `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn bilinear(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = (x as usize).min(self.width.saturating_sub(2));
        let y0 = (y as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = self.at(x0, y0) as f32;
        let p10 = self.at(x1, y0) as f32;
        let p01 = self.at(x0, y1) as f32;
        let p11 = self.at(x1, y1) as f32;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }
}

/// Depth image in meters, row-major; 0 encodes invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depths: vec![0.0; width * height],
        }
    }

    pub fn from_depths(width: usize, height: usize, depths: Vec<f32>) -> Self {
        assert_eq!(depths.len(), width * height, "depth count mismatch");
        debug_assert!(depths.iter().all(|d| d.is_finite() && *d >= 0.0));
        Self {
            width,
            height,
            depths,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.depths[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.depths[y * self.width + x] = value;
    }

    /// Depth at the nearest integer pixel, `None` when invalid (0) or out
    /// of bounds.
    pub fn sample(&self, u: f64, v: f64) -> Option<f32> {
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.at(x, y);
        (d > 0.0).then_some(d)
    }
}
