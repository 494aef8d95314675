//! Pinhole camera algebra: extrinsics, intrinsics, relative re-anchoring and
//! scale normalization of pose sequences.
//!
//! Extrinsics are world→camera: a world point `X` maps to `R·X + T` in the
//! camera frame, and the camera center is `C = −Rᵀ·T`.

mod plucker;
pub mod pose_file;

pub use plucker::{plucker_grid, ray_direction, PixelSampling, PluckerGrid, PluckerOptions, RayMode};

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.fx > zero && self.fy > zero) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let (w, h) = (T::from_count(self.width), T::from_count(self.height));
        if !(self.cx >= zero && self.cx <= w && self.cy >= zero && self.cy <= h) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    /// `K⁻¹·(x, y, 1)ᵀ`, the camera-frame ray through a pixel position.
    pub fn unproject(&self, x: T, y: T) -> Vector3<T> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, T::one())
    }

    /// Scales focal lengths and principal point from normalized units.
    pub fn from_normalized(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let (w, h) = (T::from_count(width), T::from_count(height));
        Self::new(fx * w, fy * h, cx * w, cy * h, width, height)
    }

    /// `(fx/W, fy/H, cx/W, cy/H)`
    pub fn normalized(&self) -> [T; 4] {
        let (w, h) = (T::from_count(self.width), T::from_count(self.height));
        [self.fx / w, self.fy / h, self.cx / w, self.cy / h]
    }
}

/// Rigid world→camera transform `[R|T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<T: Real> {
    rotation: Matrix3<T>,
    translation: Vector3<T>,
}

/// Max absolute entry of `RᵀR − I` together with `|det R − 1|`.
fn orthonormality_defect<T: Real>(r: &Matrix3<T>) -> T {
    let gram = r.transpose() * r - Matrix3::identity();
    let det = (r.determinant() - T::one()).abs();
    gram.amax().max(det)
}

/// Checks `RᵀR = I` and `det R = +1` within the scalar's validation tolerance.
pub fn check_rotation<T: Real>(r: &Matrix3<T>) -> Result<()> {
    if r.iter().any(|v| !v.is_finite_value()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let defect = orthonormality_defect(r);
    if defect > T::lit(T::VALIDATION_TOL) {
        return Err(Error::InvalidRotation(format!("orthonormality defect {defect} exceeds {}", T::VALIDATION_TOL)));
    }
    Ok(())
}

/// Nearest rotation in the Frobenius sense (`U·Vᵀ` from the SVD).
pub fn nearest_rotation<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut u_flip = u;
        u_flip.column_mut(2).neg_mut();
        r = u_flip * v_t;
    }
    r
}

impl<T: Real> CameraPose<T> {
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::InvalidRotation("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Like [`CameraPose::new`], but rotations within `REPAIR_TOL` of
    /// orthonormal are projected back onto SO(3). Used for parsed files whose
    /// decimal rounding leaves small defects.
    pub fn new_repaired(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self> {
        if check_rotation(&rotation).is_ok() {
            return Self::new(rotation, translation);
        }
        let defect = orthonormality_defect(&rotation);
        if defect.is_finite_value() && defect <= T::lit(T::REPAIR_TOL) {
            Self::new(nearest_rotation(&rotation), translation)
        } else {
            Err(Error::InvalidRotation(format!(
                "orthonormality defect {defect} exceeds repair tolerance {}",
                T::REPAIR_TOL
            )))
        }
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Pose of a camera at `center` with camera-to-world rotation `cam_to_world`.
    pub fn from_center(cam_to_world: Matrix3<T>, center: Vector3<T>) -> Result<Self> {
        let rotation = cam_to_world.transpose();
        let translation = -(rotation * center);
        Self::new(rotation, translation)
    }

    /// Camera at `eye` looking at `target` (OpenCV axes: +z forward, +y down).
    pub fn look_at(eye: Vector3<T>, target: Vector3<T>, up: Vector3<T>) -> Result<Self> {
        let forward = target - eye;
        let fnorm = forward.norm();
        if fnorm <= T::lit(1e-12) {
            return Err(Error::DegenerateRay("look-at target coincides with eye".into()));
        }
        let forward = forward / fnorm;
        let right = forward.cross(&up);
        let rnorm = right.norm();
        if rnorm <= T::lit(1e-12) {
            return Err(Error::DegenerateRay("look-at direction parallel to up vector".into()));
        }
        let right = right / rnorm;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * eye))
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    /// Camera center `C = −Rᵀ·T`, the origin of every ray of this camera.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Same rotation, camera center multiplied by `factor`.
    pub fn scale_center(&self, factor: T) -> Self {
        Self { rotation: self.rotation, translation: self.translation * factor }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self.rotation - other.rotation).amax().max((self.translation - other.translation).amax())
    }
}

/// Free-function form of [`CameraPose::center`].
pub fn camera_center<T: Real>(pose: &CameraPose<T>) -> Vector3<T> {
    pose.center()
}

/// Ordered poses sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence<T: Real> {
    poses: Vec<CameraPose<T>>,
    intrinsics: CameraIntrinsics<T>,
}

impl<T: Real> PoseSequence<T> {
    pub fn new(poses: Vec<CameraPose<T>>, intrinsics: CameraIntrinsics<T>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::EmptyInput("pose sequence needs at least one pose".into()));
        }
        intrinsics.validate()?;
        Ok(Self { poses, intrinsics })
    }

    pub fn poses(&self) -> &[CameraPose<T>] {
        &self.poses
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics<T> {
        &self.intrinsics
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn centers(&self) -> Vec<Vector3<T>> {
        self.poses.iter().map(CameraPose::center).collect()
    }

    pub fn with_poses(&self, poses: Vec<CameraPose<T>>) -> Result<Self> {
        Self::new(poses, self.intrinsics)
    }

    pub fn into_poses(self) -> Vec<CameraPose<T>> {
        self.poses
    }
}

/// Re-expresses every pose relative to the first one; see [`to_relative_at`].
pub fn to_relative<T: Real>(seq: &PoseSequence<T>) -> PoseSequence<T> {
    to_relative_at(seq, 0).expect("anchor 0 exists in a non-empty sequence")
}

/// Re-expresses every pose in the camera frame of `anchor`.
///
/// Pose `i` becomes `Eᵢ·E_anchor⁻¹`: rotation `Rᵢ·R_aᵀ` and camera center
/// `R_a·(Cᵢ − C_a)`. The anchor itself becomes exactly the identity.
pub fn to_relative_at<T: Real>(seq: &PoseSequence<T>, anchor: usize) -> Result<PoseSequence<T>> {
    let Some(anchor_pose) = seq.poses.get(anchor) else {
        return Err(Error::LengthMismatch(format!("anchor index {anchor} outside sequence of length {}", seq.len())));
    };
    let inv = anchor_pose.inverse();
    let poses = seq
        .poses
        .iter()
        .enumerate()
        .map(|(i, p)| if i == anchor { CameraPose::identity() } else { p.compose(&inv) })
        .collect();
    Ok(PoseSequence { poses, intrinsics: seq.intrinsics })
}

/// Divides every camera center by the largest center distance across all
/// sequences, so the farthest camera ends up at distance 1. Returns the
/// rescaled sequences and the divisor.
pub fn normalize_scale<T: Real>(seqs: &[PoseSequence<T>]) -> Result<(Vec<PoseSequence<T>>, T)> {
    let scale = seqs.iter().flat_map(|s| s.poses.iter()).map(|p| p.center().norm()).fold(T::zero(), |a, b| a.max(b));
    if !(scale > T::lit(1e-12)) {
        return Err(Error::DegenerateScale);
    }
    if scale == T::one() {
        return Ok((seqs.to_vec(), scale));
    }
    let out = seqs
        .iter()
        .map(|s| PoseSequence {
            poses: s
                .poses
                .iter()
                .map(|p| CameraPose { rotation: p.rotation, translation: p.translation / scale })
                .collect(),
            intrinsics: s.intrinsics,
        })
        .collect();
    Ok((out, scale))
}

/// Rotation by `angle` radians about the z axis.
pub fn rot_z<T: Real>(angle: T) -> Matrix3<T> {
    let (s, c) = angle.sin_cos();
    let (z, o) = (T::zero(), T::one());
    Matrix3::new(c, -s, z, s, c, z, z, z, o)
}

/// Rotation by `angle` radians about the x axis.
pub fn rot_x<T: Real>(angle: T) -> Matrix3<T> {
    let (s, c) = angle.sin_cos();
    let (z, o) = (T::zero(), T::one());
    Matrix3::new(o, z, z, z, c, -s, z, s, c)
}

/// Rotation from an axis-angle vector (Rodrigues).
pub fn rot_from_axis_angle<T: Real>(axis_angle: Vector3<T>) -> Matrix3<T> {
    nalgebra::Rotation3::new(axis_angle).into_inner()
}
