//! Per-pixel Plücker ray embeddings `(d′, o × d′)`.

use nalgebra::Vector3;

use super::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// How the pixel ray direction is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RayMode {
    /// `normalize(Rᵀ·K⁻¹·(x, y, 1)ᵀ)`: the camera ray rotated into world axes.
    #[default]
    Standard,
    /// `normalize(R·K⁻¹·(x, y, 1)ᵀ + T)`, the formula taken literally, which
    /// adds a translation to a direction.
    PaperLiteral,
}

/// Where inside a grid cell the ray is cast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelSampling {
    #[default]
    Center,
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PluckerOptions {
    pub mode: RayMode,
    pub sampling: PixelSampling,
}

/// Unit world-space direction of the ray through pixel position `(x, y)`.
///
/// `(x, y)` are continuous pixel coordinates in `[0, width] × [0, height]`;
/// the principal point `(cx, cy)` maps to the optical axis.
pub fn ray_direction<T: Real>(
    intrinsics: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
    pixel: (T, T),
    mode: RayMode,
) -> Result<Vector3<T>> {
    let (x, y) = pixel;
    let (w, h) = (T::from_count(intrinsics.width), T::from_count(intrinsics.height));
    if !(x >= T::zero() && x <= w && y >= T::zero() && y <= h) {
        return Err(Error::PixelOutOfBounds(format!(
            "({x}, {y}) outside {}x{} image",
            intrinsics.width, intrinsics.height
        )));
    }
    let cam_ray = intrinsics.unproject(x, y);
    let d = match mode {
        RayMode::Standard => pose.rotation().transpose() * cam_ray,
        RayMode::PaperLiteral => pose.rotation() * cam_ray + pose.translation(),
    };
    let n = d.norm();
    if !(n >= T::lit(1e-12)) {
        return Err(Error::DegenerateRay(format!("ray norm {n} below 1e-12 at ({x}, {y})")));
    }
    Ok(d / n)
}

/// Row-major `height × width` grid of 6-vectors `[d′ | o × d′]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerGrid<T: Real> {
    height: usize,
    width: usize,
    rays: Vec<[T; 6]>,
}

impl<T: Real> PluckerGrid<T> {
    /// Grid with every channel zero.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, rays: vec![[T::zero(); 6]; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> &[T; 6] {
        &self.rays[row * self.width + col]
    }

    pub fn direction(&self, row: usize, col: usize) -> Vector3<T> {
        let r = self.at(row, col);
        Vector3::new(r[0], r[1], r[2])
    }

    pub fn moment(&self, row: usize, col: usize) -> Vector3<T> {
        let r = self.at(row, col);
        Vector3::new(r[3], r[4], r[5])
    }

    pub fn rays(&self) -> &[[T; 6]] {
        &self.rays
    }

    /// Channel `c` (0..6) at every pixel, row-major.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = T> + '_ {
        self.rays.iter().map(move |r| r[c])
    }

    /// Channel-major `(6, H, W)` layout.
    pub fn to_chw(&self) -> Vec<T> {
        (0..6).flat_map(|c| self.channel(c)).collect()
    }

    /// Largest `|‖d′‖ − 1|` and `|m·d′|` over all pixels.
    pub fn max_invariant_defect(&self) -> (T, T) {
        (0..self.height).flat_map(|r| (0..self.width).map(move |c| (r, c))).fold(
            (T::zero(), T::zero()),
            |(a, b), (r, c)| {
                let d = self.direction(r, c);
                let m = self.moment(r, c);
                (a.max((d.norm() - T::one()).abs()), b.max(m.dot(&d).abs()))
            },
        )
    }
}

/// Plücker embedding of every cell of an `h × w` grid laid over the image.
///
/// Grid cell `(i, j)` maps to image position `((j + δ)·W/w, (i + δ)·H/h)`
/// with `δ = 0.5` for center sampling and `0` for corner sampling, so a grid
/// coarser than the image (a latent) covers the same field of view. The ray
/// origin is the camera center of `pose`.
pub fn plucker_grid<T: Real>(
    intrinsics: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
    h: usize,
    w: usize,
    opts: PluckerOptions,
) -> Result<PluckerGrid<T>> {
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("grid size {h}x{w} must be at least 1x1")));
    }
    let offset = match opts.sampling {
        PixelSampling::Center => T::lit(0.5),
        PixelSampling::Corner => T::zero(),
    };
    let sx = T::from_count(intrinsics.width) / T::from_count(w);
    let sy = T::from_count(intrinsics.height) / T::from_count(h);
    let origin = pose.center();
    let mut rays = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = (T::from_count(i) + offset) * sy;
        for j in 0..w {
            let x = (T::from_count(j) + offset) * sx;
            let d = ray_direction(intrinsics, pose, (x, y), opts.mode)?;
            let m = origin.cross(&d);
            rays.push([d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    Ok(PluckerGrid { height: h, width: w, rays })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::rot_from_axis_angle;
    use nalgebra::Matrix3;

    fn unit_k(w: usize, h: usize) -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, w, h).unwrap()
    }

    /// Independent oracle: explicit inverse of the 3×3 K matrix.
    fn k_inv_oracle(k: &CameraIntrinsics<f64>, x: f64, y: f64) -> Vector3<f64> {
        k.matrix().try_inverse().unwrap() * Vector3::new(x, y, 1.0)
    }

    #[test]
    fn principal_point_looks_down_optical_axis() {
        let k = CameraIntrinsics::new(50.0, 60.0, 16.0, 12.0, 32, 24).unwrap();
        let p = CameraPose::identity();
        for mode in [RayMode::Standard, RayMode::PaperLiteral] {
            let d = ray_direction(&k, &p, (16.0, 12.0), mode).unwrap();
            assert!((d - Vector3::z()).amax() < 1e-15);
        }
    }

    #[test]
    fn off_axis_pixel_matches_k_inverse_oracle() {
        let k = unit_k(2, 2);
        let d = ray_direction(&k, &CameraPose::identity(), (1.0, 0.0), RayMode::Standard).unwrap();
        let oracle = k_inv_oracle(&k, 1.0, 0.0).normalize();
        assert!((d - oracle).amax() < 1e-15);
        let s = 0.5f64.sqrt();
        assert!((d - Vector3::new(s, 0.0, s)).amax() < 1e-15);
    }

    #[test]
    fn modes_diverge_under_translation() {
        let k = unit_k(2, 2);
        let p = CameraPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 1.0)).unwrap();
        let std = ray_direction(&k, &p, (1.0, 0.0), RayMode::Standard).unwrap();
        let lit = ray_direction(&k, &p, (1.0, 0.0), RayMode::PaperLiteral).unwrap();
        let s2 = 0.5f64.sqrt();
        assert!((std - Vector3::new(s2, 0.0, s2)).amax() < 1e-15);
        let oracle = (k_inv_oracle(&k, 1.0, 0.0) + Vector3::new(0.0, 0.0, 1.0)).normalize();
        assert!((lit - oracle).amax() < 1e-15);
        let s5 = 5f64.sqrt();
        assert!((lit - Vector3::new(1.0 / s5, 0.0, 2.0 / s5)).amax() < 1e-15);
    }

    #[test]
    fn degenerate_and_out_of_bounds_rays() {
        let k = unit_k(2, 2);
        // R·K⁻¹(0,0,1) = (0,0,1); adding T = (0,0,-1) cancels it.
        let p = CameraPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert!(matches!(ray_direction(&k, &p, (0.0, 0.0), RayMode::PaperLiteral), Err(Error::DegenerateRay(_))));
        assert!(matches!(ray_direction(&k, &p, (3.0, 0.0), RayMode::Standard), Err(Error::PixelOutOfBounds(_))));
    }

    #[test]
    fn identity_pose_has_zero_moments() {
        let k = CameraIntrinsics::new(20.0, 20.0, 8.0, 6.0, 16, 12).unwrap();
        let g = plucker_grid(&k, &CameraPose::identity(), 12, 16, PluckerOptions::default()).unwrap();
        assert!(g.rays().iter().all(|r| r[3] == 0.0 && r[4] == 0.0 && r[5] == 0.0));
    }

    #[test]
    fn moment_at_principal_point_matches_cross_product() {
        let k = CameraIntrinsics::new(3.0, 3.0, 1.5, 1.5, 3, 3).unwrap();
        let pose = CameraPose::from_center(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let g = plucker_grid(&k, &pose, 3, 3, PluckerOptions::default()).unwrap();
        assert!((g.direction(1, 1) - Vector3::z()).amax() < 1e-15);
        assert!((g.moment(1, 1) - Vector3::new(0.0, -1.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn grid_invariants_on_rotated_pose() {
        let k = CameraIntrinsics::new(30.0, 25.0, 10.0, 7.0, 20, 14).unwrap();
        let pose =
            CameraPose::new(rot_from_axis_angle(Vector3::new(0.4, -1.2, 0.3)), Vector3::new(2.0, -1.0, 5.0)).unwrap();
        for sampling in [PixelSampling::Center, PixelSampling::Corner] {
            let g = plucker_grid(&k, &pose, 7, 10, PluckerOptions { mode: RayMode::Standard, sampling }).unwrap();
            let (dn, md) = g.max_invariant_defect();
            assert!(dn < 1e-12 && md < 1e-12);
        }
    }

    #[test]
    fn chw_layout_and_shape_errors() {
        let k = unit_k(2, 2);
        let g = plucker_grid(&k, &CameraPose::identity(), 2, 2, PluckerOptions::default()).unwrap();
        let chw = g.to_chw();
        assert_eq!(chw.len(), 24);
        assert_eq!(chw[2 * 4 + 3], g.at(1, 1)[2]);
        assert!(plucker_grid(&k, &CameraPose::identity(), 0, 2, PluckerOptions::default()).is_err());
    }
}
