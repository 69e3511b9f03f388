//! Pinhole camera model.
//!
//! Conventions: extrinsics map world to camera (`x_c = R x_w + t`), the camera
//! looks down `+z`, `x` points right and `y` points down in the image, and the
//! image origin is the top-left corner. Integer pixel coordinates `(col, row)`
//! address pixel centers, so the pixel containing sub-pixel `(u, v)` is the
//! nearest integer.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::worldgen::{CameraView, ScenePointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(focal, focal, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Nearest integer pixel `(row, col)` for an in-image sub-pixel coordinate.
    pub fn snap(&self, u: f64, v: f64) -> (usize, usize) {
        let col = (u.round().max(0.0) as usize).min(self.width - 1);
        let row = (v.round().max(0.0) as usize).min(self.height - 1);
        (row, col)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho >= 1e-9 || (rotation.determinant() - 1.0).abs() >= 1e-9 {
            return Err(Error::Config("rotation is not a proper orthonormal matrix".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera at `eye` looking at `target`, with `up` as the world vertical.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at: eye equals target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Config("look_at: view direction parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * eye))
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn to_world(&self, camera: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (camera - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// A sub-pixel location in a specific view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub view_id: usize,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// A 3D point paired with the pixel it projects to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point_index: usize,
    pub pixel: PixelCoord,
    pub depth: f64,
}

/// Projects a world point. `None` when the point is behind the camera or
/// lands outside the image.
pub fn project(point: &Vector3<f64>, pose: &CameraPose, k: &CameraIntrinsics) -> Option<Projection> {
    let pc = pose.to_camera(point);
    if !(pc.z > 0.0) {
        return None;
    }
    let u = k.fx * pc.x / pc.z + k.cx;
    let v = k.fy * pc.y / pc.z + k.cy;
    k.contains(u, v).then_some(Projection { u, v, depth: pc.z })
}

/// Lifts a pixel at camera-space depth `depth` into world coordinates.
pub fn unproject(pixel: &PixelCoord, depth: f64, pose: &CameraPose, k: &CameraIntrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::Domain(format!("unproject needs positive depth, got {depth}")));
    }
    Ok(pose.to_world(&camera_point(pixel.u, pixel.v, depth, k)))
}

fn camera_point(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth)
}

/// World-space unit ray direction through pixel `(u, v)`.
pub fn pixel_ray(u: f64, v: f64, pose: &CameraPose, k: &CameraIntrinsics) -> Vector3<f64> {
    let dir_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    (pose.rotation.transpose() * dir_cam).normalize()
}

/// Z-buffer visibility of a cloud point in a rendered view.
///
/// A point is visible when it projects into the image with positive depth and
/// is not farther than the rendered surface at that pixel by more than
/// `z_tolerance`. Pixels where nothing was rendered occlude nothing.
pub fn visible_in_view(point_index: usize, cloud: &ScenePointCloud, view: &CameraView, z_tolerance: f64) -> bool {
    let Some(position) = cloud.position(point_index) else {
        return false;
    };
    let Some(p) = project(&position, &view.pose, &view.intrinsics) else {
        return false;
    };
    let (row, col) = view.intrinsics.snap(p.u, p.v);
    let surface = view.gt_depth[[row, col]];
    if surface <= 0.0 {
        return true;
    }
    p.depth <= surface + z_tolerance
}

/// Correspondences between the cloud and `view` for points reconstructed
/// from that view. Their pixel is the provenance pixel.
pub fn provenance_correspondences(cloud: &ScenePointCloud, view: &CameraView) -> Vec<Correspondence> {
    cloud
        .points_from_view(view.view_id)
        .filter_map(|i| {
            let position = cloud.position(i)?;
            let depth = view.pose.to_camera(&position).z;
            let src = cloud.source[i];
            (depth > 0.0).then_some(Correspondence {
                point_index: i,
                pixel: PixelCoord { u: src.col as f64, v: src.row as f64, view_id: view.view_id },
                depth,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k32() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 16.0, 16.0, 32, 32).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let p = project(&Vector3::new(0.0, 0.0, 2.0), &CameraPose::identity(), &k32()).unwrap();
        assert_eq!((p.u, p.v, p.depth), (16.0, 16.0, 2.0));
    }

    #[test]
    fn behind_camera_is_empty() {
        assert!(project(&Vector3::new(0.0, 0.0, -1.0), &CameraPose::identity(), &k32()).is_none());
    }

    #[test]
    fn principal_point_unprojects_on_axis() {
        let px = PixelCoord { u: 16.0, v: 16.0, view_id: 0 };
        let x = unproject(&px, 3.5, &CameraPose::identity(), &k32()).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 3.5));
    }

    #[test]
    fn zero_depth_is_domain_error() {
        let px = PixelCoord { u: 16.0, v: 16.0, view_id: 0 };
        assert!(matches!(unproject(&px, 0.0, &CameraPose::identity(), &k32()), Err(Error::Domain(_))));
        assert!(matches!(unproject(&px, -1.0, &CameraPose::identity(), &k32()), Err(Error::Domain(_))));
    }

    #[test]
    fn look_at_is_proper_and_forward_is_plus_z() {
        let eye = Vector3::new(3.0, 1.0, 1.5);
        let target = Vector3::new(0.0, 0.0, 0.2);
        let pose = CameraPose::look_at(eye, target, Vector3::z()).unwrap();
        let t = pose.to_camera(&target);
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
        assert!((pose.center() - eye).norm() < 1e-12);
        // a point above the target appears higher in the image (smaller v)
        let k = CameraIntrinsics::centered(40.0, 48, 48).unwrap();
        let lo = project(&target, &pose, &k).unwrap();
        let hi = project(&(target + Vector3::new(0.0, 0.0, 0.3)), &pose, &k).unwrap();
        assert!(hi.v < lo.v);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        assert!(CameraPose::new(r, Vector3::zeros()).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
    }

    #[test]
    fn pose_composition_matches_identity_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = CameraIntrinsics::centered(40.0, 48, 48).unwrap();
        for _ in 0..200 {
            let eye = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.5..3.0));
            let pose = CameraPose::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap();
            let x = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0));
            let a = project(&x, &pose, &k);
            let b = project(&pose.to_camera(&x), &CameraPose::identity(), &k);
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert!((a.u - b.u).abs() < 1e-12 && (a.v - b.v).abs() < 1e-12 && (a.depth - b.depth).abs() < 1e-12)
                }
                (None, None) => {}
                _ => panic!("projection disagreement"),
            }
        }
    }

    #[test]
    fn snap_rounds_and_clamps() {
        let k = k32();
        assert_eq!(k.snap(3.4, 7.6), (8, 3));
        assert_eq!(k.snap(31.7, 0.2), (0, 31));
    }
}
