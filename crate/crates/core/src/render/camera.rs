//! Orbiting camera. The viewpoint is described by yaw/pitch/roll around a
//! target point plus a distance; world points are carried into camera space
//! by successive axis rotations, which keeps the "rotate the camera by yaw"
//! and "rotate the mesh by -yaw" paths on the identical float sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mat_vec, rot_x, rot_y, rot_z, sub3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    Perspective,
    WeakPerspective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Radians; orbit angles about the target.
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    /// Meters from the target to the camera.
    pub distance: f64,
    /// Vertical field of view in radians (perspective) or image scale
    /// (weak-perspective: world units to half-image-heights).
    pub fov_y: f64,
    pub projection: Projection,
}

impl Default for CameraPose {
    fn default() -> Self {
        CameraPose {
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            distance: 0.4,
            fov_y: std::f64::consts::FRAC_PI_4,
            projection: Projection::Perspective,
        }
    }
}

impl CameraPose {
    pub fn turntable(yaw: f64) -> Self {
        CameraPose {
            yaw,
            ..CameraPose::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "camera distance must be positive, got {}",
                self.distance
            )));
        }
        match self.projection {
            Projection::Perspective => {
                if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
                    return Err(Error::InvalidArgument(format!(
                        "fov_y must be in (0, pi), got {}",
                        self.fov_y
                    )));
                }
            }
            Projection::WeakPerspective => {
                if !(self.fov_y.is_finite() && self.fov_y > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "weak-perspective scale must be positive, got {}",
                        self.fov_y
                    )));
                }
            }
        }
        for (name, v) in [("yaw", self.yaw), ("pitch", self.pitch), ("roll", self.roll)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("camera {name} is not finite")));
            }
        }
        Ok(())
    }

    /// World point to camera space: translate to the target, undo yaw, then
    /// pitch, then roll, then push the scene to `z = -distance`. Camera at
    /// the origin looking down -z, y up.
    pub fn to_camera(&self, center: Vec3, p: Vec3) -> Vec3 {
        let v = sub3(p, center);
        let v = mat_vec(&rot_y(-self.yaw), v);
        let v = mat_vec(&rot_x(-self.pitch), v);
        let v = mat_vec(&rot_z(-self.roll), v);
        [v[0], v[1], v[2] - self.distance]
    }

    /// Project a camera-space point to pixel coordinates plus view depth.
    /// Pixels are square; x and y share the vertical scale. Returns `None`
    /// for points at or behind the eye plane under perspective.
    pub fn project(&self, width: usize, height: usize, q: Vec3) -> Option<(f64, f64, f64)> {
        let (w, h) = (width as f64, height as f64);
        match self.projection {
            Projection::Perspective => {
                let depth = -q[2];
                if depth <= 1e-9 {
                    return None;
                }
                let f = 1.0 / (self.fov_y * 0.5).tan();
                let px = 0.5 * w + 0.5 * h * f * q[0] / depth;
                let py = 0.5 * h - 0.5 * h * f * q[1] / depth;
                Some((px, py, depth))
            }
            Projection::WeakPerspective => {
                let px = 0.5 * w + 0.5 * h * self.fov_y * q[0];
                let py = 0.5 * h - 0.5 * h * self.fov_y * q[1];
                Some((px, py, -q[2]))
            }
        }
    }
}

/// Project a world point through a camera orbiting `center`.
pub fn project_point(
    cam: &CameraPose,
    center: Vec3,
    width: usize,
    height: usize,
    p: Vec3,
) -> Option<(f64, f64, f64)> {
    cam.project(width, height, cam.to_camera(center, p))
}
