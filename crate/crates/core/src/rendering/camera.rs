use serde::{Deserialize, Serialize};

use super::RenderError;

/// Pinhole camera with a camera-to-world pose `[R | t]` (row-major 3×4).
///
/// The camera looks down its +z axis; pixel `(u, v)` has its center at
/// `(u + 0.5, v + 0.5)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    pub pose: [f64; 12],
}

pub const IDENTITY_POSE: [f64; 12] = [
    1.0, 0.0, 0.0, 0.0, //
    0.0, 1.0, 0.0, 0.0, //
    0.0, 0.0, 1.0, 0.0,
];

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// A ray `r(s) = origin + s · step`.
///
/// `direction` is the unit view direction fed to the field. `step` is the
/// same direction scaled so its camera-frame z component is 1, so the ray
/// parameter `s` is camera-frame depth and `near`/`far` are depth bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub step: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Ray {
    #[inline]
    pub fn at(&self, s: f64) -> [f64; 3] {
        [
            self.origin[0] + s * self.step[0],
            self.origin[1] + s * self.step[1],
            self.origin[2] + s * self.step[2],
        ]
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |msg: String| Err(RenderError::InvalidCamera(msg));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive ({}, {})", self.fx, self.fy));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far (near {}, far {})", self.near, self.far));
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty image".into());
        }
        if self.pose.iter().any(|v| !v.is_finite()) || ![self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return bad("non-finite value".into());
        }
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOLERANCE {
                    return bad("pose rotation is not orthonormal".into());
                }
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let p = &self.pose;
        [[p[0], p[1], p[2]], [p[4], p[5], p[6]], [p[8], p[9], p[10]]]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.pose[3], self.pose[7], self.pose[11]]
    }

    pub fn camera_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i])
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        let q = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
        std::array::from_fn(|i| r[0][i] * q[0] + r[1][i] * q[1] + r[2][i] * q[2])
    }

    /// Continuous image coordinates of a world point; pixel `(u, v)` has
    /// its center at `(u + 0.5, v + 0.5)`.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        let c = self.world_to_camera(p);
        [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy]
    }

    /// Ray through the center of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Result<Ray, RenderError> {
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return Err(RenderError::PixelOutOfBounds { u, v });
        }
        let local = [
            (u + 0.5 - self.cx) / self.fx,
            (v + 0.5 - self.cy) / self.fy,
            1.0,
        ];
        let r = self.rotation();
        let step: [f64; 3] =
            std::array::from_fn(|i| r[i][0] * local[0] + r[i][1] * local[1] + r[i][2] * local[2]);
        let n = (step[0] * step[0] + step[1] * step[1] + step[2] * step[2]).sqrt();
        Ok(Ray {
            origin: self.translation(),
            direction: [step[0] / n, step[1] / n, step[2] / n],
            step,
            near: self.near,
            far: self.far,
        })
    }
}
