//! Pinhole camera and rays.
//!
//! Camera space convention: x right, y up, the camera looks along -z.
//! Image coordinates: u grows right, v grows down, origin at the top-left
//! pixel corner. Rays are cast through pixel centers (px + 0.5, py + 0.5).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{vec3, Mat3, Vec3};

use super::scene_bounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation part of the camera-to-world transform.
    pub rotation: Mat3,
    /// Translation part of the camera-to-world transform (camera position).
    pub translation: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.rotation.orthonormality_error() > 1e-9 {
            return Err(Error::InvalidInput(
                "camera rotation is not orthonormal".into(),
            ));
        }
        if (self.rotation.det() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "camera rotation determinant is not +1".into(),
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::InvalidInput(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// Camera position in world space.
    pub fn position(&self) -> Vec3 {
        self.translation
    }

    /// A camera at `position` looking at `target` with +y as the up hint.
    pub fn look_at(
        position: Vec3,
        target: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let backward = (position - target).normalized(); // camera +z
        let up_hint = vec3(0.0, 1.0, 0.0);
        let right = up_hint.cross(backward).normalized();
        let up = backward.cross(right);
        Camera {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: Mat3::from_cols(right, up, backward),
            translation: position,
        }
    }

    /// World-space ray through the continuous image point (u, v).
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let dir_cam = vec3((u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0);
        let dir = (self.rotation * dir_cam).normalized();
        let origin = self.position();
        match scene_bounds().intersect_ray(origin, dir) {
            Some((t0, t1)) if t1 > 0.0 => Ray {
                origin,
                direction: dir,
                t_near: t0.max(0.0),
                t_far: t1,
                empty: false,
            },
            _ => Ray {
                origin,
                direction: dir,
                t_near: 0.0,
                t_far: 0.0,
                empty: true,
            },
        }
    }

    /// Ray through the center of pixel (px, py).
    pub fn generate_ray(&self, px: usize, py: usize) -> Ray {
        assert!(px < self.width && py < self.height, "pixel out of bounds");
        self.ray_through(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Projects a world point to continuous image coordinates with its
    /// positive depth along the optical axis. `None` if the point is behind
    /// the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let q = self.rotation.transpose() * (p - self.translation);
        let depth = -q.z;
        if depth <= 1e-12 {
            return None;
        }
        let u = self.cx + self.fx * q.x / depth;
        let v = self.cy - self.fy * q.y / depth;
        Some((u, v, depth))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    /// True when the ray misses the scene bounding box; renders as background.
    pub empty: bool,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}
