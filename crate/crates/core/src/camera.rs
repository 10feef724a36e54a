//! Pinhole cameras, per-pixel rays, rigid transforms and training views.

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::geom::{Mat3, Ray, Vec3};
use crate::image::Image;

/// Pinhole camera in the NeRF convention: the camera looks down its local
/// `−z` axis with `+y` up, and `cam_to_world` maps camera to world space.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub cam_to_world: Matrix4<f64>,
    /// Normalized timestamp for dynamic scenes.
    pub time: Option<f64>,
}

impl Camera {
    /// Camera with square pixels and a centered principal point.
    pub fn new(width: usize, height: usize, focal: f64, cam_to_world: Matrix4<f64>) -> Result<Self> {
        let cam = Self {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            cam_to_world,
            time: None,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Focal length from a horizontal field of view: `0.5·W / tan(0.5·fov)`.
    pub fn focal_from_fov_x(width: usize, fov_x: f64) -> f64 {
        0.5 * width as f64 / (0.5 * fov_x).tan()
    }

    pub fn from_fov_x(width: usize, height: usize, fov_x: f64, cam_to_world: Matrix4<f64>) -> Result<Self> {
        Self::new(width, height, Self::focal_from_fov_x(width, fov_x), cam_to_world)
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: usize, height: usize, fov_x: f64) -> Result<Self> {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        if right.norm() < 1e-12 {
            return Err(Error::InvalidConfig("up vector parallel to viewing direction".into()));
        }
        let right = right.normalize();
        let true_up = back.cross(&right);
        let mut m = Matrix4::identity();
        for i in 0..3 {
            m[(i, 0)] = right[i];
            m[(i, 1)] = true_up[i];
            m[(i, 2)] = back[i];
            m[(i, 3)] = eye[i];
        }
        Self::from_fov_x(width, height, fov_x, m)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = Some(time);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("image resolution must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidConfig("focal lengths must be positive and finite".into()));
        }
        if !self.cam_to_world.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite camera pose".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Mat3::identity()).abs().max();
        if err > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "camera rotation is not orthonormal (deviation {err:.3e})"
            )));
        }
        Ok(())
    }

    pub fn eye(&self) -> Vec3 {
        Vec3::new(
            self.cam_to_world[(0, 3)],
            self.cam_to_world[(1, 3)],
            self.cam_to_world[(2, 3)],
        )
    }

    pub fn rotation(&self) -> Mat3 {
        self.cam_to_world.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Unit viewing axis in world space.
    pub fn forward(&self) -> Vec3 {
        -self.rotation().column(2).into_owned()
    }

    /// Ray through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Ray {
        let dir_cam = Vec3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            -(row as f64 + 0.5 - self.cy) / self.fy,
            -1.0,
        );
        Ray::new(self.eye(), self.rotation() * dir_cam, (row, col))
    }

    pub fn transformed(&self, rigid: &RigidTransform) -> Camera {
        Camera {
            cam_to_world: rigid.matrix() * self.cam_to_world,
            ..self.clone()
        }
    }
}

/// `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation about `axis` by `angle` radians, then translation.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        Self {
            rotation: rot.into_inner(),
            translation,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        for i in 0..3 {
            m[(i, 3)] = self.translation[i];
        }
        m
    }
}

/// A camera together with the image it should reproduce.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub target: Image,
}

impl View {
    pub fn new(name: impl Into<String>, camera: Camera, target: Image) -> Result<Self> {
        if target.width != camera.width || target.height != camera.height {
            return Err(Error::DimensionMismatch(format!(
                "target is {}x{} but camera renders {}x{}",
                target.width, target.height, camera.width, camera.height
            )));
        }
        Ok(Self {
            name: name.into(),
            camera,
            target,
        })
    }
}
