use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera transform in the COLMAP convention:
/// the camera looks down `+z`, `x` points right and `y` points down.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub image_id: u32,
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: Matrix4<f64>,
}

impl CameraPose {
    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera centre in world coordinates.
    pub fn centre(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::format(format!("camera {:?}: {what}", self.name)));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("non-positive focal length ({}, {})", self.fx, self.fy));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64)
            || !(self.cy > 0.0 && self.cy < self.height as f64)
        {
            return bad(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= 1e-5) {
            return bad(format!("rotation is not orthonormal (error {err:e})"));
        }
        let last_row = self.world_to_camera.fixed_view::<1, 4>(3, 0);
        if last_row[(0, 0)] != 0.0
            || last_row[(0, 1)] != 0.0
            || last_row[(0, 2)] != 0.0
            || last_row[(0, 3)] != 1.0
            || !self.translation().iter().all(|t| t.is_finite())
        {
            return bad("world_to_camera is not a rigid transform".into());
        }
        Ok(())
    }

    /// The same view rendered at `scale` times the resolution.
    pub fn scaled(&self, scale: f64) -> CameraPose {
        if scale == 1.0 {
            return self.clone();
        }
        CameraPose {
            width: ((self.width as f64 * scale).round() as u32).max(1),
            height: ((self.height as f64 * scale).round() as u32).max(1),
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: self.cx * scale,
            cy: self.cy * scale,
            ..self.clone()
        }
    }
}

pub(crate) fn rigid_from_quaternion(q: [f64; 4], t: [f64; 3]) -> Matrix4<f64> {
    let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        q[0], q[1], q[2], q[3],
    ));
    let r = quat.to_rotation_matrix();
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&Vector3::new(t[0], t[1], t[2]));
    m
}
