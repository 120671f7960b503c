//! Input and output file formats.

mod camera;
pub mod colmap;
pub mod nerf;
pub mod ply;
pub mod splat;

pub use camera::CameraPose;
pub use colmap::load_cameras_colmap;
pub use nerf::load_cameras_nerf_json;
pub use ply::{
    load_gaussians_ply, read_pointcloud_ply, write_gaussians_ply, write_pointcloud_ply,
    PlyEncoding,
};
pub use splat::load_gaussians_splat;

use crate::error::{Error, Result};

/// One Gaussian as stored on disk, before activation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGaussianRecord {
    pub position: [f64; 3],
    /// Natural log of the per-axis standard deviation.
    pub log_scale: [f64; 3],
    /// Quaternion in `w, x, y, z` order, not necessarily normalized.
    pub rotation: [f64; 4],
    pub logit_opacity: f64,
    pub sh_dc: [f64; 3],
    /// Higher-order SH coefficients. Carried through, never evaluated.
    pub sh_rest: Vec<f64>,
}

impl RawGaussianRecord {
    pub fn validate(&self, index: usize) -> Result<()> {
        if !self.log_scale.iter().all(|s| s.is_finite()) {
            return Err(Error::format(format!("record {index}: non-finite scale")));
        }
        let norm2: f64 = self.rotation.iter().map(|q| q * q).sum();
        if !(norm2 > 0.0) || !norm2.is_finite() {
            return Err(Error::format(format!(
                "record {index}: rotation quaternion has zero norm"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub colours: Vec<[u8; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.colours.len() != self.points.len() {
            return Err(Error::domain(format!(
                "point cloud has {} points but {} colours",
                self.points.len(),
                self.colours.len()
            )));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::domain(format!(
                    "point cloud has {} points but {} normals",
                    self.points.len(),
                    normals.len()
                )));
            }
            if let Some(i) = normals.iter().position(|n| {
                let len = (n.iter().map(|&c| c as f64 * c as f64).sum::<f64>()).sqrt();
                (len - 1.0).abs() > 1e-4
            }) {
                return Err(Error::domain(format!("normal {i} is not unit length")));
            }
        }
        Ok(())
    }

    /// Keep the points whose `keep` flag is set, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.points.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.colours.retain(|_| *it.next().unwrap());
        if let Some(normals) = self.normals.as_mut() {
            let mut it = keep.iter();
            normals.retain(|_| *it.next().unwrap());
        }
    }
}
