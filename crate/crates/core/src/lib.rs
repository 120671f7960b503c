//! Turn a trained 3D Gaussian Splatting scene into a dense, coloured point cloud.
//!
//! The pipeline loads Gaussians ([`formats`]), activates them into covariance
//! and colour form ([`scene`]), re-renders the scene from its training cameras
//! to give every Gaussian the colour of the pixel it contributes to most
//! ([`renderer`]), and finally samples points from each Gaussian in proportion
//! to its size ([`sampler`]). [`surface`] builds an oriented point cloud of the
//! visible surfaces for external Poisson reconstruction, and [`pipeline`] ties
//! the stages together.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod pipeline;
pub mod renderer;
pub mod sampler;
pub mod scene;
pub mod surface;

pub use error::{Error, Result};
pub use formats::{CameraPose, PointCloud, RawGaussianRecord};
pub use scene::{ContributionState, FilterConfig, GaussianScene};

/// Degree-0 spherical harmonic basis constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Quantize a colour channel in `[0, 1]` to 8 bits, rounding half up.
pub fn quantize_channel(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn quantize_rgb(c: [f64; 3]) -> [u8; 3] {
    [
        quantize_channel(c[0]),
        quantize_channel(c[1]),
        quantize_channel(c[2]),
    ]
}
