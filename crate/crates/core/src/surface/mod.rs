//! Oriented surface point clouds for external Poisson reconstruction.
//!
//! Surface Gaussians are those whose best rendered contribution reaches the
//! scene mean; heavily occluded and very translucent Gaussians fall below it.
//! Points sampled from them take the normal of their Gaussian's thinnest
//! axis, turned toward the camera that saw the Gaussian best.

use kdtree::distance::squared_euclidean;
use kdtree::KdTree;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{CameraPose, PointCloud};
use crate::sampler::{generate_samples, SamplerConfig, SamplingStats};
use crate::scene::GaussianScene;

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSelection {
    pub surface_mask: Vec<bool>,
    /// Threshold used: the mean best contribution over the scene.
    pub mean_contribution: f64,
}

impl SurfaceSelection {
    pub fn count(&self) -> usize {
        self.surface_mask.iter().filter(|&&m| m).count()
    }
}

pub fn select_surface(scene: &GaussianScene) -> Result<SurfaceSelection> {
    if !scene.contribution.is_rendered() {
        return Err(Error::domain("surface mode requires camera poses and a render pass"));
    }
    let contributions = &scene.contribution.best_contribution;
    if contributions.is_empty() {
        return Err(Error::domain("cannot select surfaces of an empty scene"));
    }
    let mean = contributions.iter().sum::<f64>() / contributions.len() as f64;
    // Summation rounding can push the mean a hair above the maximum when all
    // contributions are equal; the maximum always qualifies.
    let max = contributions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = mean.min(max);
    Ok(SurfaceSelection {
        surface_mask: contributions.iter().map(|&c| c >= threshold).collect(),
        mean_contribution: threshold,
    })
}

/// Index of the smallest log-scale, lowest index on ties.
pub fn thinnest_axis(log_scale: &Vector3<f64>) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if log_scale[i] < log_scale[k] {
            k = i;
        }
    }
    k
}

/// Unit normal for Gaussian `i`, oriented toward the centre of its best view
/// when it has one.
pub fn gaussian_normal(scene: &GaussianScene, i: usize, poses: &[CameraPose]) -> Vector3<f64> {
    let k = thinnest_axis(&scene.log_scales[i]);
    let n: Vector3<f64> = scene.rotations[i].to_rotation_matrix().matrix().column(k).into();
    let n = n.normalize();
    match scene.contribution.best_view[i].and_then(|v| poses.get(v)) {
        Some(pose) if n.dot(&(pose.centre() - scene.positions[i])) < 0.0 => -n,
        _ => n,
    }
}

/// Normals for the Gaussians selected by `selection`; `None` elsewhere.
pub fn surface_normals(
    scene: &GaussianScene,
    selection: &SurfaceSelection,
    poses: &[CameraPose],
) -> Vec<Option<Vector3<f64>>> {
    (0..scene.len())
        .into_par_iter()
        .map(|i| selection.surface_mask[i].then(|| gaussian_normal(scene, i, poses)))
        .collect()
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_neighbour_distances(points: &[[f32; 3]], k: usize) -> Vec<f64> {
    let mut tree = KdTree::with_capacity(3, 32);
    let coords: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    for (i, p) in coords.iter().enumerate() {
        tree.add(*p, i).expect("finite point coordinates");
    }
    coords
        .par_iter()
        .map(|p| {
            let found = tree.nearest(p, k + 1, &squared_euclidean).expect("finite query");
            let mut d: Vec<f64> = found.iter().map(|(d2, _)| d2.sqrt()).collect();
            d.sort_by(f64::total_cmp);
            // The query point itself (or a duplicate of it) sits at distance 0.
            d[1..].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Which points statistical outlier removal keeps, given each point's mean
/// neighbour distance: those at or below `mean + std_ratio·std`, with the
/// sample standard deviation.
pub fn outlier_mask(mean_distances: &[f64], std_ratio: f64) -> Vec<bool> {
    let n = mean_distances.len() as f64;
    let mean = mean_distances.iter().sum::<f64>() / n;
    let var = mean_distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let limit = mean + std_ratio * var.sqrt();
    mean_distances.iter().map(|&d| d <= limit).collect()
}

pub fn remove_statistical_outliers(cloud: &PointCloud, k: usize, std_ratio: f64) -> Result<PointCloud> {
    if k == 0 {
        return Err(Error::Usage("outlier removal needs at least one neighbour".into()));
    }
    if !(std_ratio > 0.0) {
        return Err(Error::Usage(format!("outlier std ratio must be positive, got {std_ratio}")));
    }
    if cloud.len() <= k {
        return Err(Error::domain(format!(
            "outlier removal with k = {k} needs more than {k} points, got {}",
            cloud.len()
        )));
    }
    let keep = outlier_mask(&mean_neighbour_distances(&cloud.points, k), std_ratio);
    let mut out = cloud.clone();
    out.retain_mask(&keep);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceConfig {
    pub points: u64,
    pub sor_k: usize,
    pub sor_std: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            points: 5_000_000,
            sor_k: 20,
            sor_std: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SurfaceStats {
    pub surface_gaussians: usize,
    pub mean_contribution: f64,
    pub sampling: SamplingStats,
    pub outliers_removed: usize,
    pub points_written: usize,
}

/// Sample an oriented point cloud from the surface Gaussians and clean it.
pub fn export_surface_cloud(
    scene: &GaussianScene,
    poses: &[CameraPose],
    sampler: &SamplerConfig,
    config: &SurfaceConfig,
) -> Result<(PointCloud, SurfaceStats)> {
    let selection = select_surface(scene)?;
    let count = selection.count();
    if count == 0 {
        return Err(Error::domain("no surface Gaussians selected"));
    }
    let surface = scene.subset(&selection.surface_mask);
    let all = SurfaceSelection {
        surface_mask: vec![true; surface.len()],
        mean_contribution: selection.mean_contribution,
    };
    let normals = surface_normals(&surface, &all, poses);
    let samples = generate_samples(&surface, config.points, sampler)?;
    let mut cloud = samples.cloud;
    cloud.normals = Some(
        samples
            .source
            .iter()
            .map(|&g| {
                let n = normals[g as usize].expect("every surface Gaussian has a normal");
                [n[0] as f32, n[1] as f32, n[2] as f32]
            })
            .collect(),
    );
    let before = cloud.len();
    let cleaned = remove_statistical_outliers(&cloud, config.sor_k, config.sor_std)?;
    let stats = SurfaceStats {
        surface_gaussians: count,
        mean_contribution: selection.mean_contribution,
        sampling: samples.stats,
        outliers_removed: before - cleaned.len(),
        points_written: cleaned.len(),
    };
    Ok((cleaned, stats))
}
