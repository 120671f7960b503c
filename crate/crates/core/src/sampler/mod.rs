//! Point sampling from the coloured Gaussians.
//!
//! Each Gaussian receives a share of the point budget proportional to its
//! size, draws that many points from its multivariate normal, and throws away
//! draws whose Mahalanobis distance from the mean exceeds the σ threshold,
//! redrawing a bounded number of times.

mod alloc;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::PointCloud;
use crate::scene::GaussianScene;

pub use alloc::{allocate, AllocationMode, AllocationPlan, BIN_THRESHOLD, BIN_WIDTH};

/// Upper bound on Gaussians per batch, so huge equal-count groups still
/// spread across workers. Batching depends only on the plan, never on the
/// thread count.
pub const MAX_BATCH_GAUSSIANS: usize = 4096;

/// Size measure used to split the point budget: `sqrt(Σ (e^{sᵢ})²)`.
pub fn gaussian_volume(log_scale: &Vector3<f64>) -> f64 {
    log_scale.iter().map(|s| (2.0 * s).exp()).sum::<f64>().sqrt()
}

/// Mahalanobis distance of `point` from a Gaussian given by its lower
/// Cholesky factor, via forward substitution.
#[inline]
pub fn mahalanobis_with_factor(point: &Vector3<f64>, mean: &Vector3<f64>, l: &Matrix3<f64>) -> f64 {
    let d = point - mean;
    let y0 = d[0] / l[(0, 0)];
    let y1 = (d[1] - l[(1, 0)] * y0) / l[(1, 1)];
    let y2 = (d[2] - l[(2, 0)] * y0 - l[(2, 1)] * y1) / l[(2, 2)];
    (y0 * y0 + y1 * y1 + y2 * y2).sqrt()
}

pub fn mahalanobis(point: &Vector3<f64>, mean: &Vector3<f64>, covariance: &Matrix3<f64>) -> Result<f64> {
    let chol = Cholesky::new(*covariance)
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))?;
    Ok(mahalanobis_with_factor(point, mean, &chol.l()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Largest accepted Mahalanobis distance.
    pub sigma: f64,
    pub mode: AllocationMode,
    /// Draw rounds per Gaussian, the first draw included.
    pub max_rounds: u32,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            mode: AllocationMode::Binned,
            max_rounds: 5,
            seed: 0,
        }
    }
}

/// Gaussians that all need the same number of points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    pub gaussian_indices: Vec<usize>,
    pub count_per_gaussian: u64,
    pub rng_seed: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the batch whose smallest Gaussian index is `first` and whose
/// per-Gaussian count is `count`.
pub fn batch_seed(global: u64, first: usize, count: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ first as u64) ^ count)
}

/// Group Gaussians by allocated count, in ascending count then index order.
pub fn make_batches(plan: &AllocationPlan, seed: u64) -> Vec<SampleBatch> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &c) in plan.per_gaussian_count.iter().enumerate() {
        if c > 0 {
            groups.entry(c).or_default().push(i);
        }
    }
    groups
        .into_iter()
        .flat_map(|(count, indices)| {
            indices
                .chunks(MAX_BATCH_GAUSSIANS)
                .map(|chunk| SampleBatch {
                    rng_seed: batch_seed(seed, chunk[0], count),
                    gaussian_indices: chunk.to_vec(),
                    count_per_gaussian: count,
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchSamples {
    pub points: Vec<[f32; 3]>,
    pub colours: Vec<[u8; 3]>,
    /// Points emitted by each Gaussian of the batch, in batch order.
    pub emitted: Vec<u64>,
    pub draws: u64,
    pub rejected: u64,
}

/// Draw `x = μ + L z` for each Gaussian of the batch. A draw is kept only if
/// the stored (f32) point lies within `sigma` Mahalanobis distance of the
/// mean; rejected slots are redrawn for up to `max_rounds` rounds in total
/// and any remaining shortfall is accepted.
pub fn sample_batch(batch: &SampleBatch, scene: &GaussianScene, sigma: f64, max_rounds: u32) -> BatchSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(batch.rng_seed);
    let per = batch.count_per_gaussian as usize;
    let mut out = BatchSamples {
        points: Vec::with_capacity(per * batch.gaussian_indices.len()),
        colours: Vec::with_capacity(per * batch.gaussian_indices.len()),
        emitted: Vec::with_capacity(batch.gaussian_indices.len()),
        ..Default::default()
    };
    for &g in &batch.gaussian_indices {
        let mean = scene.positions[g];
        let l = scene.cholesky[g];
        let colour = crate::quantize_rgb(scene.point_colour(g));
        let mut missing = batch.count_per_gaussian;
        for _ in 0..max_rounds.max(1) {
            let want = missing;
            for _ in 0..want {
                let z = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let x = mean + l * z;
                let stored = [x.x as f32, x.y as f32, x.z as f32];
                let back = Vector3::new(stored[0] as f64, stored[1] as f64, stored[2] as f64);
                if mahalanobis_with_factor(&back, &mean, &l) <= sigma {
                    out.points.push(stored);
                    missing -= 1;
                } else {
                    out.rejected += 1;
                }
            }
            out.draws += want;
            if missing == 0 {
                break;
            }
        }
        let emitted = batch.count_per_gaussian - missing;
        out.colours
            .extend(std::iter::repeat_n(colour, emitted as usize));
        out.emitted.push(emitted);
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SamplingStats {
    pub requested: u64,
    pub allocated: u64,
    pub emitted: u64,
    pub rejected: u64,
    pub draws: u64,
    /// Allocated points never produced because every redraw round failed.
    pub shortfall: u64,
    pub batches: usize,
    pub gaussians_sampled: usize,
}

/// A sampled cloud plus, for every point, the index of its Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Samples {
    pub cloud: PointCloud,
    pub source: Vec<u32>,
    pub stats: SamplingStats,
}

/// Allocate `total` points across the scene, sample every batch in
/// parallel, and concatenate the results in Gaussian order.
pub fn generate_samples(scene: &GaussianScene, total: u64, config: &SamplerConfig) -> Result<Samples> {
    if !(config.sigma > 0.0) {
        return Err(Error::Usage(format!("sigma must be positive, got {}", config.sigma)));
    }
    if scene.is_empty() {
        return Err(Error::domain("cannot sample an empty scene"));
    }
    let volumes: Vec<f64> = scene.log_scales.iter().map(gaussian_volume).collect();
    let plan = allocate(&volumes, total, config.mode)?;
    let batches = make_batches(&plan, config.seed);
    let results: Vec<BatchSamples> = batches
        .par_iter()
        .map(|b| sample_batch(b, scene, config.sigma, config.max_rounds))
        .collect();

    // (batch, first point, point count) per Gaussian.
    let mut spans: Vec<Option<(usize, usize, usize)>> = vec![None; scene.len()];
    for (b, (batch, res)) in batches.iter().zip(&results).enumerate() {
        let mut start = 0usize;
        for (&g, &n) in batch.gaussian_indices.iter().zip(&res.emitted) {
            spans[g] = Some((b, start, n as usize));
            start += n as usize;
        }
    }

    let emitted: u64 = results.iter().map(|r| r.points.len() as u64).sum();
    let mut samples = Samples {
        cloud: PointCloud {
            points: Vec::with_capacity(emitted as usize),
            colours: Vec::with_capacity(emitted as usize),
            normals: None,
        },
        source: Vec::with_capacity(emitted as usize),
        stats: SamplingStats {
            requested: total,
            allocated: plan.allocated(),
            emitted,
            rejected: results.iter().map(|r| r.rejected).sum(),
            draws: results.iter().map(|r| r.draws).sum(),
            shortfall: plan.allocated() - emitted,
            batches: batches.len(),
            gaussians_sampled: plan.per_gaussian_count.iter().filter(|&&c| c > 0).count(),
        },
    };
    for (g, span) in spans.iter().enumerate() {
        if let Some((b, start, n)) = *span {
            let res = &results[b];
            samples.cloud.points.extend_from_slice(&res.points[start..start + n]);
            samples.cloud.colours.extend_from_slice(&res.colours[start..start + n]);
            samples.source.extend(std::iter::repeat_n(g as u32, n));
        }
    }
    Ok(samples)
}

pub fn generate_pointcloud(scene: &GaussianScene, total: u64, config: &SamplerConfig) -> Result<(PointCloud, SamplingStats)> {
    let s = generate_samples(scene, total, config)?;
    Ok((s.cloud, s.stats))
}
