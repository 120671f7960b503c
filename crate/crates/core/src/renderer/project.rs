use nalgebra::{Matrix2, Matrix2x3, Vector3};
use rayon::prelude::*;

use crate::formats::CameraPose;
use crate::scene::GaussianScene;

pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space low-pass added to every projected covariance, in pixels².
pub const LOW_PASS: f64 = 0.3;
const EXTENT_SIGMAS: f64 = 3.0;

/// A Gaussian splatted onto one camera's image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub gaussian_index: usize,
    /// Pixel coordinates of the projected mean.
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance.
    pub conic: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
    pub opacity: f64,
    /// Axis-aligned 3σ extent `[xmin, ymin, xmax, ymax]` in pixels.
    pub bbox: [f64; 4],
}

impl ProjectedGaussian {
    /// True when pixel `(x, y)`'s centre lies inside the 3σ box.
    #[inline]
    pub fn covers(&self, x: u32, y: u32) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        px >= self.bbox[0] && px <= self.bbox[2] && py >= self.bbox[1] && py <= self.bbox[3]
    }

    /// True when some pixel centre of `[x0, x1) × [y0, y1)` may be covered.
    #[inline]
    pub fn overlaps(&self, rect: [u32; 4]) -> bool {
        let [x0, y0, x1, y1] = rect;
        self.bbox[2] >= x0 as f64 + 0.5
            && self.bbox[0] <= x1 as f64 - 0.5
            && self.bbox[3] >= y0 as f64 + 0.5
            && self.bbox[1] <= y1 as f64 - 0.5
    }

    /// Opacity-weighted falloff at pixel `(x, y)` before clamping.
    #[inline]
    pub fn raw_alpha(&self, x: u32, y: u32) -> f64 {
        let dx = x as f64 + 0.5 - self.mean2d[0];
        let dy = y as f64 + 0.5 - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        self.opacity * power.exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub visible: usize,
    pub behind: usize,
    pub offscreen: usize,
    pub singular: usize,
}

enum Outcome {
    Visible(ProjectedGaussian),
    Behind,
    Offscreen,
    Singular,
}

/// Pinhole projection of the mean plus EWA projection of the covariance:
/// `cov2d = J W Σ Wᵀ Jᵀ + 0.3 I` with `J` the perspective Jacobian at the
/// camera-space mean and `W` the world-to-camera rotation.
pub fn project_one(scene: &GaussianScene, i: usize, pose: &CameraPose) -> Option<ProjectedGaussian> {
    match project_inner(scene, i, pose) {
        Outcome::Visible(p) => Some(p),
        _ => None,
    }
}

fn project_inner(scene: &GaussianScene, i: usize, pose: &CameraPose) -> Outcome {
    let w = pose.rotation();
    let cam: Vector3<f64> = w * scene.positions[i] + pose.translation();
    let z = cam.z;
    if !(z > NEAR_PLANE) {
        return Outcome::Behind;
    }
    let (fx, fy) = (pose.fx, pose.fy);
    let mean2d = [fx * cam.x / z + pose.cx, fy * cam.y / z + pose.cy];
    let jac = Matrix2x3::new(
        fx / z,
        0.0,
        -fx * cam.x / (z * z),
        0.0,
        fy / z,
        -fy * cam.y / (z * z),
    );
    let t = jac * w;
    let mut cov2d = t * scene.covariances[i] * t.transpose();
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let b = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = b;
    cov2d[(1, 0)] = b;
    let (a, c) = (cov2d[(0, 0)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return Outcome::Singular;
    }
    let conic = [c / det, -b / det, a / det];

    let rx = EXTENT_SIGMAS * a.sqrt();
    let ry = EXTENT_SIGMAS * c.sqrt();
    let bbox = [mean2d[0] - rx, mean2d[1] - ry, mean2d[0] + rx, mean2d[1] + ry];
    let p = ProjectedGaussian {
        gaussian_index: i,
        mean2d,
        cov2d,
        conic,
        depth: z,
        opacity: scene.opacities[i],
        bbox,
    };
    if !p.overlaps([0, 0, pose.width, pose.height]) {
        return Outcome::Offscreen;
    }
    Outcome::Visible(p)
}

/// Project every Gaussian, returning the visible ones sorted front to back
/// (ties broken by Gaussian index).
pub fn project(scene: &GaussianScene, pose: &CameraPose) -> (Vec<ProjectedGaussian>, ProjectionStats) {
    let outcomes: Vec<Outcome> = (0..scene.len())
        .into_par_iter()
        .map(|i| project_inner(scene, i, pose))
        .collect();
    let mut stats = ProjectionStats::default();
    let mut visible = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Visible(p) => visible.push(p),
            Outcome::Behind => stats.behind += 1,
            Outcome::Offscreen => stats.offscreen += 1,
            Outcome::Singular => stats.singular += 1,
        }
    }
    stats.visible = visible.len();
    sort_by_depth(&mut visible);
    (visible, stats)
}

pub fn sort_by_depth(projected: &mut [ProjectedGaussian]) {
    projected.par_sort_unstable_by(|a, b| {
        a.depth
            .total_cmp(&b.depth)
            .then(a.gaussian_index.cmp(&b.gaussian_index))
    });
}
