//! Software tile rasterizer used to recolour Gaussians.
//!
//! Every training view is rendered with plain front-to-back alpha
//! compositing. Each Gaussian then takes the final colour of the pixel it
//! contributed to most across all views.

mod composite;
mod project;
mod tile;

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::CameraPose;
use crate::scene::{ContributionState, GaussianScene};

pub use composite::{
    composite_tile, Candidate, TileOutput, MAX_ALPHA, MIN_ALPHA, MIN_TRANSMITTANCE,
};
pub use project::{
    project, project_one, sort_by_depth, ProjectedGaussian, ProjectionStats, LOW_PASS, NEAR_PLANE,
};
pub use tile::{tile_scene, Tile, TileStats, BASE_TILE, DEFAULT_TILE_BUDGET};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    /// Resolution multiplier in `(0, 1]`.
    pub render_scale: f64,
    /// When `k > 0`, every k-th camera (in sorted order) is skipped.
    pub skip_cameras: usize,
    /// Maximum `gaussians × pixels` per tile before it is quartered.
    pub tile_budget: u64,
    pub background: [f64; 3],
    /// Dump every rendered view as a PPM into this directory.
    pub save_renders: Option<PathBuf>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            render_scale: 1.0,
            skip_cameras: 0,
            tile_budget: DEFAULT_TILE_BUDGET,
            background: [0.0; 3],
            save_renders: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    /// Binary 8-bit PPM (`P6`).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(&crate::quantize_rgb(*p));
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_ppm()))
            .map_err(|e| Error::io(path, e))
    }
}

/// The result of rendering one view.
#[derive(Clone, Debug)]
pub struct ViewRender {
    pub image: Image,
    /// Per Gaussian index: its best pixel in this view, if it contributed.
    pub best: Vec<(usize, Candidate)>,
    pub projection: ProjectionStats,
    pub tiles: TileStats,
}

/// Render one view: project, bin into tiles, composite the tiles in
/// parallel and merge per-tile maxima in a fixed order.
pub fn render_view(
    scene: &GaussianScene,
    pose: &CameraPose,
    tile_budget: u64,
    background: [f64; 3],
) -> ViewRender {
    let (projected, projection) = project(scene, pose);
    let (tiles, tile_stats) = tile_scene(&projected, pose.width, pose.height, tile_budget);
    let outputs: Vec<TileOutput> = tiles
        .par_iter()
        .map(|t| composite_tile(t, &projected, &scene.base_colours, background, pose.width))
        .collect();

    let mut image = Image {
        width: pose.width,
        height: pose.height,
        pixels: vec![background; pose.width as usize * pose.height as usize],
    };
    // Indexed by position in `projected`.
    let mut best = vec![Candidate::NONE; projected.len()];
    for (tile, out) in tiles.iter().zip(&outputs) {
        let [x0, y0, x1, _] = tile.rect;
        let w = (x1 - x0) as usize;
        for (k, rgb) in out.pixels.iter().enumerate() {
            let (x, y) = (x0 as usize + k % w, y0 as usize + k / w);
            image.pixels[y * pose.width as usize + x] = *rgb;
        }
        for (&pos, cand) in tile.gaussians.iter().zip(&out.best) {
            if cand.contribution > 0.0 && cand.beats(&best[pos as usize]) {
                best[pos as usize] = *cand;
            }
        }
    }
    let mut best: Vec<(usize, Candidate)> = projected
        .iter()
        .zip(best)
        .filter(|(_, c)| c.contribution > 0.0)
        .map(|(p, c)| (p.gaussian_index, c))
        .collect();
    best.sort_unstable_by_key(|(g, _)| *g);

    ViewRender {
        image,
        best,
        projection,
        tiles: tile_stats,
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct RenderStats {
    pub views_rendered: usize,
    pub views_skipped: usize,
    pub projected: usize,
    pub behind: usize,
    pub offscreen: usize,
    pub singular: usize,
    pub tiles: usize,
    pub tile_splits: usize,
    pub max_tile_load: u64,
    pub over_budget_tiles: usize,
}

/// Indices of `poses` in render order: sorted by name then image id, with
/// every `skip`-th one dropped when `skip > 0`.
pub fn render_order(poses: &[CameraPose], skip: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..poses.len()).collect();
    order.sort_by(|&a, &b| {
        poses[a]
            .name
            .cmp(&poses[b].name)
            .then(poses[a].image_id.cmp(&poses[b].image_id))
    });
    if skip > 0 {
        order = order
            .into_iter()
            .enumerate()
            .filter(|(k, _)| (k + 1) % skip != 0)
            .map(|(_, i)| i)
            .collect();
    }
    order
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Render the scene from every selected pose and give each Gaussian the
/// colour of the pixel it contributed to most. The first view to reach a
/// maximum keeps it; later views must strictly exceed it.
pub fn render_all(
    scene: &mut GaussianScene,
    poses: &[CameraPose],
    config: &RenderConfig,
) -> Result<RenderStats> {
    if !(config.render_scale > 0.0 && config.render_scale <= 1.0) {
        return Err(Error::Usage(format!(
            "render scale must be in (0, 1], got {}",
            config.render_scale
        )));
    }
    if config.tile_budget == 0 {
        return Err(Error::Usage("tile budget must be positive".into()));
    }
    let order = render_order(poses, config.skip_cameras);
    if order.is_empty() {
        return Err(Error::domain("no camera poses to render"));
    }
    if let Some(dir) = &config.save_renders {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if !scene.contribution.is_rendered() {
        scene.contribution = ContributionState::new(scene.len(), config.background);
    }

    let mut stats = RenderStats {
        views_skipped: poses.len() - order.len(),
        ..Default::default()
    };
    for (k, &pose_index) in order.iter().enumerate() {
        let pose = poses[pose_index].scaled(config.render_scale);
        let view = render_view(scene, &pose, config.tile_budget, config.background);
        log::debug!(
            "view {}/{} {}: {} Gaussians visible, {} tiles",
            k + 1,
            order.len(),
            pose.name,
            view.projection.visible,
            view.tiles.tiles
        );

        let state = &mut scene.contribution;
        for (g, cand) in &view.best {
            if cand.contribution > state.best_contribution[*g] {
                state.best_contribution[*g] = cand.contribution;
                state.best_colour[*g] = cand.colour;
                state.best_view[*g] = Some(pose_index);
            }
        }
        state.views_rendered += 1;

        if let Some(dir) = &config.save_renders {
            let path = dir.join(format!("{k:05}_{}.ppm", sanitize(&pose.name)));
            view.image.write_ppm(&path)?;
        }

        stats.views_rendered += 1;
        stats.projected += view.projection.visible;
        stats.behind += view.projection.behind;
        stats.offscreen += view.projection.offscreen;
        stats.singular += view.projection.singular;
        stats.tiles += view.tiles.tiles;
        stats.tile_splits += view.tiles.splits;
        stats.max_tile_load = stats.max_tile_load.max(view.tiles.max_load);
        stats.over_budget_tiles += view.tiles.over_budget;
    }
    Ok(stats)
}
