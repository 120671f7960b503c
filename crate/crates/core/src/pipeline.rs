//! End-to-end conversion: load → activate → filter → render colours → cull →
//! sample → (surface export) → write.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::formats::{self, CameraPose, RawGaussianRecord};
use crate::renderer::{render_all, RenderConfig, RenderStats, DEFAULT_TILE_BUDGET};
use crate::sampler::{generate_pointcloud, AllocationMode, SamplerConfig, SamplingStats};
use crate::scene::{cull_unrendered, filter_scene, FilterConfig, GaussianScene};
use crate::surface::{export_surface_cloud, SurfaceConfig, SurfaceStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    Ply,
    Splat,
    ColmapDir,
    NerfJson,
}

const SUPPORTED: &str = "Gaussians: .ply, .splat; cameras: COLMAP directory (cameras/images .bin or .txt), NeRF transforms .json";

/// Classify an input path by extension, confirming `.ply` by its magic bytes.
/// Directories are COLMAP models when they hold camera files, or NeRF scenes
/// when they hold a `transforms.json`.
pub fn detect_format(path: &Path) -> Result<InputFormat> {
    if path.is_dir() {
        if formats::colmap::find_colmap_dir(path).is_some() {
            return Ok(InputFormat::ColmapDir);
        }
        if path.join("transforms.json").is_file() {
            return Ok(InputFormat::NerfJson);
        }
        return Err(Error::Usage(format!(
            "{}: directory holds no COLMAP or NeRF cameras (supported: {SUPPORTED})",
            path.display()
        )));
    }
    if !path.exists() {
        return Err(Error::Usage(format!("{}: no such file or directory", path.display())));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("splat") => Ok(InputFormat::Splat),
        Some("json") => Ok(InputFormat::NerfJson),
        Some("ply") => {
            if has_ply_magic(path)? {
                Ok(InputFormat::Ply)
            } else {
                Err(Error::format(format!("{}: missing PLY magic", path.display())))
            }
        }
        _ if has_ply_magic(path)? => Ok(InputFormat::Ply),
        _ => Err(Error::Usage(format!(
            "{}: unrecognized input (supported: {SUPPORTED})",
            path.display()
        ))),
    }
}

fn has_ply_magic(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 5];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(head[..n].starts_with(b"ply\n") || head[..n].starts_with(b"ply\r\n"))
}

pub fn load_gaussians(path: &Path) -> Result<(InputFormat, Vec<RawGaussianRecord>)> {
    let format = detect_format(path)?;
    let records = match format {
        InputFormat::Ply => formats::load_gaussians_ply(path)?,
        InputFormat::Splat => formats::load_gaussians_splat(path)?,
        _ => {
            return Err(Error::Usage(format!(
                "{}: expected a Gaussian scene (.ply or .splat)",
                path.display()
            )))
        }
    };
    Ok((format, records))
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraPose>> {
    match detect_format(path)? {
        InputFormat::ColmapDir => formats::load_cameras_colmap(path),
        InputFormat::NerfJson if path.is_dir() => {
            formats::load_cameras_nerf_json(path.join("transforms.json"))
        }
        InputFormat::NerfJson => formats::load_cameras_nerf_json(path),
        _ => Err(Error::Usage(format!(
            "{}: expected cameras (COLMAP directory or NeRF .json)",
            path.display()
        ))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub input_gaussians: PathBuf,
    pub input_cameras: Option<PathBuf>,
    pub output: PathBuf,
    pub num_points: u64,
    pub sigma: f64,
    /// Exact largest-remainder allocation instead of 5-point bins.
    pub exact: bool,
    pub max_rounds: u32,
    pub seed: u64,
    pub render_scale: f64,
    pub skip_cameras: usize,
    pub tile_budget: u64,
    pub background: [f64; 3],
    pub save_renders: Option<PathBuf>,
    pub filters: FilterConfig,
    pub mesh_prep: bool,
    pub surface_points: u64,
    pub sor_k: usize,
    pub sor_std: f64,
    /// Worker threads; 0 picks the number of CPUs.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let surface = SurfaceConfig::default();
        let sampler = SamplerConfig::default();
        Self {
            input_gaussians: PathBuf::new(),
            input_cameras: None,
            output: PathBuf::from("pointcloud.ply"),
            num_points: 10_000_000,
            sigma: sampler.sigma,
            exact: false,
            max_rounds: sampler.max_rounds,
            seed: sampler.seed,
            render_scale: 1.0,
            skip_cameras: 0,
            tile_budget: DEFAULT_TILE_BUDGET,
            background: [0.0; 3],
            save_renders: None,
            filters: FilterConfig::default(),
            mesh_prep: false,
            surface_points: surface.points,
            sor_k: surface.sor_k,
            sor_std: surface.sor_std,
            threads: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(Error::Usage(msg));
        if self.num_points == 0 {
            return usage("number of points must be at least 1".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return usage(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.max_rounds == 0 {
            return usage("at least one sampling round is required".into());
        }
        if !(self.render_scale > 0.0 && self.render_scale <= 1.0) {
            return usage(format!("render scale must be in (0, 1], got {}", self.render_scale));
        }
        if self.skip_cameras == 1 {
            return usage("skipping every camera leaves nothing to render; use 0 to keep all".into());
        }
        if self.tile_budget == 0 {
            return usage("tile budget must be positive".into());
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return usage(format!("background channels must lie in [0, 1], got {:?}", self.background));
        }
        if let Some(b) = self.filters.bbox {
            if (0..3).any(|k| !(b.min[k] <= b.max[k])) {
                return usage(format!("bounding box min {:?} exceeds max {:?}", b.min, b.max));
            }
        }
        if self.mesh_prep {
            if self.surface_points == 0 {
                return usage("surface point count must be at least 1".into());
            }
            if self.sor_k == 0 || !(self.sor_std > 0.0) {
                return usage(format!(
                    "outlier removal needs k >= 1 and a positive std ratio, got {} and {}",
                    self.sor_k, self.sor_std
                ));
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            sigma: self.sigma,
            mode: if self.exact { AllocationMode::Exact } else { AllocationMode::Binned },
            max_rounds: self.max_rounds,
            seed: self.seed,
        }
    }

    pub fn render(&self) -> RenderConfig {
        RenderConfig {
            render_scale: self.render_scale,
            skip_cameras: self.skip_cameras,
            tile_budget: self.tile_budget,
            background: self.background,
            save_renders: self.save_renders.clone(),
        }
    }

    pub fn surface(&self) -> SurfaceConfig {
        SurfaceConfig {
            points: self.surface_points,
            sor_k: self.sor_k,
            sor_std: self.sor_std,
        }
    }

    /// `<dir>/<stem>_surface.ply` next to the main output.
    pub fn surface_output(&self) -> PathBuf {
        let stem = self
            .output
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pointcloud".into());
        self.output.with_file_name(format!("{stem}_surface.ply"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Activate,
    Filter,
    Render,
    Cull,
    Sample,
    Surface,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Activate => "activate",
            Stage::Filter => "filter",
            Stage::Render => "render",
            Stage::Cull => "cull",
            Stage::Sample => "sample",
            Stage::Surface => "surface",
            Stage::Write => "write",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn is_usage(&self) -> bool {
        matches!(self.source, Error::Usage(_))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StageTime {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunReport {
    pub input_format: Option<InputFormat>,
    pub threads: usize,
    pub gaussians_loaded: usize,
    /// Dropped during activation for a covariance that would not factor.
    pub gaussians_degenerate: usize,
    pub gaussians_filtered: usize,
    pub gaussians_culled: usize,
    pub gaussians_sampled: usize,
    pub cameras: usize,
    /// False when no cameras were given and base colours were used.
    pub colours_rendered: bool,
    pub render: Option<RenderStats>,
    pub points_requested: u64,
    pub points_emitted: u64,
    pub points_rejected: u64,
    pub sampling: SamplingStats,
    pub surface: Option<SurfaceStats>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<StageTime>,
}

/// Run the whole conversion on a dedicated thread pool. Output files written
/// before a failure are removed.
pub fn run(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config
        .validate()
        .map_err(|source| PipelineError { stage: Stage::Config, source })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| PipelineError {
            stage: Stage::Config,
            source: Error::domain(format!("cannot start worker threads: {e}")),
        })?;
    let mut report = RunReport {
        threads: pool.current_num_threads(),
        ..Default::default()
    };
    let result = pool.install(|| run_stages(config, &mut report));
    match result {
        Ok(()) => Ok(report),
        Err(e) => {
            for path in &report.outputs {
                if let Err(rm) = std::fs::remove_file(path) {
                    if rm.kind() != std::io::ErrorKind::NotFound {
                        log::warn!("could not remove partial output {}: {rm}", path.display());
                    }
                }
            }
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, report: &mut RunReport) -> Result<(), PipelineError> {
    let mut clock = Instant::now();
    let mut timed = |report: &mut RunReport, stage: Stage| {
        let now = Instant::now();
        report.timings.push(StageTime {
            stage,
            seconds: (now - clock).as_secs_f64(),
        });
        clock = now;
    };
    let tag = |stage: Stage| move |source: Error| PipelineError { stage, source };

    let (format, records) = load_gaussians(&config.input_gaussians).map_err(tag(Stage::Load))?;
    report.input_format = Some(format);
    report.gaussians_loaded = records.len();
    log::info!("loaded {} Gaussians from {}", records.len(), config.input_gaussians.display());
    let poses = match &config.input_cameras {
        Some(path) => {
            let poses = load_cameras(path).map_err(tag(Stage::Load))?;
            log::info!("loaded {} camera poses from {}", poses.len(), path.display());
            poses
        }
        None => Vec::new(),
    };
    report.cameras = poses.len();
    timed(report, Stage::Load);

    let scene = GaussianScene::activate(&records).map_err(tag(Stage::Activate))?;
    drop(records);
    report.gaussians_degenerate = report.gaussians_loaded - scene.len();
    timed(report, Stage::Activate);

    let before = scene.len();
    let mut scene = filter_scene(scene, &config.filters).map_err(tag(Stage::Filter))?;
    report.gaussians_filtered = before - scene.len();
    if report.gaussians_filtered > 0 {
        log::info!("filters removed {} Gaussians", report.gaussians_filtered);
    }
    timed(report, Stage::Filter);

    if poses.is_empty() {
        log::warn!(
            "no camera poses available: point colours will be based on the original Gaussians, not on rendered views"
        );
    } else {
        let stats = render_all(&mut scene, &poses, &config.render()).map_err(tag(Stage::Render))?;
        log::info!(
            "rendered {} views ({} tiles, {} subdivisions)",
            stats.views_rendered,
            stats.tiles,
            stats.tile_splits
        );
        report.render = Some(stats);
        report.colours_rendered = true;
        timed(report, Stage::Render);

        let before = scene.len();
        scene = cull_unrendered(scene).map_err(tag(Stage::Cull))?;
        report.gaussians_culled = before - scene.len();
        log::info!("culled {} Gaussians never seen by any camera", report.gaussians_culled);
        timed(report, Stage::Cull);
    }

    let (cloud, sampling) =
        generate_pointcloud(&scene, config.num_points, &config.sampler()).map_err(tag(Stage::Sample))?;
    report.gaussians_sampled = sampling.gaussians_sampled;
    report.points_requested = sampling.requested;
    report.points_emitted = sampling.emitted;
    report.points_rejected = sampling.rejected;
    if sampling.shortfall > 0 {
        log::info!("{} allocated points were not drawn within the resample limit", sampling.shortfall);
    }
    report.sampling = sampling;
    timed(report, Stage::Sample);

    report.outputs.push(config.output.clone());
    formats::write_pointcloud_ply(&cloud, &config.output).map_err(tag(Stage::Write))?;
    log::info!("wrote {} points to {}", cloud.len(), config.output.display());
    drop(cloud);
    timed(report, Stage::Write);

    if config.mesh_prep {
        let (surface, stats) = export_surface_cloud(&scene, &poses, &config.sampler(), &config.surface())
            .map_err(tag(Stage::Surface))?;
        let path = config.surface_output();
        report.outputs.push(path.clone());
        formats::write_pointcloud_ply(&surface, &path).map_err(tag(Stage::Write))?;
        log::info!(
            "wrote {} oriented surface points from {} Gaussians to {}",
            surface.len(),
            stats.surface_gaussians,
            path.display()
        );
        report.surface = Some(stats);
        timed(report, Stage::Surface);
    }
    Ok(())
}
