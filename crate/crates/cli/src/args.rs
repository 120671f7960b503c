use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use gs2pc::pipeline::PipelineConfig;
use gs2pc::scene::{BoundingBox, FilterConfig};

#[derive(Parser, Debug)]
#[command(
    name = "gs2pc",
    version,
    about = "Convert a trained 3D Gaussian Splatting scene into a dense, coloured point cloud",
    args_override_self = true
)]
pub struct Cli {
    /// Gaussian scene (.ply or .splat).
    pub input: Option<PathBuf>,

    /// Same as the positional input; lets a config file name the scene.
    #[arg(long = "input", hide = true)]
    pub input_flag: Option<PathBuf>,

    /// Training cameras: a COLMAP model directory or a NeRF transforms .json.
    /// Without them, points keep the Gaussians' own base colours.
    #[arg(long)]
    pub cameras: Option<PathBuf>,

    #[arg(short, long, default_value = "pointcloud.ply")]
    pub output: PathBuf,

    #[arg(long, default_value_t = 10_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub num_points: u64,

    /// Largest Mahalanobis distance a sampled point may have from its Gaussian.
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,

    /// Allocate points exactly instead of in 5-point bins.
    #[arg(long)]
    pub exact: bool,

    /// Draw rounds per Gaussian before giving up on rejected points.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_resample_rounds: u32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Render at this fraction of each camera's resolution, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub render_scale: f64,

    /// Skip every N-th camera (0 renders all).
    #[arg(long, default_value_t = 0)]
    pub skip_cameras: usize,

    /// Largest Gaussians × pixels per tile before it is split in four.
    #[arg(long, default_value_t = gs2pc::renderer::DEFAULT_TILE_BUDGET)]
    pub tile_budget: u64,

    /// Background colour as R,G,B in [0, 1].
    #[arg(long, value_name = "R,G,B", value_parser = parse_rgb, default_value = "0,0,0")]
    pub background: [f64; 3],

    /// Write each rendered view as a PPM image into this directory.
    #[arg(long, value_name = "DIR")]
    pub save_renders: Option<PathBuf>,

    /// Keep Gaussians whose centre lies inside this box.
    #[arg(long, value_name = "MINX,MINY,MINZ,MAXX,MAXY,MAXZ", value_parser = parse_bbox, allow_hyphen_values = true)]
    pub bbox: Option<BoundingBox>,

    /// Drop Gaussians whose largest standard deviation exceeds this.
    #[arg(long)]
    pub max_scale: Option<f64>,

    /// Drop Gaussians less opaque than this.
    #[arg(long)]
    pub min_opacity: Option<f64>,

    /// Also write `<output stem>_surface.ply`: oriented points from surface
    /// Gaussians, ready for Poisson reconstruction. Needs cameras.
    #[arg(long)]
    pub mesh_prep: bool,

    #[arg(long, default_value_t = 5_000_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub surface_points: u64,

    /// Neighbours per point for surface outlier removal.
    #[arg(long, default_value_t = 20)]
    pub sor_k: usize,

    /// Standard deviations above the mean neighbour distance that count as outliers.
    #[arg(long, default_value_t = 2.0)]
    pub sor_std: f64,

    /// Worker threads (0 = one per CPU).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,

    /// File of `key = value` lines, one per long flag. Command-line flags win.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Print run statistics as JSON on standard output.
    #[arg(long)]
    pub stats_json: bool,

    #[arg(short, long)]
    pub verbose: bool,
}

pub enum ArgsError {
    Clap(clap::Error),
    Config(String),
}

/// Parse the command line, splicing in `--config` file entries ahead of the
/// real arguments so that explicit flags override them.
pub fn parse(args: Vec<OsString>) -> Result<Cli, ArgsError> {
    let first = Cli::try_parse_from(&args).map_err(ArgsError::Clap)?;
    let Some(path) = first.config else {
        return Ok(first);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ArgsError::Config(format!("{}: {e}", path.display())))?;
    let from_file = config_file_args(&text, &path).map_err(ArgsError::Config)?;
    let mut merged = Vec::with_capacity(args.len() + from_file.len());
    merged.extend(args.first().cloned());
    merged.extend(from_file);
    merged.extend(args.into_iter().skip(1));
    Cli::try_parse_from(merged).map_err(ArgsError::Clap)
}

const SWITCHES: [&str; 4] = ["exact", "mesh-prep", "stats-json", "verbose"];

/// Translate `key = value` lines into long flags. `#` starts a comment;
/// underscores in keys are accepted for hyphens.
pub fn config_file_args(text: &str, path: &Path) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), n + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}: expected key = value, got {line:?}", at()))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!("{}: config files cannot include other config files", at()));
        }
        if SWITCHES.contains(&key.as_str()) {
            match value.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => out.push(format!("--{key}").into()),
                "false" | "no" | "off" | "0" => {}
                _ => return Err(format!("{}: {key} expects true or false, got {value:?}", at())),
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got {}", parts.len()));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("not a number: {p:?}"))?;
        if !o.is_finite() {
            return Err(format!("not a finite number: {p:?}"));
        }
    }
    Ok(out)
}

fn parse_rgb(s: &str) -> Result<[f64; 3], String> {
    let rgb = parse_floats::<3>(s)?;
    if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err("channels must lie in [0, 1]".into());
    }
    Ok(rgb)
}

fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let v = parse_floats::<6>(s)?;
    let b = BoundingBox {
        min: [v[0], v[1], v[2]],
        max: [v[3], v[4], v[5]],
    };
    if (0..3).any(|k| b.min[k] > b.max[k]) {
        return Err("each minimum must not exceed its maximum".into());
    }
    Ok(b)
}

impl Cli {
    pub fn to_config(&self) -> Result<PipelineConfig, String> {
        let input = self
            .input
            .clone()
            .or_else(|| self.input_flag.clone())
            .ok_or("no input scene given (a .ply or .splat path)")?;
        Ok(PipelineConfig {
            input_gaussians: input,
            input_cameras: self.cameras.clone(),
            output: self.output.clone(),
            num_points: self.num_points,
            sigma: self.sigma,
            exact: self.exact,
            max_rounds: self.max_resample_rounds,
            seed: self.seed,
            render_scale: self.render_scale,
            skip_cameras: self.skip_cameras,
            tile_budget: self.tile_budget,
            background: self.background,
            save_renders: self.save_renders.clone(),
            filters: FilterConfig {
                bbox: self.bbox,
                max_scale: self.max_scale,
                min_opacity: self.min_opacity,
            },
            mesh_prep: self.mesh_prep,
            surface_points: self.surface_points,
            sor_k: self.sor_k,
            sor_std: self.sor_std,
            threads: self.threads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(args: &[&str]) -> Cli {
        match parse(args.iter().map(OsString::from).collect()) {
            Ok(c) => c,
            Err(ArgsError::Clap(e)) => panic!("{e}"),
            Err(ArgsError::Config(e)) => panic!("{e}"),
        }
    }

    #[test]
    fn defaults() {
        let cli = parse_ok(&["gs2pc", "scene.ply"]);
        let config = cli.to_config().unwrap();
        assert_eq!(config, PipelineConfig { input_gaussians: "scene.ply".into(), ..Default::default() });
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# run settings\ninput = a.ply\nnum_points = 500\nseed=3\nexact = true\nbackground = 1, 1, 1\nmesh-prep = false\n",
        )
        .unwrap();
        let cli = parse_ok(&["gs2pc", "--config", path.to_str().unwrap(), "--num-points", "300"]);
        let config = cli.to_config().unwrap();
        assert_eq!(config.input_gaussians, PathBuf::from("a.ply"));
        assert_eq!(config.num_points, 300);
        assert_eq!(config.seed, 3);
        assert!(config.exact && !config.mesh_prep);
        assert_eq!(config.background, [1.0; 3]);

        let cli = parse_ok(&["gs2pc", "b.ply", "--config", path.to_str().unwrap()]);
        assert_eq!(cli.to_config().unwrap().input_gaussians, PathBuf::from("b.ply"));
    }

    #[test]
    fn bad_config_lines_are_reported() {
        let p = Path::new("x.conf");
        assert!(config_file_args("num_points 5", p).unwrap_err().contains("x.conf:1"));
        assert!(config_file_args("\nexact = maybe", p).unwrap_err().contains("x.conf:2"));
        assert!(config_file_args("config = other", p).is_err());
    }

    #[test]
    fn list_values() {
        let cli = parse_ok(&["gs2pc", "s.ply", "--bbox", "-1,-2,-3,1,2,3", "--background", "0.5,0,1"]);
        assert_eq!(cli.bbox, Some(BoundingBox { min: [-1.0, -2.0, -3.0], max: [1.0, 2.0, 3.0] }));
        assert_eq!(cli.background, [0.5, 0.0, 1.0]);
        for bad in [["--bbox", "1,0,0,0,0,0"], ["--bbox", "1,2,3"], ["--background", "2,0,0"], ["--num-points", "0"]] {
            let args: Vec<OsString> = ["gs2pc", "s.ply", bad[0], bad[1]].iter().map(OsString::from).collect();
            assert!(matches!(parse(args), Err(ArgsError::Clap(_))), "{bad:?}");
        }
    }
}
