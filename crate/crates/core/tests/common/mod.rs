//! Oracles and fixture builders shared by the integration tests. Nothing here
//! calls into the code paths it is used to check.

#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use gs2pc::formats::RawGaussianRecord;
use gs2pc::renderer::ProjectedGaussian;
use gs2pc::{CameraPose, GaussianScene};
use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};
use rand::Rng;

/// Camera at `centre` looking at `target`, COLMAP convention (x right,
/// y down, z forward).
pub fn look_at(name: &str, centre: Vector3<f64>, target: Vector3<f64>, width: u32, height: u32, f: f64) -> CameraPose {
    let z = (target - centre).normalize();
    let helper = if z.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -(r * centre);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    CameraPose {
        image_id: 1,
        name: name.into(),
        width,
        height,
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        world_to_camera: m,
    }
}

pub fn random_record(rng: &mut impl Rng, extent: f64, log_scale: (f64, f64)) -> RawGaussianRecord {
    RawGaussianRecord {
        position: std::array::from_fn(|_| rng.gen_range(-extent..extent)),
        log_scale: std::array::from_fn(|_| rng.gen_range(log_scale.0..log_scale.1)),
        rotation: loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            if q.iter().map(|v| v * v).sum::<f64>() > 0.05 {
                break q;
            }
        },
        logit_opacity: rng.gen_range(-3.0..6.0),
        sh_dc: std::array::from_fn(|_| rng.gen_range(-1.8..1.8)),
        sh_rest: Vec::new(),
    }
}

/// Per-pixel result of whole-image compositing.
pub struct OraclePixel {
    pub rgb: [f64; 3],
    pub contribution_sum: f64,
    pub transmittance: f64,
}

/// Best (contribution, pixel, pixel colour) per Gaussian index.
pub type OracleBest = Vec<Option<(f64, u32, [f64; 3])>>;

/// Untiled compositing: every pixel walks the full front-to-back list
/// (depth, then index), testing every Gaussian's 3σ box.
pub fn composite_oracle(
    projected: &[ProjectedGaussian],
    n_gaussians: usize,
    colours: &[[f64; 3]],
    width: u32,
    height: u32,
    background: [f64; 3],
) -> (Vec<OraclePixel>, OracleBest) {
    let mut order: Vec<&ProjectedGaussian> = projected.iter().collect();
    order.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.gaussian_index.cmp(&b.gaussian_index)));
    let mut pixels = Vec::with_capacity((width * height) as usize);
    let mut best: OracleBest = vec![None; n_gaussians];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0f64;
            let mut rgb = [0.0; 3];
            let mut sum = 0.0;
            let mut hits = Vec::new();
            for g in &order {
                let [x0, y0, x1, y1] = g.bbox;
                if px < x0 || px > x1 || py < y0 || py > y1 {
                    continue;
                }
                let (dx, dy) = (px - g.mean2d[0], py - g.mean2d[1]);
                let [a, b, c] = g.conic;
                let q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                let alpha = (g.opacity * (-0.5 * q).exp()).min(0.99);
                if alpha < 1.0 / 255.0 {
                    continue;
                }
                let contribution = alpha * t;
                for k in 0..3 {
                    rgb[k] += contribution * colours[g.gaussian_index][k];
                }
                sum += contribution;
                hits.push((g.gaussian_index, contribution));
                t *= 1.0 - alpha;
                if t < 1e-4 {
                    break;
                }
            }
            for k in 0..3 {
                rgb[k] += t * background[k];
            }
            let pixel = y * width + x;
            for (g, c) in hits {
                let better = match best[g] {
                    None => true,
                    Some((bc, bp, _)) => c > bc || (c == bc && pixel < bp),
                };
                if better {
                    best[g] = Some((c, pixel, rgb));
                }
            }
            pixels.push(OraclePixel { rgb, contribution_sum: sum, transmittance: t });
        }
    }
    (pixels, best)
}

/// Mahalanobis distance through an explicit inverse of Σ.
pub fn mahalanobis_oracle(x: &Vector3<f64>, mu: &Vector3<f64>, cov: &Matrix3<f64>) -> f64 {
    let inv = cov.try_inverse().expect("invertible covariance");
    let d = x - mu;
    (d.transpose() * inv * d)[(0, 0)].sqrt()
}

/// Σ rebuilt from a raw record: R diag(e^{2s}) Rᵀ.
pub fn covariance_oracle(r: &RawGaussianRecord) -> Matrix3<f64> {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        r.rotation[0],
        r.rotation[1],
        r.rotation[2],
        r.rotation[3],
    ));
    let rot = q.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::from(r.log_scale).map(|v| (2.0 * v).exp()));
    rot * s * rot.transpose()
}

/// Mean distance to the k nearest other points, brute force, then the
/// mean + ratio·(sample std) cut.
pub fn sor_oracle(points: &[[f32; 3]], k: usize, ratio: f64) -> Vec<bool> {
    let p: Vec<[f64; 3]> = points.iter().map(|p| p.map(|v| v as f64)).collect();
    let means: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<f64> = p
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| {
                    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let std = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    means.iter().map(|&m| m <= mean + ratio * std).collect()
}

/// Minimal reader for the binary point clouds the converter writes:
/// ASCII header, then packed little-endian vertices.
pub struct PlyOracle {
    pub points: Vec<[f32; 3]>,
    pub colours: Vec<[u8; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
}

pub fn read_ply_oracle(bytes: &[u8]) -> PlyOracle {
    let end = bytes.windows(11).position(|w| w == b"end_header\n").expect("end_header") + 11;
    let header = std::str::from_utf8(&bytes[..end]).unwrap();
    assert!(header.starts_with("ply\nformat binary_little_endian 1.0\n"), "{header}");
    let mut count = 0usize;
    let mut props = Vec::new();
    for line in header.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["element", "vertex", n] => count = n.parse().unwrap(),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            _ => {}
        }
    }
    let names: Vec<&str> = props.iter().map(|(_, n)| n.as_str()).collect();
    let with_normals = names.len() == 9;
    let expected: &[&str] = if with_normals {
        &["x", "y", "z", "red", "green", "blue", "nx", "ny", "nz"]
    } else {
        &["x", "y", "z", "red", "green", "blue"]
    };
    assert_eq!(names, expected);
    let stride = if with_normals { 27 } else { 15 };
    let body = &bytes[end..];
    assert_eq!(body.len(), count * stride);
    let f = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    let mut out = PlyOracle { points: vec![], colours: vec![], normals: with_normals.then(Vec::new) };
    for i in 0..count {
        let o = i * stride;
        out.points.push([f(o), f(o + 4), f(o + 8)]);
        out.colours.push([body[o + 12], body[o + 13], body[o + 14]]);
        if let Some(n) = out.normals.as_mut() {
            n.push([f(o + 15), f(o + 19), f(o + 23)]);
        }
    }
    out
}

/// One COLMAP image entry for the fixture writers.
pub struct ColmapImage {
    pub id: u32,
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub points2d: Vec<(f64, f64, i64)>,
}

/// (id, model id, width, height, params); model 0 = SIMPLE_PINHOLE, 1 = PINHOLE.
pub type ColmapCamera = (u32, i32, u64, u64, Vec<f64>);

pub fn write_colmap_bin(dir: &Path, cameras: &[ColmapCamera], images: &[ColmapImage]) {
    let mut c = Vec::new();
    c.extend((cameras.len() as u64).to_le_bytes());
    for (id, model, w, h, params) in cameras {
        c.extend((*id as i32).to_le_bytes());
        c.extend(model.to_le_bytes());
        c.extend(w.to_le_bytes());
        c.extend(h.to_le_bytes());
        for p in params {
            c.extend(p.to_le_bytes());
        }
    }
    std::fs::write(dir.join("cameras.bin"), c).unwrap();
    let mut b = Vec::new();
    b.extend((images.len() as u64).to_le_bytes());
    for im in images {
        b.extend((im.id as i32).to_le_bytes());
        for v in im.qvec.iter().chain(&im.tvec) {
            b.extend(v.to_le_bytes());
        }
        b.extend((im.camera_id as i32).to_le_bytes());
        b.extend(im.name.as_bytes());
        b.push(0);
        b.extend((im.points2d.len() as u64).to_le_bytes());
        for (x, y, id) in &im.points2d {
            b.extend(x.to_le_bytes());
            b.extend(y.to_le_bytes());
            b.extend(id.to_le_bytes());
        }
    }
    std::fs::write(dir.join("images.bin"), b).unwrap();
}

pub fn write_colmap_txt(dir: &Path, cameras: &[ColmapCamera], images: &[ColmapImage]) {
    let mut c = std::fs::File::create(dir.join("cameras.txt")).unwrap();
    writeln!(c, "# Camera list with one line of data per camera:").unwrap();
    for (id, model, w, h, params) in cameras {
        let name = ["SIMPLE_PINHOLE", "PINHOLE"][*model as usize];
        let params: Vec<String> = params.iter().map(|p| format!("{p:?}")).collect();
        writeln!(c, "{id} {name} {w} {h} {}", params.join(" ")).unwrap();
    }
    let mut f = std::fs::File::create(dir.join("images.txt")).unwrap();
    writeln!(f, "# Image list with two lines of data per image:").unwrap();
    for im in images {
        let q = im.qvec;
        let t = im.tvec;
        writeln!(
            f,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {} {}",
            im.id, q[0], q[1], q[2], q[3], t[0], t[1], t[2], im.camera_id, im.name
        )
        .unwrap();
        let pts: Vec<String> = im.points2d.iter().map(|(x, y, id)| format!("{x:?} {y:?} {id}")).collect();
        writeln!(f, "{}", pts.join(" ")).unwrap();
    }
}

/// Build a scene and give every Gaussian a constant colour.
pub fn painted(scene: &GaussianScene, colour: [f64; 3]) -> GaussianScene {
    let mut s = scene.clone();
    s.base_colours = vec![colour; s.len()];
    s
}
