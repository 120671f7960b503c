//! COLMAP sparse model cameras and images, in the `.bin` or `.txt` flavour.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::camera::rigid_from_quaternion;
use super::CameraPose;

#[derive(Clone, Debug, PartialEq)]
struct Intrinsics {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct ImageEntry {
    image_id: u32,
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: u32,
    name: String,
}

const MODEL_NAMES: [&str; 11] = [
    "SIMPLE_PINHOLE",
    "PINHOLE",
    "SIMPLE_RADIAL",
    "RADIAL",
    "OPENCV",
    "OPENCV_FISHEYE",
    "FULL_OPENCV",
    "FOV",
    "SIMPLE_RADIAL_FISHEYE",
    "RADIAL_FISHEYE",
    "THIN_PRISM_FISHEYE",
];

fn intrinsics(model: &str, width: u32, height: u32, params: &[f64]) -> Result<Intrinsics> {
    let need = |n: usize| {
        if params.len() < n {
            Err(Error::format(format!(
                "camera model {model} expects {n} parameters, found {}",
                params.len()
            )))
        } else {
            Ok(())
        }
    };
    let (fx, fy, cx, cy) = match model {
        "SIMPLE_PINHOLE" => {
            need(3)?;
            (params[0], params[0], params[1], params[2])
        }
        "PINHOLE" => {
            need(4)?;
            (params[0], params[1], params[2], params[3])
        }
        other => {
            return Err(Error::format(format!(
                "unsupported camera model: {other} (only SIMPLE_PINHOLE and PINHOLE are accepted)"
            )))
        }
    };
    Ok(Intrinsics {
        width,
        height,
        fx,
        fy,
        cx,
        cy,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::UnexpectedEof {
                offset: self.bytes.len() as u64,
            });
        }
        let out = self.bytes[self.pos..end].try_into().unwrap();
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        self.take::<8>().map(u64::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.take::<4>().map(i32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn cstr(&mut self) -> Result<String> {
        let rest = &self.bytes[self.pos..];
        let end = rest.iter().position(|&b| b == 0).ok_or(Error::UnexpectedEof {
            offset: self.bytes.len() as u64,
        })?;
        let s = String::from_utf8_lossy(&rest[..end]).into_owned();
        self.pos += end + 1;
        Ok(s)
    }

    fn skip(&mut self, n: u64) -> Result<()> {
        let end = (self.pos as u64).saturating_add(n);
        if end > self.bytes.len() as u64 {
            return Err(Error::UnexpectedEof {
                offset: self.bytes.len() as u64,
            });
        }
        self.pos = end as usize;
        Ok(())
    }
}

fn parse_cameras_bin(bytes: &[u8]) -> Result<HashMap<u32, Intrinsics>> {
    let mut c = Cursor { bytes, pos: 0 };
    let n = c.u64()?;
    let mut out = HashMap::new();
    for _ in 0..n {
        let id = c.i32()? as u32;
        let model_id = c.i32()?;
        let model = usize::try_from(model_id)
            .ok()
            .and_then(|m| MODEL_NAMES.get(m))
            .ok_or_else(|| Error::format(format!("unsupported camera model: id {model_id}")))?;
        let width = c.u64()? as u32;
        let height = c.u64()? as u32;
        let nparams = match *model {
            "SIMPLE_PINHOLE" => 3,
            "PINHOLE" => 4,
            _ => 0,
        };
        let params = (0..nparams).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        out.insert(id, intrinsics(model, width, height, &params)?);
    }
    Ok(out)
}

fn parse_images_bin(bytes: &[u8]) -> Result<Vec<ImageEntry>> {
    let mut c = Cursor { bytes, pos: 0 };
    let n = c.u64()?;
    let mut out = Vec::new();
    for _ in 0..n {
        let image_id = c.i32()? as u32;
        let qvec = [c.f64()?, c.f64()?, c.f64()?, c.f64()?];
        let tvec = [c.f64()?, c.f64()?, c.f64()?];
        let camera_id = c.i32()? as u32;
        let name = c.cstr()?;
        let points2d = c.u64()?;
        // x: f64, y: f64, point3D_id: i64
        c.skip(points2d.saturating_mul(24))?;
        out.push(ImageEntry {
            image_id,
            qvec,
            tvec,
            camera_id,
            name,
        });
    }
    Ok(out)
}

fn numbers<T: std::str::FromStr>(tokens: &[&str], what: &str) -> Result<Vec<T>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::format(format!("invalid {what} value {t:?}")))
        })
        .collect()
}

fn parse_cameras_txt(text: &str) -> Result<HashMap<u32, Intrinsics>> {
    let mut out = HashMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(Error::format(format!("malformed camera line: {line}")));
        }
        let id: u32 = numbers(&tok[..1], "camera id")?[0];
        let dims: Vec<u32> = numbers(&tok[2..4], "image size")?;
        let params: Vec<f64> = numbers(&tok[4..], "camera parameter")?;
        out.insert(id, intrinsics(tok[1], dims[0], dims[1], &params)?);
    }
    Ok(out)
}

fn parse_images_txt(text: &str) -> Result<Vec<ImageEntry>> {
    let mut out = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(Error::format(format!("malformed image line: {line}")));
        }
        let image_id: u32 = numbers(&tok[..1], "image id")?[0];
        let v: Vec<f64> = numbers(&tok[1..8], "pose")?;
        let camera_id: u32 = numbers(&tok[8..9], "camera id")?[0];
        out.push(ImageEntry {
            image_id,
            qvec: [v[0], v[1], v[2], v[3]],
            tvec: [v[4], v[5], v[6]],
            camera_id,
            // Names may contain spaces.
            name: tok[9..].join(" "),
        });
        // The 2D observation line always follows, even when empty.
        lines.next();
    }
    Ok(out)
}

fn assemble(cameras: HashMap<u32, Intrinsics>, images: Vec<ImageEntry>) -> Result<Vec<CameraPose>> {
    let mut poses = images
        .into_iter()
        .map(|img| {
            let cam = cameras.get(&img.camera_id).ok_or_else(|| {
                Error::format(format!(
                    "image {} ({}) references missing camera_id {}",
                    img.image_id, img.name, img.camera_id
                ))
            })?;
            let pose = CameraPose {
                image_id: img.image_id,
                name: img.name,
                width: cam.width,
                height: cam.height,
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
                world_to_camera: rigid_from_quaternion(img.qvec, img.tvec),
            };
            pose.validate()?;
            Ok(pose)
        })
        .collect::<Result<Vec<_>>>()?;
    poses.sort_by(|a, b| a.name.cmp(&b.name).then(a.image_id.cmp(&b.image_id)));
    Ok(poses)
}

pub fn parse_colmap_bin(cameras: &[u8], images: &[u8]) -> Result<Vec<CameraPose>> {
    assemble(parse_cameras_bin(cameras)?, parse_images_bin(images)?)
}

pub fn parse_colmap_txt(cameras: &str, images: &str) -> Result<Vec<CameraPose>> {
    assemble(parse_cameras_txt(cameras)?, parse_images_txt(images)?)
}

/// Directory holding `cameras.bin`/`images.bin` or `cameras.txt`/`images.txt`.
/// The binary pair wins when both exist. Also looks in `sparse/0`.
pub fn find_colmap_dir(dir: &Path) -> Option<std::path::PathBuf> {
    [dir.to_path_buf(), dir.join("sparse").join("0"), dir.join("sparse")]
        .into_iter()
        .find(|d| d.join("cameras.bin").is_file() || d.join("cameras.txt").is_file())
}

pub fn load_cameras_colmap(dir: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    let dir = dir.as_ref();
    let model = find_colmap_dir(dir).ok_or_else(|| {
        Error::format(format!("{}: no cameras.bin or cameras.txt found", dir.display()))
    })?;
    let read = |name: &str| {
        let p = model.join(name);
        std::fs::read(&p).map_err(|e| Error::io(p, e))
    };
    if model.join("cameras.bin").is_file() && model.join("images.bin").is_file() {
        parse_colmap_bin(&read("cameras.bin")?, &read("images.bin")?)
    } else {
        let text = |name: &str| read(name).map(|b| String::from_utf8_lossy(&b).into_owned());
        parse_colmap_txt(&text("cameras.txt")?, &text("images.txt")?)
    }
}
