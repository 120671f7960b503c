//! NeRF-style `transforms.json`: camera-to-world matrices in the OpenGL
//! convention (camera looks down `-z`, `y` up) plus shared or per-frame
//! intrinsics.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde_json::Value;

use crate::error::{Error, Result};

use super::CameraPose;

const DEFAULT_IMAGE_SIZE: u32 = 800;

fn number(obj: &Value, key: &str) -> Option<f64> {
    obj.get(key).and_then(Value::as_f64)
}

/// Looks a key up on the frame first, then on the file root.
fn lookup(frame: &Value, root: &Value, key: &str) -> Option<f64> {
    number(frame, key).or_else(|| number(root, key))
}

/// Width and height from a PNG's IHDR chunk, if `path` is one.
fn png_dimensions(path: &Path) -> Option<(u32, u32)> {
    use std::io::Read;
    let mut head = [0u8; 24];
    std::fs::File::open(path).ok()?.read_exact(&mut head).ok()?;
    if &head[..8] != b"\x89PNG\r\n\x1a\n" || &head[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(head[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(head[20..24].try_into().ok()?);
    Some((w, h))
}

fn resolve_image(base: &Path, file_path: &str) -> Option<(u32, u32)> {
    let p = base.join(file_path);
    let mut candidates = vec![p.clone()];
    if p.extension().is_none() {
        candidates.push(PathBuf::from(format!("{}.png", p.display())));
    }
    candidates.iter().find_map(|c| png_dimensions(c))
}

fn opengl_to_world_to_camera(m: &Matrix4<f64>, name: &str) -> Result<Matrix4<f64>> {
    let flip = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, -1.0, -1.0, 1.0));
    (m * flip)
        .try_inverse()
        .ok_or_else(|| Error::format(format!("frame {name:?}: transform_matrix is not invertible")))
}

fn parse_matrix(v: &Value, name: &str) -> Result<Matrix4<f64>> {
    let bad = || Error::format(format!("frame {name:?}: transform_matrix must be 4x4 numbers"));
    let rows = v.as_array().ok_or_else(bad)?;
    if rows.len() != 4 {
        return Err(bad());
    }
    let mut m = Matrix4::zeros();
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|r| r.len() == 4).ok_or_else(bad)?;
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = x.as_f64().ok_or_else(bad)?;
        }
    }
    Ok(m)
}

/// `base_dir` is where image paths are resolved from (only their PNG headers
/// are read, to recover the image size).
pub fn parse_nerf_json(text: &str, base_dir: &Path) -> Result<Vec<CameraPose>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| Error::format(format!("invalid JSON: {e}")))?;
    let frames = root
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format("transforms file has no 'frames' array"))?;
    if frames.is_empty() {
        log::warn!("transforms file lists no frames");
        return Ok(Vec::new());
    }

    let mut poses = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let name = frame
            .get("file_path")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("frame_{i:05}"));
        let c2w = parse_matrix(
            frame
                .get("transform_matrix")
                .ok_or_else(|| Error::format(format!("frame {name:?} has no transform_matrix")))?,
            &name,
        )?;

        let (width, height) = match (lookup(frame, &root, "w"), lookup(frame, &root, "h")) {
            (Some(w), Some(h)) => (w as u32, h as u32),
            _ => resolve_image(base_dir, &name).unwrap_or((DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE)),
        };
        let fx = match (lookup(frame, &root, "fl_x"), lookup(frame, &root, "camera_angle_x")) {
            (Some(f), _) => f,
            (None, Some(angle)) => 0.5 * width as f64 / (0.5 * angle).tan(),
            (None, None) => {
                return Err(Error::format(format!(
                    "frame {name:?}: neither fl_x nor camera_angle_x given"
                )))
            }
        };
        let fy = lookup(frame, &root, "fl_y")
            .or_else(|| {
                lookup(frame, &root, "camera_angle_y")
                    .map(|a| 0.5 * height as f64 / (0.5 * a).tan())
            })
            .unwrap_or(fx);

        let pose = CameraPose {
            image_id: 0,
            world_to_camera: opengl_to_world_to_camera(&c2w, &name)?,
            width,
            height,
            fx,
            fy,
            cx: lookup(frame, &root, "cx").unwrap_or(width as f64 / 2.0),
            cy: lookup(frame, &root, "cy").unwrap_or(height as f64 / 2.0),
            name,
        };
        pose.validate()?;
        poses.push(pose);
    }
    poses.sort_by(|a, b| a.name.cmp(&b.name));
    for (i, p) in poses.iter_mut().enumerate() {
        p.image_id = i as u32;
    }
    Ok(poses)
}

pub fn load_cameras_nerf_json(path: impl AsRef<Path>) -> Result<Vec<CameraPose>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_nerf_json(&text, path.parent().unwrap_or(Path::new(".")))
}
