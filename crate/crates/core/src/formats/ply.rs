//! Minimal PLY reader/writer covering what Gaussian splat exporters emit:
//! `ascii` and `binary_little_endian` bodies, any scalar type, list
//! properties (read and discarded), properties looked up by name.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{PointCloud, RawGaussianRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    kind: PropertyKind,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }
}

#[derive(Clone, Debug)]
struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::UnexpectedEof {
                offset: bytes.len() as u64,
            })?;
        pos += end + 1;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| Error::format("PLY header is not valid UTF-8"))?;
        Ok(line.trim_end_matches('\r'))
    };

    if next_line()? != "ply" {
        return Err(Error::format("missing 'ply' magic"));
    }

    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLittleEndian,
                    Some(other) => {
                        return Err(Error::format(format!("unsupported PLY format: {other}")))
                    }
                    None => return Err(Error::format("malformed format line")),
                });
            }
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format("malformed element line"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| Error::format(format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property declared before any element"))?;
                let first = tok
                    .next()
                    .ok_or_else(|| Error::format("malformed property line"))?;
                let kind = if first == "list" {
                    let count = tok.next().and_then(ScalarType::parse);
                    let item = tok.next().and_then(ScalarType::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => PropertyKind::List { count, item },
                        _ => return Err(Error::format(format!("malformed list property: {line}"))),
                    }
                } else {
                    PropertyKind::Scalar(ScalarType::parse(first).ok_or_else(|| {
                        Error::format(format!("unknown property type: {first}"))
                    })?)
                };
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format("property without a name"))?;
                elem.properties.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(Error::format(format!("unexpected header keyword: {other}"))),
        }
    }

    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::format("missing format line"))?,
        elements,
        body_offset: pos,
    })
}

/// Streams element rows out of a PLY body. Scalar property values land in
/// `row` at their declared position; list properties are consumed and leave NaN.
struct BodyReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: PlyEncoding,
}

impl<'a> BodyReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::UnexpectedEof {
                offset: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn ascii_token(&mut self, ty: ScalarType) -> Result<f64> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::UnexpectedEof {
                offset: start as u64,
            });
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        // Round through the declared width so ascii and binary files holding
        // the same values decode identically.
        let value = match ty {
            ScalarType::F32 => tok.parse::<f32>().map(f64::from).ok(),
            _ => tok.parse::<f64>().ok(),
        };
        value.ok_or_else(|| {
            Error::format(format!("invalid ascii value {tok:?} at byte offset {start}"))
        })
    }

    fn scalar(&mut self, ty: ScalarType) -> Result<f64> {
        match self.encoding {
            PlyEncoding::Ascii => self.ascii_token(ty),
            PlyEncoding::BinaryLittleEndian => Ok(ty.decode_le(self.take(ty.size())?)),
        }
    }

    fn read_row(&mut self, element: &Element, row: &mut [f64]) -> Result<()> {
        for (slot, prop) in row.iter_mut().zip(&element.properties) {
            match prop.kind {
                PropertyKind::Scalar(ty) => *slot = self.scalar(ty)?,
                PropertyKind::List { count, item } => {
                    let n = self.scalar(count)?;
                    if !(n >= 0.0) {
                        return Err(Error::format(format!("negative list length in {}", prop.name)));
                    }
                    for _ in 0..n as usize {
                        self.scalar(item)?;
                    }
                    *slot = f64::NAN;
                }
            }
        }
        Ok(())
    }
}

struct PlyFile<'a> {
    header: Header,
    bytes: &'a [u8],
}

impl<'a> PlyFile<'a> {
    fn parse(bytes: &'a [u8]) -> Result<Self> {
        Ok(Self {
            header: parse_header(bytes)?,
            bytes,
        })
    }

    fn element(&self, name: &str) -> Result<&Element> {
        self.header
            .elements
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(format!("no '{name}' element")))
    }

    /// Call `visit` once per row of element `target`. Elements declared
    /// before it are read and discarded.
    fn visit_rows(
        &self,
        target: &str,
        mut visit: impl FnMut(usize, &[f64]) -> Result<()>,
    ) -> Result<()> {
        let mut reader = BodyReader {
            bytes: self.bytes,
            pos: self.header.body_offset,
            encoding: self.header.encoding,
        };
        for element in &self.header.elements {
            let mut row = vec![0.0; element.properties.len()];
            let is_target = element.name == target;
            for i in 0..element.count {
                reader.read_row(element, &mut row)?;
                if is_target {
                    visit(i, &row)?;
                }
            }
            if is_target {
                break;
            }
        }
        Ok(())
    }
}

const REQUIRED_GAUSSIAN_PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

pub fn parse_gaussians_ply(bytes: &[u8]) -> Result<Vec<RawGaussianRecord>> {
    let ply = PlyFile::parse(bytes)?;
    let element = ply.element("vertex")?;
    let mut slots = [0usize; 14];
    for (slot, name) in slots.iter_mut().zip(REQUIRED_GAUSSIAN_PROPERTIES) {
        *slot = element
            .property_index(name)
            .ok_or_else(|| Error::format(format!("missing property: {name}")))?;
    }
    let mut rest: Vec<(usize, usize)> = element
        .properties
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let k = p.name.strip_prefix("f_rest_")?.parse::<usize>().ok()?;
            Some((k, i))
        })
        .collect();
    rest.sort_unstable();

    let mut records = Vec::with_capacity(element.count);
    ply.visit_rows("vertex", |i, row| {
        let v = |k: usize| row[slots[k]];
        let record = RawGaussianRecord {
            position: [v(0), v(1), v(2)],
            sh_dc: [v(3), v(4), v(5)],
            logit_opacity: v(6),
            log_scale: [v(7), v(8), v(9)],
            rotation: [v(10), v(11), v(12), v(13)],
            sh_rest: rest.iter().map(|&(_, slot)| row[slot]).collect(),
        };
        record.validate(i)?;
        records.push(record);
        Ok(())
    })?;
    Ok(records)
}

pub fn parse_pointcloud_ply(bytes: &[u8]) -> Result<PointCloud> {
    let ply = PlyFile::parse(bytes)?;
    let element = ply.element("vertex")?;
    let find = |name: &str| {
        element
            .property_index(name)
            .ok_or_else(|| Error::format(format!("missing property: {name}")))
    };
    let pos = [find("x")?, find("y")?, find("z")?];
    let col = [find("red")?, find("green")?, find("blue")?];
    let nrm = match (find("nx"), find("ny"), find("nz")) {
        (Ok(a), Ok(b), Ok(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut cloud = PointCloud {
        points: Vec::with_capacity(element.count),
        colours: Vec::with_capacity(element.count),
        normals: nrm.map(|_| Vec::with_capacity(element.count)),
    };
    ply.visit_rows("vertex", |_, row| {
        cloud.points.push(pos.map(|k| row[k] as f32));
        cloud.colours.push(col.map(|k| row[k] as u8));
        if let (Some(nrm), Some(normals)) = (nrm, cloud.normals.as_mut()) {
            normals.push(nrm.map(|k| row[k] as f32));
        }
        Ok(())
    })?;
    Ok(cloud)
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_gaussians_ply(path: impl AsRef<Path>) -> Result<Vec<RawGaussianRecord>> {
    parse_gaussians_ply(&read_file(path.as_ref())?)
}

pub fn read_pointcloud_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_pointcloud_ply(&read_file(path.as_ref())?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn encode_pointcloud_ply(cloud: &PointCloud) -> Result<Vec<u8>> {
    cloud.validate()?;
    let mut out = Vec::with_capacity(256 + cloud.len() * 27);
    out.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    out.extend_from_slice(format!("element vertex {}\n", cloud.len()).as_bytes());
    for p in ["x", "y", "z"] {
        out.extend_from_slice(format!("property float {p}\n").as_bytes());
    }
    for p in ["red", "green", "blue"] {
        out.extend_from_slice(format!("property uchar {p}\n").as_bytes());
    }
    if cloud.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            out.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..cloud.len() {
        for c in cloud.points[i] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&cloud.colours[i]);
        if let Some(normals) = &cloud.normals {
            for c in normals[i] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Write `cloud` as binary little-endian PLY: `x y z` (float), `red green
/// blue` (uchar), then `nx ny nz` (float) when normals are present.
pub fn write_pointcloud_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pointcloud_ply(cloud)?;
    let mut w = create(path)?;
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Write Gaussians in the layout produced by the reference 3DGS trainer.
pub fn write_gaussians_ply(
    records: &[RawGaussianRecord],
    encoding: PlyEncoding,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let rest = records.first().map_or(0, |r| r.sh_rest.len());
    if records.iter().any(|r| r.sh_rest.len() != rest) {
        return Err(Error::format("records disagree on the number of f_rest coefficients"));
    }

    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..rest).map(|k| format!("f_rest_{k}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );

    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(w, "ply\nformat {fmt} 1.0\nelement vertex {}\n", records.len()).map_err(io)?;
    for n in &names {
        writeln!(w, "property float {n}").map_err(io)?;
    }
    w.write_all(b"end_header\n").map_err(io)?;

    let mut row: Vec<f32> = Vec::with_capacity(names.len());
    for r in records {
        row.clear();
        row.extend(r.position.iter().map(|&v| v as f32));
        row.extend([0.0f32; 3]);
        row.extend(r.sh_dc.iter().map(|&v| v as f32));
        row.extend(r.sh_rest.iter().map(|&v| v as f32));
        row.push(r.logit_opacity as f32);
        row.extend(r.log_scale.iter().map(|&v| v as f32));
        row.extend(r.rotation.iter().map(|&v| v as f32));
        match encoding {
            PlyEncoding::BinaryLittleEndian => {
                for v in &row {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            PlyEncoding::Ascii => {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", line.join(" ")).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ascii_fixture(props: &[&str], rows: &[&str]) -> Vec<u8> {
        let mut s = format!("ply\nformat ascii 1.0\nelement vertex {}\n", rows.len());
        for p in props {
            s += &format!("property float {p}\n");
        }
        s += "end_header\n";
        for r in rows {
            s += r;
            s.push('\n');
        }
        s.into_bytes()
    }

    const FULL: [&str; 14] = REQUIRED_GAUSSIAN_PROPERTIES;

    #[test]
    fn identity_vertex() {
        let bytes = ascii_fixture(&FULL, &["0 0 0 0 0 0 0 0 0 0 1 0 0 0"]);
        let recs = parse_gaussians_ply(&bytes).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].log_scale, [0.0; 3]);
        assert_eq!(recs[0].rotation, [1.0, 0.0, 0.0, 0.0]);
        assert!(recs[0].sh_rest.is_empty());
    }

    #[test]
    fn ascii_floats_decode_at_declared_width() {
        let bytes = ascii_fixture(&FULL, &["0.1 0 0 0 0 0 0 0 0 0 1 0 0 0"]);
        let recs = parse_gaussians_ply(&bytes).unwrap();
        assert_eq!(recs[0].position[0], 0.1f32 as f64);
    }

    #[test]
    fn missing_opacity_is_named() {
        let props: Vec<&str> = FULL.iter().copied().filter(|p| *p != "opacity").collect();
        let bytes = ascii_fixture(&props, &["0 0 0 0 0 0 0 0 0 1 0 0 0"]);
        let err = parse_gaussians_ply(&bytes).unwrap_err();
        assert!(err.to_string().contains("missing property: opacity"), "{err}");
    }

    #[test]
    fn properties_resolved_by_name_in_any_order() {
        let props = [
            "rot_3", "f_rest_1", "opacity", "z", "y", "x", "scale_2", "scale_1", "scale_0",
            "extra", "f_dc_2", "f_dc_1", "f_dc_0", "rot_2", "rot_1", "rot_0", "f_rest_0",
        ];
        let bytes = ascii_fixture(&props, &["4 11 -1 3 2 1 -3 -2 -1 99 0.3 0.2 0.1 3 2 1 10"]);
        let r = &parse_gaussians_ply(&bytes).unwrap()[0];
        assert_eq!(r.position, [1.0, 2.0, 3.0]);
        assert_eq!(r.log_scale, [-1.0, -2.0, -3.0]);
        assert_eq!(r.rotation, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.sh_dc, [0.1f32, 0.2, 0.3].map(f64::from));
        assert_eq!(r.sh_rest, vec![10.0, 11.0]);
        assert_eq!(r.logit_opacity, -1.0);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mut s = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 2\n");
        for p in FULL {
            s += &format!("property float {p}\n");
        }
        s += "end_header\n";
        let header_len = s.len();
        let mut bytes = s.into_bytes();
        for _ in 0..14 {
            bytes.extend_from_slice(&1.0f32.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 10]);
        match parse_gaussians_ply(&bytes) {
            Err(Error::UnexpectedEof { offset }) => {
                assert_eq!(offset as usize, header_len + 14 * 4 + 10)
            }
            other => panic!("expected EOF error, got {other:?}"),
        }
    }

    #[test]
    fn zero_quaternion_rejected() {
        let bytes = ascii_fixture(&FULL, &["0 0 0 0 0 0 0 0 0 0 0 0 0 0"]);
        assert!(matches!(parse_gaussians_ply(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn skips_leading_elements_with_lists() {
        let mut s = String::from(
            "ply\nformat binary_little_endian 1.0\ncomment made by hand\nelement junk 2\nproperty list uchar int idx\nproperty double w\nelement vertex 1\n",
        );
        for p in ["x", "y", "z"] {
            s += &format!("property float {p}\n");
        }
        for p in ["red", "green", "blue"] {
            s += &format!("property uchar {p}\n");
        }
        s += "end_header\n";
        let mut bytes = s.into_bytes();
        for n in [2u8, 0] {
            bytes.push(n);
            for k in 0..n as i32 {
                bytes.extend_from_slice(&k.to_le_bytes());
            }
            bytes.extend_from_slice(&1.5f64.to_le_bytes());
        }
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[7, 8, 9]);
        let cloud = parse_pointcloud_ply(&bytes).unwrap();
        assert_eq!(cloud.points, vec![[1.0, 2.0, 3.0]]);
        assert_eq!(cloud.colours, vec![[7, 8, 9]]);
        assert!(cloud.normals.is_none());
    }

    #[test]
    fn single_point_payload_is_15_bytes() {
        let cloud = PointCloud {
            points: vec![[0.0; 3]],
            colours: vec![[255, 0, 0]],
            normals: None,
        };
        let bytes = encode_pointcloud_ply(&cloud).unwrap();
        let header = parse_header(&bytes).unwrap();
        assert_eq!(bytes.len() - header.body_offset, 15);
        assert_eq!(parse_pointcloud_ply(&bytes).unwrap(), cloud);
    }

    #[test]
    fn empty_cloud_is_valid() {
        let bytes = encode_pointcloud_ply(&PointCloud::default()).unwrap();
        assert!(std::str::from_utf8(&bytes).unwrap().contains("element vertex 0\n"));
        assert_eq!(parse_pointcloud_ply(&bytes).unwrap().len(), 0);
    }

    #[test]
    fn normals_follow_blue() {
        let cloud = PointCloud {
            points: vec![[1.0, -2.5, 3.25], [0.1, 0.2, 0.3]],
            colours: vec![[1, 2, 3], [4, 5, 6]],
            normals: Some(vec![[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]]),
        };
        let bytes = encode_pointcloud_ply(&cloud).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let blue = text.find("property uchar blue").unwrap();
        let nx = text.find("property float nx").unwrap();
        assert!(nx > blue);
        assert_eq!(parse_pointcloud_ply(&bytes).unwrap(), cloud);
    }
}
