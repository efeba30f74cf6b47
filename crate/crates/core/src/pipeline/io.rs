//! Point-cloud and mesh files: PLY (ASCII or binary little-endian), a raw header + f32 format,
//! and Wavefront OBJ meshes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Point, PointCloud, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PlyFormat {
    Ascii,
    BinaryLe,
}

/// Scalar type used for vertex coordinates when writing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyPrecision {
    Float,
    Double,
}

/// Vertices and (fan-triangulated) faces read from a PLY file.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    pub points: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let bad = |msg: &str| Error::format(path, msg.to_string());
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| bad("missing end_header"))?;
    let mut body = end + 10;
    while body < bytes.len() && bytes[body] != b'\n' {
        body += 1;
    }
    body += 1;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(bad("not a PLY file"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => format = Some(PlyFormat::Ascii),
            ["format", "binary_little_endian", _] => format = Some(PlyFormat::BinaryLe),
            ["format", other, _] => return Err(bad(&format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", n, item, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let (n, item) = (Scalar::parse(n), Scalar::parse(item));
                match (n, item) {
                    (Some(n), Some(item)) => el.props.push(Property::List(name.to_string(), n, item)),
                    _ => return Err(bad("unknown list property type")),
                }
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| bad(&format!("unknown property type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(bad(&format!("unrecognized header line `{line}`"))),
        }
    }
    Ok(Header {
        format: format.ok_or_else(|| bad("missing format line"))?,
        elements,
        body: body.min(bytes.len()),
    })
}

/// Parses PLY bytes; `path` only labels errors.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PlyData> {
    let header = parse_header(bytes, path)?;
    let bad = |msg: String| Error::format(path, msg);
    let mut points = Vec::new();
    let mut faces = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut ascii_tokens = match header.format {
        PlyFormat::Ascii => Some(
            std::str::from_utf8(&bytes[header.body..])
                .map_err(|_| bad("ASCII body is not UTF-8".into()))?
                .split_whitespace(),
        ),
        PlyFormat::BinaryLe => None,
    };
    let mut offset = header.body;
    let mut next = |ty: Scalar| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(tokens) => tokens
                .next()
                .ok_or_else(|| bad("truncated ASCII body".into()))?
                .parse::<f64>()
                .map_err(|_| bad("bad number in ASCII body".into())),
            None => {
                let end = offset + ty.size();
                let slice = bytes.get(offset..end).ok_or_else(|| bad("truncated binary body".into()))?;
                offset = end;
                Ok(ty.read(slice))
            }
        }
    };
    for el in &header.elements {
        for _ in 0..el.count {
            values.clear();
            for prop in &el.props {
                match prop {
                    Property::Scalar(_, ty) => values.push(vec![next(*ty)?]),
                    Property::List(_, n, item) => {
                        let len = next(*n)?;
                        if !(0.0..=1e6).contains(&len) || len.fract() != 0.0 {
                            return Err(bad(format!("bad list length {len}")));
                        }
                        let mut items = Vec::with_capacity(len as usize);
                        for _ in 0..len as usize {
                            items.push(next(*item)?);
                        }
                        values.push(items);
                    }
                }
            }
            let find = |name: &str| {
                el.props
                    .iter()
                    .position(|p| matches!(p, Property::Scalar(n, _) | Property::List(n, _, _) if n == name))
            };
            if el.name == "vertex" {
                let idx = ["x", "y", "z"].map(find);
                let [Some(x), Some(y), Some(z)] = idx else {
                    return Err(bad("vertex element lacks x/y/z".into()));
                };
                points.push([values[x][0], values[y][0], values[z][0]]);
            } else if el.name == "face" {
                let Some(i) = find("vertex_indices").or_else(|| find("vertex_index")) else {
                    return Err(bad("face element lacks vertex_indices".into()));
                };
                let poly: Vec<usize> = values[i].iter().map(|&v| v as usize).collect();
                for j in 1..poly.len().saturating_sub(1) {
                    faces.push([poly[0], poly[j], poly[j + 1]]);
                }
            }
        }
    }
    if let Some(&bad_idx) = faces.iter().flatten().find(|&&i| i >= points.len()) {
        return Err(bad(format!("face index {bad_idx} out of range")));
    }
    Ok(PlyData { points, faces })
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes, path)
}

/// PLY bytes for a cloud, optionally with per-point colours.
pub fn ply_bytes(cloud: &PointCloud, colors: Option<&[[u8; 3]]>, format: PlyFormat, precision: PlyPrecision) -> Result<Vec<u8>> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::InvalidArgument(format!("{} colours for {} points", c.len(), cloud.len())));
        }
    }
    let ty = match precision {
        PlyPrecision::Float => "float",
        PlyPrecision::Double => "double",
    };
    let mut header = String::from("ply\n");
    let _ = writeln!(
        header,
        "format {} 1.0",
        match format {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLe => "binary_little_endian",
        }
    );
    let _ = writeln!(header, "element vertex {}", cloud.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property {ty} {axis}");
    }
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for (i, p) in cloud.points().iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                let mut line = match precision {
                    PlyPrecision::Float => format!("{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32),
                    PlyPrecision::Double => format!("{} {} {}", p[0], p[1], p[2]),
                };
                if let Some(c) = colors {
                    let _ = write!(line, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
            PlyFormat::BinaryLe => {
                for v in p {
                    match precision {
                        PlyPrecision::Float => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                        PlyPrecision::Double => out.extend_from_slice(&v.to_le_bytes()),
                    }
                }
                if let Some(c) = colors {
                    out.extend_from_slice(&c[i]);
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ply(path: &Path, cloud: &PointCloud, format: PlyFormat, precision: PlyPrecision) -> Result<()> {
    std::fs::write(path, ply_bytes(cloud, None, format, precision)?).map_err(|e| Error::io(path, e))
}

pub fn write_colored_ply(path: &Path, cloud: &PointCloud, colors: &[[u8; 3]], format: PlyFormat) -> Result<()> {
    std::fs::write(path, ply_bytes(cloud, Some(colors), format, PlyPrecision::Float)?).map_err(|e| Error::io(path, e))
}

const RAW_MAGIC: &[u8; 8] = b"PTCLOUD\0";
const RAW_VERSION: u32 = 1;

/// Raw format: 8-byte magic, u32 version, u32 point count, then `xyz` as little-endian f32.
pub fn raw_bytes(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 12 * cloud.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in cloud.points() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn parse_raw(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let bad = |msg: &str| Error::format(path, msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != RAW_MAGIC {
        return Err(bad("not a raw point-cloud file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != RAW_VERSION {
        return Err(bad(&format!("raw version {version} is not supported")));
    }
    let n = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 16 + 12 * n {
        return Err(bad("payload length does not match the point count"));
    }
    let pts = bytes[16..]
        .chunks_exact(12)
        .map(|c| [0, 1, 2].map(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes")) as f64))
        .collect();
    PointCloud::new(pts).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_raw(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, raw_bytes(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_raw(&bytes, path)
}

/// Vertices and faces of an OBJ file; polygons are fan-triangulated, negative indices resolved.
pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
    let bad = |line: usize, msg: &str| Error::format(path, format!("line {}: {msg}", line + 1));
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let v: Vec<f64> = tok.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln, "bad vertex"))?;
                if v.len() != 3 {
                    return Err(bad(ln, "vertex needs three coordinates"));
                }
                vertices.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in tok {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| bad(ln, "bad face index"))?;
                    let idx = if i > 0 { i - 1 } else { vertices.len() as i64 + i };
                    if idx < 0 || idx as usize >= vertices.len() {
                        return Err(bad(ln, "face index out of range"));
                    }
                    poly.push(idx as usize);
                }
                if poly.len() < 3 {
                    return Err(bad(ln, "face needs at least three vertices"));
                }
                for j in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[j], poly[j + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

/// What an input file holds.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Cloud(PointCloud),
    Mesh(TriMesh),
}

/// Loads `.ply` (a mesh when it has faces), `.raw` or `.obj`.
pub fn load_shape(path: &Path) -> Result<Shape> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ply") => {
            let d = read_ply(path)?;
            if d.faces.is_empty() {
                Ok(Shape::Cloud(PointCloud::new(d.points).map_err(|e| Error::format(path, e.to_string()))?))
            } else {
                Ok(Shape::Mesh(TriMesh::new(d.points, d.faces).map_err(|e| Error::format(path, e.to_string()))?))
            }
        }
        Some("raw") => Ok(Shape::Cloud(read_raw(path)?)),
        Some("obj") => Ok(Shape::Mesh(read_obj(path)?)),
        _ => Err(Error::format(path, "unsupported extension (expected .ply, .raw or .obj)")),
    }
}
