//! Minimal PLY reader for sparse point clouds.
//!
//! Reads `x`, `y`, `z` and optional `red`, `green`, `blue` from the `vertex`
//! element of ASCII and binary little-endian files. Other properties and
//! elements are skipped.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyPoint {
    pub position: [f32; 3],
    /// Linear RGB in `[0, 1]`.
    pub color: Option<[f32; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    /// Scale that maps the type's color range onto `[0, 1]`.
    fn color_scale(self) -> f64 {
        match self {
            Self::U8 => 1.0 / 255.0,
            Self::U16 => 1.0 / 65535.0,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn err(location: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ply {
        location: location.into(),
        reason: reason.into(),
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<PlyPoint>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_ply_bytes(&bytes)
}

pub fn read_ply_bytes(bytes: &[u8]) -> Result<Vec<PlyPoint>> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(format!("line {}", line_no + 1), "header ends without end_header"))?;
        *pos += end + 1;
        line_no += 1;
        let s = std::str::from_utf8(&rest[..end]).map_err(|_| err(format!("line {line_no}"), "header is not UTF-8"))?;
        Ok((line_no, s.trim_end_matches('\r').to_string()))
    };

    let (n, first) = next_line(&mut pos)?;
    if first.trim() != "ply" {
        return Err(err(format!("line {n}"), "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = next_line(&mut pos)?;
        let loc = format!("line {n}");
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.first().copied() {
            Some("format") => {
                format = Some(match words.get(1).copied() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(err(loc, format!("unsupported format '{other}'"))),
                    None => return Err(err(loc, "format line without a format")),
                });
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let (Some(name), Some(count)) = (words.get(1), words.get(2)) else {
                    return Err(err(loc, "element needs a name and a count"));
                };
                let count = count.parse().map_err(|_| err(loc.clone(), format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| err(loc.clone(), "property before any element"))?;
                let prop = if words.get(1) == Some(&"list") {
                    match (
                        words.get(2).and_then(|s| Scalar::parse(s)),
                        words.get(3).and_then(|s| Scalar::parse(s)),
                        words.get(4),
                    ) {
                        (Some(c), Some(i), Some(_)) => Property::List(c, i),
                        _ => return Err(err(loc, "malformed list property")),
                    }
                } else {
                    match (words.get(1).and_then(|s| Scalar::parse(s)), words.get(2)) {
                        (Some(t), Some(name)) => Property::Scalar(name.to_string(), t),
                        _ => return Err(err(loc, format!("malformed property '{line}'"))),
                    }
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(loc, format!("unknown header keyword '{other}'"))),
            None => return Err(err(loc, "empty header line")),
        }
    }
    let format = format.ok_or_else(|| err("header", "no format line"))?;
    let vertex_idx = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err("header", "no vertex element"))?;
    let vertex = &elements[vertex_idx];
    let find = |name: &str| vertex.props.iter().position(|p| matches!(p, Property::Scalar(n, _) if n == name));
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err("header", "vertex element lacks x/y/z")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let scalar_type = |i: usize| match &vertex.props[i] {
        Property::Scalar(_, t) => *t,
        Property::List(..) => unreachable!(),
    };

    let mut values = vec![0.0f64; vertex.props.len()];
    let mut out = Vec::with_capacity(vertex.count);
    let make_point = |values: &[f64]| PlyPoint {
        position: [values[ix] as f32, values[iy] as f32, values[iz] as f32],
        color: rgb.map(|c| std::array::from_fn(|k| (values[c[k]] * scalar_type(c[k]).color_scale()) as f32)),
    };

    match format {
        Format::Ascii => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| err(format!("line {}", line_no + 1), "body is not UTF-8"))?;
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for el in &elements[..=vertex_idx] {
                for _ in 0..el.count {
                    let (i, line) = lines
                        .next()
                        .ok_or_else(|| err(format!("line {}", line_no + 1), format!("file ends inside element '{}'", el.name)))?;
                    let loc = format!("line {}", line_no + 1 + i);
                    if el.name != "vertex" {
                        continue;
                    }
                    let mut words = line.split_whitespace();
                    for (k, p) in el.props.iter().enumerate() {
                        match p {
                            Property::Scalar(..) => {
                                let w = words.next().ok_or_else(|| err(loc.clone(), "too few values"))?;
                                values[k] = w.parse().map_err(|_| err(loc.clone(), format!("bad number '{w}'")))?;
                            }
                            Property::List(..) => {
                                let w = words.next().ok_or_else(|| err(loc.clone(), "too few values"))?;
                                let len: usize = w.parse().map_err(|_| err(loc.clone(), format!("bad list length '{w}'")))?;
                                for _ in 0..len {
                                    words.next().ok_or_else(|| err(loc.clone(), "list shorter than declared"))?;
                                }
                            }
                        }
                    }
                    out.push(make_point(&values));
                }
            }
        }
        Format::BinaryLe => {
            let body = &bytes[pos..];
            let mut at = 0usize;
            let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
                let s = body
                    .get(*at..*at + n)
                    .ok_or_else(|| err(format!("byte {}", pos + *at), "file truncated"))?;
                *at += n;
                Ok(s)
            };
            for el in &elements[..=vertex_idx] {
                for _ in 0..el.count {
                    for (k, p) in el.props.iter().enumerate() {
                        match p {
                            Property::Scalar(_, t) => {
                                let v = t.read(take(&mut at, t.size())?);
                                if el.name == "vertex" {
                                    values[k] = v;
                                }
                            }
                            Property::List(c, t) => {
                                let len = c.read(take(&mut at, c.size())?) as usize;
                                take(&mut at, len * t.size())?;
                            }
                        }
                    }
                    if el.name == "vertex" {
                        out.push(make_point(&values));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Binary little-endian PLY with `float` positions and, when every point
/// has one, `float` colors, which the reader takes as already in `[0, 1]`.
pub fn write_ply_bytes(points: &[PlyPoint]) -> Vec<u8> {
    let colored = !points.is_empty() && points.iter().all(|p| p.color.is_some());
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        points.len()
    );
    if colored {
        out.push_str("property float red\nproperty float green\nproperty float blue\n");
    }
    out.push_str("end_header\n");
    let mut out = out.into_bytes();
    for p in points {
        let color = if colored { p.color.as_ref().map(|c| &c[..]) } else { None };
        for v in p.position.iter().chain(color.into_iter().flatten()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_ply(path: impl AsRef<Path>, points: &[PlyPoint]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_ply_bytes(points)).map_err(|e| Error::io(path, e))
}
