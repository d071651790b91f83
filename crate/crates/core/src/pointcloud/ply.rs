//! PLY reader/writer (ASCII and binary little-endian).
//!
//! Readers accept any scalar property types and skip non-vertex elements,
//! including list properties. Writers emit `float` vertex properties only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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

/// Vertex properties read from a PLY file, one row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexTable {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn read_vertices(path: impl AsRef<Path>) -> Result<VertexTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_vertices(&bytes).map_err(|(field, reason)| Error::parse(path, field, reason))
}

type ParseResult<T> = std::result::Result<T, (String, String)>;

fn perr<T>(field: &str, reason: impl Into<String>) -> ParseResult<T> {
    Err((field.to_string(), reason.into()))
}

fn parse_vertices(bytes: &[u8]) -> ParseResult<VertexTable> {
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| ("header".to_string(), "missing end_header".to_string()))?;
    let mut body = end + marker.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| ("header".to_string(), "not UTF-8".to_string()))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return perr("magic", "file does not start with `ply`");
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return perr("format", format!("unsupported format `{other}`")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| ("element".to_string(), format!("bad count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, _] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return perr("property", format!("bad list types in `{line}`"));
                };
                match elements.last_mut() {
                    Some(e) => e.props.push(Property::List(ct, it)),
                    None => return perr("property", "property before element"),
                }
            }
            ["property", ty, name] => {
                let Some(ty) = Scalar::parse(ty) else {
                    return perr("property", format!("unknown type `{ty}`"));
                };
                match elements.last_mut() {
                    Some(e) => e.props.push(Property::Scalar(name.to_string(), ty)),
                    None => return perr("property", "property before element"),
                }
            }
            _ => return perr("header", format!("unrecognized line `{line}`")),
        }
    }
    let format = format.ok_or_else(|| ("format".to_string(), "missing format line".to_string()))?;
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| ("element".to_string(), "no vertex element".to_string()))?;
    let names: Vec<String> = elements[vertex]
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar(n, _) => Some(n.clone()),
            Property::List(..) => None,
        })
        .collect();

    let mut rows = Vec::new();
    match format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(&bytes[body..]).map_err(|_| ("body".to_string(), "not UTF-8".to_string()))?;
            let mut tokens = text.split_whitespace();
            let mut next = |field: &str| -> ParseResult<f64> {
                let t = tokens.next().ok_or_else(|| (field.to_string(), "unexpected end of data".to_string()))?;
                t.parse::<f64>().map_err(|_| (field.to_string(), format!("bad number `{t}`")))
            };
            for (ei, e) in elements.iter().enumerate().take(vertex + 1) {
                for _ in 0..e.count {
                    let mut row = Vec::new();
                    for p in &e.props {
                        match p {
                            Property::Scalar(n, _) => {
                                let v = next(n)?;
                                if ei == vertex {
                                    row.push(v);
                                }
                            }
                            Property::List(..) => {
                                let c = next("list")? as usize;
                                for _ in 0..c {
                                    next("list")?;
                                }
                            }
                        }
                    }
                    if ei == vertex {
                        rows.push(row);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            let mut pos = body;
            let mut take = |n: usize, field: &str| -> ParseResult<&[u8]> {
                if pos + n > bytes.len() {
                    return perr(field, "unexpected end of data");
                }
                pos += n;
                Ok(&bytes[pos - n..pos])
            };
            for (ei, e) in elements.iter().enumerate().take(vertex + 1) {
                for _ in 0..e.count {
                    let mut row = Vec::new();
                    for p in &e.props {
                        match p {
                            Property::Scalar(n, ty) => {
                                let v = ty.read_le(take(ty.size(), n)?);
                                if ei == vertex {
                                    row.push(v);
                                }
                            }
                            Property::List(ct, it) => {
                                let c = ct.read_le(take(ct.size(), "list")?) as usize;
                                take(c * it.size(), "list")?;
                            }
                        }
                    }
                    if ei == vertex {
                        rows.push(row);
                    }
                }
            }
        }
    }
    Ok(VertexTable { names, rows })
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let table = read_vertices(path)?;
    let cols: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|n| table.column(n).ok_or_else(|| Error::parse(path, *n, "missing vertex property")))
        .collect::<Result<_>>()?;
    PointCloud::new(table.rows.iter().map(|r| [r[cols[0]], r[cols[1]], r[cols[2]]]).collect())
}

/// Writes a vertex-only PLY whose properties are all `float`.
///
/// `values` is row-major with `names.len()` entries per vertex.
pub fn write_vertices(path: impl AsRef<Path>, names: &[&str], values: &[f64], format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    if names.is_empty() || values.len() % names.len() != 0 {
        return Err(Error::invalid("vertex table width mismatch"));
    }
    let count = values.len() / names.len();
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    let _ = write!(out, "ply\nformat {fmt} 1.0\nelement vertex {count}\n");
    for n in names {
        let _ = writeln!(out, "property float {n}");
    }
    out.extend_from_slice(b"end_header\n");
    match format {
        PlyFormat::Ascii => {
            for row in values.chunks(names.len()) {
                let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_ply(path: impl AsRef<Path>, pc: &PointCloud, format: PlyFormat) -> Result<()> {
    write_vertices(path, &["x", "y", "z"], &pc.flat(), format)
}
