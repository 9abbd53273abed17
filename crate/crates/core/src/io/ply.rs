//! PLY reading (ascii and binary little-endian) and ascii writing.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "ply",
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
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
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLe,
}

/// Vertices, triangulated faces and any extra scalar vertex properties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Scalar vertex properties other than `x`, `y`, `z`, keyed by name.
    pub vertex_properties: HashMap<String, Vec<f64>>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body_offset: usize,
    lines: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut lines = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| err(lines + 1, "header is not terminated by end_header"))?;
        let raw = &bytes[pos..pos + end];
        pos += end + 1;
        lines += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| err(lines, "header is not valid text"))?
            .trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("ply") if lines == 1 => {}
            _ if lines == 1 => return Err(err(1, "missing 'ply' magic")),
            Some("format") => {
                encoding = Some(match tok.next() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLe,
                    Some(other) => return Err(err(lines, format!("unsupported format {other:?}"))),
                    None => return Err(err(lines, "format line without encoding")),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| err(lines, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| err(lines, "element without a valid count"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| err(lines, "property before any element"))?;
                let first = tok.next().ok_or_else(|| err(lines, "empty property"))?;
                let prop = if first == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    let name = tok.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(name)) => Property::List {
                            name: name.to_string(),
                            count,
                            item,
                        },
                        _ => return Err(err(lines, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(first)
                        .ok_or_else(|| err(lines, format!("unknown property type {first:?}")))?;
                    let name = tok.next().ok_or_else(|| err(lines, "property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                elem.props.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(err(lines, format!("unexpected header keyword {other:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| err(lines, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body_offset: pos,
        lines,
    })
}

/// Raw values of one element instance: scalars, then list contents.
struct Record {
    scalars: Vec<f64>,
    lists: Vec<Vec<f64>>,
}

trait RecordSource {
    fn next_record(&mut self, elem: &Element) -> Result<Record>;
}

struct AsciiSource<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    first_line: usize,
}

impl RecordSource for AsciiSource<'_> {
    fn next_record(&mut self, elem: &Element) -> Result<Record> {
        let (idx, line) = loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some(x) => break x,
                None => return Err(err(self.first_line, format!("file ends inside element {:?}", elem.name))),
            }
        };
        let line_no = self.first_line + idx;
        let mut tok = line.split_whitespace();
        let mut next = |what: &str| -> Result<f64> {
            let t = tok
                .next()
                .ok_or_else(|| err(line_no, format!("missing value for {what}")))?;
            t.parse::<f64>()
                .map_err(|_| err(line_no, format!("bad number {t:?} for {what}")))
        };
        let mut rec = Record {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        for p in &elem.props {
            match p {
                Property::Scalar { name, .. } => rec.scalars.push(next(name)?),
                Property::List { name, .. } => {
                    let n = next(name)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(err(line_no, format!("bad list length {n}")));
                    }
                    let items = (0..n as usize).map(|_| next(name)).collect::<Result<Vec<_>>>()?;
                    rec.lists.push(items);
                }
            }
        }
        Ok(rec)
    }
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl BinarySource<'_> {
    fn take(&mut self, ty: Scalar, elem: &str) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(err(
                self.line,
                format!("binary body truncated at byte {} inside element {elem:?}", self.pos),
            ));
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

impl RecordSource for BinarySource<'_> {
    fn next_record(&mut self, elem: &Element) -> Result<Record> {
        let mut rec = Record {
            scalars: Vec::new(),
            lists: Vec::new(),
        };
        for p in &elem.props {
            match p {
                Property::Scalar { ty, .. } => rec.scalars.push(self.take(*ty, &elem.name)?),
                Property::List { count, item, .. } => {
                    let n = self.take(*count, &elem.name)?;
                    let items = (0..n as usize)
                        .map(|_| self.take(*item, &elem.name))
                        .collect::<Result<Vec<_>>>()?;
                    rec.lists.push(items);
                }
            }
        }
        Ok(rec)
    }
}

/// Parses a PLY file. Face lists are fanned from their first corner, so quads
/// split along the (0,2) diagonal.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    let mut source: Box<dyn RecordSource> = match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| err(header.lines + 1, "ascii body is not valid text"))?;
            Box::new(AsciiSource {
                lines: text.lines().enumerate(),
                first_line: header.lines + 1,
            })
        }
        Encoding::BinaryLe => Box::new(BinarySource {
            bytes: body,
            pos: 0,
            line: header.lines + 1,
        }),
    };

    let mut data = PlyData::default();
    for elem in &header.elements {
        match elem.name.as_str() {
            "vertex" => read_vertices(elem, source.as_mut(), &mut data, header.lines)?,
            "face" => read_faces(elem, source.as_mut(), &mut data, header.lines)?,
            _ => {
                for _ in 0..elem.count {
                    source.next_record(elem)?;
                }
            }
        }
    }
    let n = data.vertices.len();
    if let Some(bad) = data.faces.iter().flatten().find(|&&v| v >= n) {
        return Err(err(header.lines, format!("face index {bad} out of range for {n} vertices")));
    }
    Ok(data)
}

fn read_vertices(elem: &Element, src: &mut dyn RecordSource, data: &mut PlyData, line: usize) -> Result<()> {
    let scalar_names: Vec<&str> = elem
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { name, .. } => Some(name.as_str()),
            Property::List { .. } => None,
        })
        .collect();
    let pos_of = |axis: &str| {
        scalar_names
            .iter()
            .position(|&n| n == axis)
            .ok_or_else(|| err(line, format!("vertex element lacks property {axis:?}")))
    };
    let (ix, iy, iz) = (pos_of("x")?, pos_of("y")?, pos_of("z")?);
    let extras: Vec<(usize, &str)> = scalar_names
        .iter()
        .enumerate()
        .filter(|(_, n)| !matches!(**n, "x" | "y" | "z"))
        .map(|(i, n)| (i, *n))
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(elem.count); extras.len()];
    data.vertices.reserve(elem.count);
    for _ in 0..elem.count {
        let rec = src.next_record(elem)?;
        data.vertices.push([rec.scalars[ix], rec.scalars[iy], rec.scalars[iz]]);
        for (col, &(i, _)) in columns.iter_mut().zip(&extras) {
            col.push(rec.scalars[i]);
        }
    }
    for ((_, name), col) in extras.into_iter().zip(columns) {
        data.vertex_properties.insert(name.to_string(), col);
    }
    Ok(())
}

fn read_faces(elem: &Element, src: &mut dyn RecordSource, data: &mut PlyData, line: usize) -> Result<()> {
    let list_pos = elem
        .props
        .iter()
        .filter(|p| matches!(p, Property::List { .. }))
        .position(|p| matches!(p.name(), "vertex_indices" | "vertex_index"))
        .ok_or_else(|| err(line, "face element lacks a vertex_indices list"))?;
    for _ in 0..elem.count {
        let rec = src.next_record(elem)?;
        let corners = &rec.lists[list_pos];
        if corners.len() < 3 {
            return Err(err(line, "face with fewer than 3 vertices"));
        }
        if corners.iter().any(|&c| c < 0.0) {
            return Err(err(line, "negative face index"));
        }
        for k in 1..corners.len() - 1 {
            data.faces.push([corners[0] as usize, corners[k] as usize, corners[k + 1] as usize]);
        }
    }
    Ok(())
}

/// Ascii PLY with double coordinates and an optional float `deviation` per vertex.
pub fn write_ply_ascii(vertices: &[Vec3], faces: &[[usize; 3]], deviation: Option<&[f64]>) -> String {
    let mut out = String::with_capacity(64 * vertices.len() + 24 * faces.len() + 256);
    out.push_str("ply\nformat ascii 1.0\ncomment deviations in mm along the nominal surface normal\n");
    let _ = writeln!(out, "element vertex {}", vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if deviation.is_some() {
        out.push_str("property float deviation\n");
    }
    let _ = writeln!(out, "element face {}", faces.len());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, p) in vertices.iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(d) = deviation {
            let _ = write!(out, " {}", d[i] as f32);
        }
        out.push('\n');
    }
    for f in faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}
