//! Minimal PLY reader and writer for point positions.
//!
//! Reads `ascii` and `binary_little_endian` files. Only `x`, `y`, `z` of the
//! `vertex` element are kept; every other property and element is skipped.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::sparse::Coords;

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
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Format(format!("unknown PLY type `{name}`"))),
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
            Scalar::I8 => f64::from(b[0] as i8),
            Scalar::U8 => f64::from(b[0]),
            Scalar::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            Scalar::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            Scalar::I32 => f64::from(i32::from_le_bytes(b[..4].try_into().unwrap())),
            Scalar::U32 => f64::from(u32::from_le_bytes(b[..4].try_into().unwrap())),
            Scalar::F32 => f64::from(f32::from_le_bytes(b[..4].try_into().unwrap())),
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug)]
enum Property {
    Scalar(String, Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn header_line<R: BufRead>(r: &mut R) -> Result<String> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(Error::Format("PLY header ends early".into()));
    }
    Ok(line.trim().to_string())
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(PlyFormat, Vec<Element>)> {
    if header_line(r)? != "ply" {
        return Err(Error::Format("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = header_line(r)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Format(format!("unsupported PLY format `{other}`"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .properties
                .push(Property::List {
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                }),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .properties
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(Error::Format(format!("unexpected header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| Error::Format("missing format line".into()))?;
    Ok((format, elements))
}

fn xyz_slots(e: &Element) -> Result<[usize; 3]> {
    let find = |axis: &str| {
        e.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == axis))
            .ok_or_else(|| Error::Format(format!("vertex element lacks `{axis}`")))
    };
    Ok([find("x")?, find("y")?, find("z")?])
}

fn read_exact_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("PLY body ends early".into()))?;
    Ok(buf)
}

/// Reads the vertex positions of a PLY stream.
pub fn read_ply<R: BufRead>(mut r: R) -> Result<Vec<[f64; 3]>> {
    let (format, elements) = parse_header(&mut r)?;
    let vertex_index = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Format("no vertex element".into()))?;
    let slots = xyz_slots(&elements[vertex_index])?;
    let mut points = Vec::with_capacity(elements[vertex_index].count.min(1 << 24));

    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            r.read_to_string(&mut body)?;
            let mut tokens = body.split_whitespace();
            let mut next = || -> Result<f64> {
                let t = tokens.next().ok_or_else(|| Error::Format("PLY body ends early".into()))?;
                t.parse().map_err(|_| Error::Format(format!("bad number `{t}`")))
            };
            for (ei, e) in elements.iter().enumerate().take(vertex_index + 1) {
                for _ in 0..e.count {
                    let mut xyz = [0.0; 3];
                    for (pi, p) in e.properties.iter().enumerate() {
                        match p {
                            Property::Scalar(..) => {
                                let v = next()?;
                                if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                    xyz[axis] = v;
                                }
                            }
                            Property::List { .. } => {
                                let n = next()? as usize;
                                for _ in 0..n {
                                    next()?;
                                }
                            }
                        }
                    }
                    if ei == vertex_index {
                        points.push(xyz);
                    }
                }
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for (ei, e) in elements.iter().enumerate().take(vertex_index + 1) {
                let fixed: Option<Vec<Scalar>> = e
                    .properties
                    .iter()
                    .map(|p| match p {
                        Property::Scalar(_, s) => Some(*s),
                        Property::List { .. } => None,
                    })
                    .collect();
                for _ in 0..e.count {
                    if let Some(types) = &fixed {
                        let size: usize = types.iter().map(|t| t.size()).sum();
                        let row = read_exact_vec(&mut r, size)?;
                        if ei == vertex_index {
                            let mut offset = 0;
                            let mut xyz = [0.0; 3];
                            for (pi, t) in types.iter().enumerate() {
                                if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                    xyz[axis] = t.read_le(&row[offset..]);
                                }
                                offset += t.size();
                            }
                            points.push(xyz);
                        }
                    } else {
                        let mut xyz = [0.0; 3];
                        for (pi, p) in e.properties.iter().enumerate() {
                            match p {
                                Property::Scalar(_, t) => {
                                    let v = t.read_le(&read_exact_vec(&mut r, t.size())?);
                                    if let Some(axis) = slots.iter().position(|&s| s == pi) {
                                        xyz[axis] = v;
                                    }
                                }
                                Property::List { count, item } => {
                                    let n = count.read_le(&read_exact_vec(&mut r, count.size())?) as usize;
                                    read_exact_vec(&mut r, n * item.size())?;
                                }
                            }
                        }
                        if ei == vertex_index {
                            points.push(xyz);
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

fn write_header<W: Write>(w: &mut W, format: PlyFormat, n: usize, ty: &str) -> Result<()> {
    let f = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(w, "ply\nformat {f} 1.0\nelement vertex {n}\n")?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property {ty} {axis}")?;
    }
    writeln!(w, "end_header")?;
    Ok(())
}

/// Writes real-valued points as `double` properties.
pub fn write_ply<W: Write>(mut w: W, points: &[[f64; 3]], format: PlyFormat) -> Result<()> {
    write_header(&mut w, format, points.len(), "double")?;
    for p in points {
        match format {
            // `{:?}` prints the shortest string that parses back exactly.
            PlyFormat::Ascii => writeln!(w, "{:?} {:?} {:?}", p[0], p[1], p[2])?,
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Writes voxel coordinates as `int` properties.
pub fn write_ply_coords<W: Write>(mut w: W, coords: &Coords, format: PlyFormat) -> Result<()> {
    write_header(&mut w, format, coords.len(), "int")?;
    for c in coords.iter() {
        match format {
            PlyFormat::Ascii => writeln!(w, "{} {} {}", c.x, c.y, c.z)?,
            PlyFormat::BinaryLittleEndian => {
                for v in c.to_array() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

/// Interprets integral points as voxel coordinates.
pub fn points_to_coords(points: &[[f64; 3]]) -> Result<Coords> {
    points
        .iter()
        .map(|p| {
            if p.iter().all(|v| v.fract() == 0.0 && v.abs() < i32::MAX as f64) {
                Ok(crate::sparse::Coord::new(p[0] as i32, p[1] as i32, p[2] as i32))
            } else {
                Err(Error::Format(format!("point {p:?} is not on the voxel grid")))
            }
        })
        .collect()
}
