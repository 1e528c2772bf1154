//! Point cloud and mesh files: XYZ, PLY (ascii and binary little endian) and OBJ.
//!
//! Coordinates are written as `f32`; readers accept any numeric PLY type.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Unit;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, TriangleMesh, UnitVector3, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Xyz,
    /// ASCII PLY on write; either encoding is accepted on read.
    Ply,
    /// binary_little_endian PLY on write; either encoding is accepted on read.
    PlyBinary,
    Obj,
}

impl Format {
    /// Infer the format from a file extension (`.xyz`, `.ply`, `.obj`).
    pub fn from_path(path: impl AsRef<Path>) -> Result<Format> {
        let ext = path
            .as_ref()
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "xyz" | "txt" | "pts" => Ok(Format::Xyz),
            "ply" => Ok(Format::Ply),
            "obj" => Ok(Format::Obj),
            other => Err(Error::UnsupportedFormat(format!("extension '{other}'"))),
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" => Ok(Format::Xyz),
            "ply" | "ply-ascii" => Ok(Format::Ply),
            "ply-binary" | "plyb" => Ok(Format::PlyBinary),
            "obj" => Ok(Format::Obj),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

pub fn read_points(path: impl AsRef<Path>, format: Format) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    read_points_from(&mut r, format)
}

pub fn write_points(path: impl AsRef<Path>, format: Format, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_points_to(&mut w, format, cloud)?;
    w.flush()?;
    Ok(())
}

pub fn read_mesh(path: impl AsRef<Path>, format: Format) -> Result<TriangleMesh> {
    let mut r = BufReader::new(File::open(path)?);
    read_mesh_from(&mut r, format)
}

pub fn write_mesh(path: impl AsRef<Path>, format: Format, mesh: &TriangleMesh) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mesh_to(&mut w, format, mesh)?;
    w.flush()?;
    Ok(())
}

pub fn read_points_from<R: BufRead>(r: &mut R, format: Format) -> Result<PointCloud> {
    let data = match format {
        Format::Xyz => parse_xyz(r)?,
        Format::Ply | Format::PlyBinary => parse_ply(r)?,
        Format::Obj => parse_obj(r)?,
    };
    data.into_cloud()
}

pub fn read_mesh_from<R: BufRead>(r: &mut R, format: Format) -> Result<TriangleMesh> {
    let data = match format {
        Format::Xyz => return Err(Error::UnsupportedFormat("xyz files carry no faces".into())),
        Format::Ply | Format::PlyBinary => parse_ply(r)?,
        Format::Obj => parse_obj(r)?,
    };
    TriangleMesh::new(data.positions, data.faces)
}

pub fn write_points_to<W: Write>(w: &mut W, format: Format, cloud: &PointCloud) -> Result<()> {
    match format {
        Format::Xyz => {
            for (i, p) in cloud.points().iter().enumerate() {
                write!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
                if let Some(n) = cloud.normals() {
                    let n = n[i];
                    write!(w, " {} {} {}", n.x as f32, n.y as f32, n.z as f32)?;
                }
                writeln!(w)?;
            }
            Ok(())
        }
        Format::Ply => write_ply(w, false, cloud.points(), cloud.normals(), &[]),
        Format::PlyBinary => write_ply(w, true, cloud.points(), cloud.normals(), &[]),
        Format::Obj => write_obj(w, cloud.points(), cloud.normals(), &[]),
    }
}

pub fn write_mesh_to<W: Write>(w: &mut W, format: Format, mesh: &TriangleMesh) -> Result<()> {
    match format {
        Format::Xyz => Err(Error::UnsupportedFormat("xyz files carry no faces".into())),
        Format::Ply => write_ply(w, false, &mesh.vertices, None, &mesh.faces),
        Format::PlyBinary => write_ply(w, true, &mesh.vertices, None, &mesh.faces),
        Format::Obj => write_obj(w, &mesh.vertices, None, &mesh.faces),
    }
}

#[derive(Default)]
struct Parsed {
    positions: Vec<Point3>,
    normals: Vec<Vector3>,
    faces: Vec<[u32; 3]>,
}

impl Parsed {
    fn into_cloud(self) -> Result<PointCloud> {
        if self.positions.is_empty() {
            return Err(Error::EmptyInput);
        }
        if !self.normals.is_empty() && self.normals.len() == self.positions.len() {
            let normals = self
                .normals
                .iter()
                .enumerate()
                .map(|(i, n)| unit(*n, || format!("vertex {i}")))
                .collect::<Result<Vec<_>>>()?;
            PointCloud::with_normals(self.positions, normals)
        } else {
            PointCloud::new(self.positions)
        }
    }
}

fn unit(n: Vector3, location: impl FnOnce() -> String) -> Result<UnitVector3> {
    Unit::try_new(n, 0.0)
        .filter(|u| u.iter().all(|c| c.is_finite()))
        .ok_or_else(|| Error::parse(location(), "normal has zero length"))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(format!("line {line}"), format!("invalid number '{tok}'")))?;
    if !v.is_finite() {
        return Err(Error::parse(format!("line {line}"), format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn parse_xyz<R: BufRead>(r: &mut R) -> Result<Parsed> {
    let mut out = Parsed::default();
    let mut with_normals: Option<bool> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let vals = content
            .split_whitespace()
            .map(|t| parse_f64(t, lineno))
            .collect::<Result<Vec<f64>>>()?;
        let has_n = match vals.len() {
            3 => false,
            6 => true,
            k => {
                return Err(Error::parse(
                    format!("line {lineno}"),
                    format!("expected 3 or 6 values, found {k}"),
                ))
            }
        };
        if *with_normals.get_or_insert(has_n) != has_n {
            return Err(Error::parse(
                format!("line {lineno}"),
                "inconsistent column count (normals on some lines only)",
            ));
        }
        out.positions.push(Point3::new(vals[0], vals[1], vals[2]));
        if has_n {
            out.normals.push(Vector3::new(vals[3], vals[4], vals[5]));
        }
    }
    Ok(out)
}

fn obj_index(tok: &str, count: usize, line: usize) -> Result<u32> {
    let first = tok.split('/').next().unwrap_or("");
    let err = || Error::parse(format!("line {line}"), format!("invalid face index '{tok}'"));
    let raw: i64 = first.parse().map_err(|_| err())?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(err());
    };
    if idx < 0 || idx as usize >= count {
        return Err(Error::parse(
            format!("line {line}"),
            format!("face index {raw} out of range (have {count} vertices)"),
        ));
    }
    Ok(idx as u32)
}

fn parse_obj<R: BufRead>(r: &mut R) -> Result<Parsed> {
    let mut out = Parsed::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let content = line.split('#').next().unwrap_or("");
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let v = toks.take(3).map(|t| parse_f64(t, lineno)).collect::<Result<Vec<f64>>>()?;
                if v.len() < 3 {
                    return Err(Error::parse(format!("line {lineno}"), "vertex needs 3 coordinates"));
                }
                out.positions.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("vn") => {
                let v = toks.take(3).map(|t| parse_f64(t, lineno)).collect::<Result<Vec<f64>>>()?;
                if v.len() < 3 {
                    return Err(Error::parse(format!("line {lineno}"), "normal needs 3 components"));
                }
                out.normals.push(Vector3::new(v[0], v[1], v[2]));
            }
            Some("f") => {
                let idx = toks
                    .map(|t| obj_index(t, out.positions.len(), lineno))
                    .collect::<Result<Vec<u32>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(format!("line {lineno}"), "face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    let f = [idx[0], idx[k], idx[k + 1]];
                    if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                        return Err(Error::parse(format!("line {lineno}"), "face repeats a vertex"));
                    }
                    out.faces.push(f);
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

fn write_obj<W: Write>(
    w: &mut W,
    points: &[Point3],
    normals: Option<&[UnitVector3]>,
    faces: &[[u32; 3]],
) -> Result<()> {
    for p in points {
        writeln!(w, "v {} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
    }
    if let Some(ns) = normals {
        for n in ns {
            writeln!(w, "vn {} {} {}", n.x as f32, n.y as f32, n.z as f32)?;
        }
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<PlyType> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn read_binary<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            PlyType::I8 => r.read_i8()? as f64,
            PlyType::U8 => r.read_u8()? as f64,
            PlyType::I16 => r.read_i16::<LittleEndian>()? as f64,
            PlyType::U16 => r.read_u16::<LittleEndian>()? as f64,
            PlyType::I32 => r.read_i32::<LittleEndian>()? as f64,
            PlyType::U32 => r.read_u32::<LittleEndian>()? as f64,
            PlyType::F32 => r.read_f32::<LittleEndian>()? as f64,
            PlyType::F64 => r.read_f64::<LittleEndian>()?,
        })
    }

    fn size(self) -> u64 {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar(PlyType, String),
    List(PlyType, PlyType, String),
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlyEncoding {
    Ascii,
    BinaryLe,
}

/// Reader wrapper that counts consumed bytes for error locations.
struct Counting<'a, R> {
    inner: &'a mut R,
    pos: u64,
}

impl<R: Read> Read for Counting<'_, R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos += n as u64;
        Ok(n)
    }
}

fn parse_ply<R: BufRead>(r: &mut R) -> Result<Parsed> {
    let mut line_no = 0usize;
    let mut bytes = 0u64;
    let mut read_line = |r: &mut R, line_no: &mut usize| -> Result<String> {
        let mut buf = Vec::new();
        let n = r.read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Err(Error::parse(format!("line {}", *line_no + 1), "unexpected end of header"));
        }
        bytes += n as u64;
        *line_no += 1;
        String::from_utf8(buf)
            .map(|s| s.trim_end().to_string())
            .map_err(|_| Error::parse(format!("line {}", *line_no), "header is not valid UTF-8"))
    };

    if read_line(r, &mut line_no)? != "ply" {
        return Err(Error::parse("line 1", "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let line = read_line(r, &mut line_no)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let loc = || format!("line {line_no}");
        match toks.first().copied() {
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyEncoding::Ascii,
                    Some("binary_little_endian") => PlyEncoding::BinaryLe,
                    Some(other) => {
                        return Err(Error::UnsupportedFormat(format!("PLY encoding '{other}'")))
                    }
                    None => return Err(Error::parse(loc(), "format line without encoding")),
                })
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::parse(loc(), "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| Error::parse(loc(), format!("invalid element count '{}'", toks[2])))?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(loc(), "property before any element"))?;
                let bad_type = |t: &str| Error::parse(format!("line {line_no}"), format!("unknown type '{t}'"));
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(Error::parse(loc(), "malformed list property"));
                    }
                    PlyProperty::List(
                        PlyType::parse(toks[2]).ok_or_else(|| bad_type(toks[2]))?,
                        PlyType::parse(toks[3]).ok_or_else(|| bad_type(toks[3]))?,
                        toks[4].to_string(),
                    )
                } else {
                    if toks.len() != 3 {
                        return Err(Error::parse(loc(), "malformed property line"));
                    }
                    PlyProperty::Scalar(
                        PlyType::parse(toks[1]).ok_or_else(|| bad_type(toks[1]))?,
                        toks[2].to_string(),
                    )
                };
                elem.properties.push(prop);
            }
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(Error::parse(loc(), format!("unexpected header keyword '{other}'"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::parse("header", "missing format line"))?;

    let mut out = Parsed::default();
    match encoding {
        PlyEncoding::Ascii => {
            let mut lines = r.lines();
            for elem in &elements {
                for item in 0..elem.count {
                    let line = loop {
                        line_no += 1;
                        match lines.next() {
                            Some(l) => {
                                let l = l?;
                                if !l.trim().is_empty() {
                                    break l;
                                }
                            }
                            None => {
                                return Err(Error::parse(
                                    format!("line {line_no}"),
                                    format!("unexpected end of file in element '{}' item {item}", elem.name),
                                ))
                            }
                        }
                    };
                    let mut toks = line.split_whitespace();
                    let mut next = || -> Result<f64> {
                        let t = toks.next().ok_or_else(|| {
                            Error::parse(format!("line {line_no}"), "too few values")
                        })?;
                        parse_f64(t, line_no)
                    };
                    read_item(elem, &mut next, &mut out, || format!("line {line_no}"))?;
                }
            }
        }
        PlyEncoding::BinaryLe => {
            let mut cr = Counting { inner: r, pos: bytes };
            for elem in &elements {
                for _ in 0..elem.count {
                    let start = cr.pos;
                    let mut next_typed = |t: PlyType, cr: &mut Counting<'_, R>| -> Result<f64> {
                        t.read_binary(cr).map_err(|e| {
                            Error::parse(format!("byte {}", cr.pos), format!("truncated binary data: {e}"))
                        })
                    };
                    read_item_binary(elem, &mut cr, &mut next_typed, &mut out, start)?;
                }
            }
        }
    }
    Ok(out)
}

fn list_to_faces(idx: &[f64], out: &mut Parsed, loc: impl Fn() -> String) -> Result<()> {
    if idx.len() < 3 {
        return Err(Error::parse(loc(), "face needs at least 3 vertices"));
    }
    let n = out.positions.len() as f64;
    let mut ids = Vec::with_capacity(idx.len());
    for &v in idx {
        if v < 0.0 || v >= n || v.fract() != 0.0 {
            return Err(Error::parse(loc(), format!("face index {v} out of range")));
        }
        ids.push(v as u32);
    }
    for k in 1..ids.len() - 1 {
        let f = [ids[0], ids[k], ids[k + 1]];
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::parse(loc(), "face repeats a vertex"));
        }
        out.faces.push(f);
    }
    Ok(())
}

#[derive(Default)]
struct VertexSlots {
    xyz: [Option<f64>; 3],
    n: [Option<f64>; 3],
}

impl VertexSlots {
    fn set(&mut self, name: &str, v: f64) {
        match name {
            "x" => self.xyz[0] = Some(v),
            "y" => self.xyz[1] = Some(v),
            "z" => self.xyz[2] = Some(v),
            "nx" => self.n[0] = Some(v),
            "ny" => self.n[1] = Some(v),
            "nz" => self.n[2] = Some(v),
            _ => {}
        }
    }

    fn push(self, out: &mut Parsed, loc: impl Fn() -> String) -> Result<()> {
        match self.xyz {
            [Some(x), Some(y), Some(z)] => out.positions.push(Point3::new(x, y, z)),
            _ => return Err(Error::parse(loc(), "vertex lacks x/y/z")),
        }
        if let [Some(x), Some(y), Some(z)] = self.n {
            out.normals.push(Vector3::new(x, y, z));
        }
        Ok(())
    }
}

fn is_face_list(elem: &PlyElement, name: &str) -> bool {
    elem.name == "face" && (name == "vertex_indices" || name == "vertex_index")
}

fn read_item(
    elem: &PlyElement,
    next: &mut dyn FnMut() -> Result<f64>,
    out: &mut Parsed,
    loc: impl Fn() -> String,
) -> Result<()> {
    let mut slots = VertexSlots::default();
    for prop in &elem.properties {
        match prop {
            PlyProperty::Scalar(_, name) => {
                let v = next()?;
                if elem.name == "vertex" {
                    slots.set(name, v);
                }
            }
            PlyProperty::List(_, _, name) => {
                let count = next()?;
                if count < 0.0 || count.fract() != 0.0 {
                    return Err(Error::parse(loc(), format!("invalid list length {count}")));
                }
                let vals = (0..count as usize).map(|_| next()).collect::<Result<Vec<f64>>>()?;
                if is_face_list(elem, name) {
                    list_to_faces(&vals, out, &loc)?;
                }
            }
        }
    }
    if elem.name == "vertex" {
        slots.push(out, &loc)?;
    }
    Ok(())
}

fn read_item_binary<R: Read>(
    elem: &PlyElement,
    cr: &mut Counting<'_, R>,
    next: &mut dyn FnMut(PlyType, &mut Counting<'_, R>) -> Result<f64>,
    out: &mut Parsed,
    start: u64,
) -> Result<()> {
    let loc = || format!("byte {start}");
    let mut slots = VertexSlots::default();
    for prop in &elem.properties {
        match prop {
            PlyProperty::Scalar(t, name) => {
                let v = next(*t, cr)?;
                if elem.name == "vertex" {
                    slots.set(name, v);
                }
            }
            PlyProperty::List(ct, it, name) => {
                let count = next(*ct, cr)?;
                if count < 0.0 {
                    return Err(Error::parse(loc(), format!("invalid list length {count}")));
                }
                if is_face_list(elem, name) {
                    let vals = (0..count as usize)
                        .map(|_| next(*it, cr))
                        .collect::<Result<Vec<f64>>>()?;
                    list_to_faces(&vals, out, loc)?;
                } else {
                    let skip = count as u64 * it.size();
                    std::io::copy(&mut (&mut *cr).take(skip), &mut std::io::sink())?;
                }
            }
        }
    }
    if elem.name == "vertex" {
        slots.push(out, loc)?;
    }
    Ok(())
}

fn write_ply<W: Write>(
    w: &mut W,
    binary: bool,
    points: &[Point3],
    normals: Option<&[UnitVector3]>,
    faces: &[[u32; 3]],
) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(
        w,
        "format {} 1.0",
        if binary { "binary_little_endian" } else { "ascii" }
    )?;
    writeln!(w, "element vertex {}", points.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property float {c}")?;
    }
    if normals.is_some() {
        for c in ["nx", "ny", "nz"] {
            writeln!(w, "property float {c}")?;
        }
    }
    if !faces.is_empty() {
        writeln!(w, "element face {}", faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in points.iter().enumerate() {
        let mut vals = vec![p.x as f32, p.y as f32, p.z as f32];
        if let Some(ns) = normals {
            vals.extend([ns[i].x as f32, ns[i].y as f32, ns[i].z as f32]);
        }
        if binary {
            for v in vals {
                w.write_f32::<LittleEndian>(v)?;
            }
        } else {
            let s: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", s.join(" "))?;
        }
    }
    for f in faces {
        if binary {
            w.write_u8(3)?;
            for &v in f {
                w.write_i32::<LittleEndian>(v as i32)?;
            }
        } else {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
        }
    }
    Ok(())
}
