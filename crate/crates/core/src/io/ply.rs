use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

/// Vertices and (triangulated) faces of a PLY file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Result<Scalar> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::Ply(format!("unknown property type {s:?}"))),
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<Element>, usize)> {
    let end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| Error::Ply("missing end_header".into()))?;
    let mut body = end + 10;
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Ply("header is not UTF-8".into()))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::Ply("missing ply magic".into()));
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
                    other => return Err(Error::Ply(format!("unsupported format {other}"))),
                })
            }
            ["element", name, n] => elements.push(Element {
                name: name.to_string(),
                count: n.parse().map_err(|_| Error::Ply(format!("bad element count {n:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Ply("property before element".into()))?
                .props
                .push(Property::List(name.to_string(), Scalar::parse(c)?, Scalar::parse(i)?)),
            ["property", t, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Ply("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(t)?)),
            _ => return Err(Error::Ply(format!("unrecognized header line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| Error::Ply("missing format line".into()))?;
    Ok((format, elements, body))
}

// Yields numbers from either an ASCII token stream or little-endian bytes.
enum Cursor<'a> {
    Ascii(std::str::SplitAsciiWhitespace<'a>),
    Binary(&'a [u8]),
}

impl Cursor<'_> {
    fn next(&mut self, t: Scalar) -> Result<f64> {
        match self {
            Cursor::Ascii(it) => {
                let tok = it.next().ok_or_else(|| Error::Ply("unexpected end of data".into()))?;
                let bad = |_| Error::Ply(format!("bad number {tok:?}"));
                // Parse at the declared width so float values round-trip.
                match t {
                    Scalar::F32 => tok.parse::<f32>().map(f64::from).map_err(bad),
                    _ => tok.parse::<f64>().map_err(bad),
                }
            }
            Cursor::Binary(b) => {
                let n = t.size();
                if b.len() < n {
                    return Err(Error::Ply("unexpected end of data".into()));
                }
                let v = t.read_le(b);
                *b = &b[n..];
                Ok(v)
            }
        }
    }
}

/// Reads vertex positions and faces (polygons are fan-triangulated).
pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = fs::read(path).map_err(|e| super::load_err(path, e.to_string()))?;
    let (format, elements, body) = parse_header(&bytes)?;
    let mut cur = match format {
        PlyFormat::Ascii => Cursor::Ascii(
            std::str::from_utf8(&bytes[body..])
                .map_err(|_| Error::Ply("ascii body is not UTF-8".into()))?
                .split_ascii_whitespace(),
        ),
        PlyFormat::BinaryLittleEndian => Cursor::Binary(&bytes[body..]),
    };
    let mut out = PlyData::default();
    let mut seen_vertex = false;
    for el in &elements {
        let axis = |name: &str| match name {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if el.name == "vertex" {
            seen_vertex = true;
            let mut have = [false; 3];
            for p in &el.props {
                if let Property::Scalar(n, _) = p {
                    if let Some(a) = axis(n) {
                        have[a] = true;
                    }
                }
            }
            if have != [true; 3] {
                return Err(Error::Ply("vertex element lacks x, y or z".into()));
            }
        }
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for p in &el.props {
                match p {
                    Property::Scalar(name, t) => {
                        let v = cur.next(*t)?;
                        if el.name == "vertex" {
                            if let Some(a) = axis(name) {
                                xyz[a] = v;
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let n = cur.next(*ct)? as usize;
                        let mut idx = Vec::with_capacity(n);
                        for _ in 0..n {
                            idx.push(cur.next(*it)?);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..n.saturating_sub(1) {
                                out.faces.push([idx[0] as u32, idx[k] as u32, idx[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                out.vertices.push(Vec3::from_array(xyz));
            }
        }
    }
    if !seen_vertex {
        return Err(Error::Ply("no vertex element".into()));
    }
    let nv = out.vertices.len() as u32;
    if out.faces.iter().flatten().any(|&i| i >= nv) {
        return Err(Error::Ply("face index out of range".into()));
    }
    Ok(out)
}

/// Writes vertices and optional triangles. Coordinates are stored as
/// `float` when every value survives the f32 round trip, else `double`.
pub fn write_ply(path: &Path, vertices: &[Vec3], faces: &[[u32; 3]], format: PlyFormat) -> Result<()> {
    let single = vertices
        .iter()
        .flat_map(|v| v.to_array())
        .all(|c| (c as f32) as f64 == c || c.is_nan());
    let ty = if single { "float" } else { "double" };
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(out, "ply\nformat {fmt} 1.0\nelement vertex {}\n", vertices.len())?;
    for a in ["x", "y", "z"] {
        writeln!(out, "property {ty} {a}")?;
    }
    if !faces.is_empty() {
        write!(out, "element face {}\nproperty list uchar int vertex_indices\n", faces.len())?;
    }
    out.extend_from_slice(b"end_header\n");
    match format {
        PlyFormat::Ascii => {
            for v in vertices {
                if single {
                    writeln!(out, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
                } else {
                    writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
                }
            }
            for f in faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in vertices {
                for c in v.to_array() {
                    if single {
                        out.extend_from_slice(&(c as f32).to_le_bytes());
                    } else {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
            for f in faces {
                out.push(3);
                for i in f {
                    out.extend_from_slice(&(*i as i32).to_le_bytes());
                }
            }
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<Vec3>, Vec<[u32; 3]>) {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.5, -2.25, 3.0),
            Vec3::new(0.1f32 as f64, 1e-7f32 as f64, -7.75),
        ];
        (v, vec![[0, 1, 2], [2, 1, 0]])
    }

    #[test]
    fn round_trip_both_formats() {
        let d = tempfile::tempdir().unwrap();
        let (v, f) = sample();
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let p = d.path().join("m.ply");
            write_ply(&p, &v, &f, fmt).unwrap();
            let r = read_ply(&p).unwrap();
            assert_eq!(r.vertices, v);
            assert_eq!(r.faces, f);
            assert!(fs::read_to_string(&p).map_or(true, |s| s.contains("property float x")));
        }
    }

    #[test]
    fn double_precision_when_needed() {
        let d = tempfile::tempdir().unwrap();
        let v = vec![Vec3::new(0.1, std::f64::consts::PI, -1e-300)];
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let p = d.path().join("c.ply");
            write_ply(&p, &v, &[], fmt).unwrap();
            let r = read_ply(&p).unwrap();
            assert_eq!(r.vertices[0].x.to_bits(), v[0].x.to_bits());
            assert_eq!(r.vertices[0].y.to_bits(), v[0].y.to_bits());
            assert_eq!(r.vertices[0].z.to_bits(), v[0].z.to_bits());
            assert!(r.faces.is_empty());
        }
    }

    #[test]
    fn foreign_layouts() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("q.ply");
        fs::write(
            &p,
            "ply\nformat ascii 1.0\ncomment quad\nelement vertex 4\nproperty double x\nproperty double y\nproperty double z\n\
             property uchar red\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n\
             0 0 0 255\n1 0 0 0\n1 1 0 0\n0 1 0 9\n4 0 1 2 3\n",
        )
        .unwrap();
        let r = read_ply(&p).unwrap();
        assert_eq!(r.vertices.len(), 4);
        assert_eq!(r.vertices[2], Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(r.faces, vec![[0, 1, 2], [0, 2, 3]]);

        fs::write(&p, "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n").unwrap();
        assert!(read_ply(&p).is_err());
        fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").unwrap();
        assert!(read_ply(&p).is_err());
    }
}
