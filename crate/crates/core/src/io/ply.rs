use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussians::GaussianKernel;
use crate::math::{covariance_to_rotation_scale, logit, quat_to_rotation, rotation_scale_to_covariance, rotation_to_quat, sigmoid, Vec3};

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

const FIELDS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

/// Opacities are kept this far from 0 and 1 so the stored logit is finite.
const OPACITY_MARGIN: f64 = 1e-7;

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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

struct Element {
    name: String,
    count: usize,
    /// `(name, type)`; `None` marks a list property.
    properties: Vec<(String, Option<Scalar>)>,
}

impl Element {
    fn record_size(&self) -> Option<usize> {
        self.properties.iter().map(|(_, t)| t.map(Scalar::size)).sum()
    }
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
}

fn read_header(r: &mut impl BufRead, path: &Path) -> Result<Header> {
    let bad = |m: String| Error::format(path, m);
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io(path, e))?;
        Ok(n > 0)
    };
    if !next(&mut line)? || line.trim_end() != "ply" {
        return Err(bad("missing 'ply' magic line".into()));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next(&mut line)? {
            return Err(bad("header ended without 'end_header'".into()));
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLittleEndian),
            ["format", other, ..] => return Err(bad(format!("unsupported PLY encoding '{other}'"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                properties: Vec::new(),
            }),
            ["property", "list", _, _, name] => elements
                .last_mut()
                .ok_or_else(|| bad("property before any element".into()))?
                .properties
                .push((name.to_string(), None)),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown property type '{ty}'")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element".into()))?
                    .properties
                    .push((name.to_string(), Some(ty)));
            }
            _ => return Err(bad(format!("malformed header line '{}'", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| bad("missing 'format' line".into()))?;
    Ok(Header { encoding, elements })
}

/// Reads splats from any reader; `path` is only used in error messages.
pub fn read_splats(reader: impl Read, path: &Path) -> Result<Vec<GaussianKernel>> {
    let mut r = std::io::BufReader::new(reader);
    let header = read_header(&mut r, path)?;
    let bad = |m: String| Error::format(path, m);
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no 'vertex' element".into()))?;
    let vertex = &header.elements[vertex_pos];
    let mut slots = [0usize; FIELDS.len()];
    for (slot, field) in slots.iter_mut().zip(FIELDS) {
        *slot = vertex
            .properties
            .iter()
            .position(|(n, _)| n == field)
            .ok_or_else(|| bad(format!("missing vertex property '{field}'")))?;
    }

    let mut values = vec![0.0; vertex.properties.len()];
    let mut kernels = Vec::with_capacity(vertex.count);
    match header.encoding {
        Encoding::BinaryLittleEndian => {
            for e in &header.elements[..vertex_pos] {
                let size = e.record_size().ok_or_else(|| {
                    bad(format!("cannot skip element '{}' with list properties before the vertices", e.name))
                })?;
                std::io::copy(&mut (&mut r).take((size * e.count) as u64), &mut std::io::sink())
                    .map_err(|err| Error::io(path, err))?;
            }
            if vertex.properties.iter().any(|(_, t)| t.is_none()) {
                return Err(bad("list properties on vertices are not supported".into()));
            }
            let size = vertex.record_size().unwrap_or(0);
            let mut buf = vec![0u8; size];
            for i in 0..vertex.count {
                r.read_exact(&mut buf)
                    .map_err(|_| bad(format!("file truncated at vertex {i} of {}", vertex.count)))?;
                let mut off = 0;
                for (v, (_, ty)) in values.iter_mut().zip(&vertex.properties) {
                    let ty = ty.expect("scalar property");
                    *v = ty.decode(&buf[off..off + ty.size()]);
                    off += ty.size();
                }
                kernels.push(decode_vertex(&values, &slots, i, path)?);
            }
        }
        Encoding::Ascii => {
            let mut line = String::new();
            let mut read_line = |line: &mut String, i: usize| -> Result<()> {
                line.clear();
                if r.read_line(line).map_err(|e| Error::io(path, e))? == 0 {
                    return Err(bad(format!("file truncated at record {i}")));
                }
                Ok(())
            };
            for (k, e) in header.elements[..vertex_pos].iter().enumerate() {
                for _ in 0..e.count {
                    read_line(&mut line, k)?;
                }
            }
            for i in 0..vertex.count {
                read_line(&mut line, i)?;
                let mut words = line.split_whitespace();
                for v in values.iter_mut() {
                    let w = words.next().ok_or_else(|| bad(format!("vertex {i}: too few values")))?;
                    *v = w.parse().map_err(|_| bad(format!("vertex {i}: '{w}' is not a number")))?;
                }
                kernels.push(decode_vertex(&values, &slots, i, path)?);
            }
        }
    }
    Ok(kernels)
}

fn decode_vertex(values: &[f64], slots: &[usize; FIELDS.len()], index: usize, path: &Path) -> Result<GaussianKernel> {
    let v: Vec<f64> = slots.iter().map(|&s| values[s]).collect();
    if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::format(
            path,
            format!("vertex {index}: property '{}' is not finite", FIELDS[bad]),
        ));
    }
    let center = Vec3::new(v[0], v[1], v[2]);
    let color = Vec3::new(v[3], v[4], v[5]).map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0));
    let opacity = sigmoid(v[6]);
    let scale = Vec3::new(v[7], v[8], v[9]).map(f64::exp);
    let q = [v[10], v[11], v[12], v[13]];
    if q.iter().all(|c| *c == 0.0) {
        return Err(Error::format(path, format!("vertex {index}: zero rotation quaternion")));
    }
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::format(path, format!("vertex {index}: scale out of range")));
    }
    let covariance = rotation_scale_to_covariance(&quat_to_rotation(q), &scale);
    Ok(GaussianKernel::new(center, opacity, covariance, color))
}

pub fn load_splats(path: &Path) -> Result<Vec<GaussianKernel>> {
    read_splats(super::open(path)?, path)
}

/// Writes binary little-endian PLY. The current world covariance is stored.
pub fn write_splats(kernels: &[GaussianKernel], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", kernels.len())?;
    for f in FIELDS {
        writeln!(w, "property float {f}")?;
    }
    writeln!(w, "end_header")?;
    for k in kernels {
        let (r, s) = covariance_to_rotation_scale(&k.world_covariance);
        let q = rotation_to_quat(&r);
        let opacity = k.opacity.clamp(OPACITY_MARGIN, 1.0 - OPACITY_MARGIN);
        let record = [
            k.center.x,
            k.center.y,
            k.center.z,
            (k.color.x - 0.5) / SH_C0,
            (k.color.y - 0.5) / SH_C0,
            (k.color.z - 0.5) / SH_C0,
            logit(opacity),
            s.x.max(f64::MIN_POSITIVE).ln(),
            s.y.max(f64::MIN_POSITIVE).ln(),
            s.z.max(f64::MIN_POSITIVE).ln(),
            q[0],
            q[1],
            q[2],
            q[3],
        ];
        for v in record {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_splats(kernels: &[GaussianKernel], path: &Path) -> Result<()> {
    write_splats(kernels, super::create(path)?).map_err(|e| Error::io(path, e))
}
