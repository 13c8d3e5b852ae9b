//! Reader and writer for the de-facto 3DGS PLY layout.
//!
//! The reader accepts `ascii`, `binary_little_endian` and
//! `binary_big_endian` bodies with any scalar property type. Properties other
//! than the splat fields (for example `nx ny nz`) are skipped. The writer always
//! emits `binary_little_endian` float32.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, WriteBytesExt};

use crate::splat::{Gaussian, SplatError, SplatScene, SH_COEFFS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
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

    fn read<B: ByteOrder>(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => B::read_i16(b) as f64,
            Self::U16 => B::read_u16(b) as f64,
            Self::I32 => B::read_i32(b) as f64,
            Self::U32 => B::read_u32(b) as f64,
            Self::F32 => B::read_f32(b) as f64,
            Self::F64 => B::read_f64(b),
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    kind: Scalar,
    is_list: bool,
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn malformed(msg: impl Into<String>) -> SplatError {
    SplatError::MalformedHeader(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<(Format, Vec<Element>, usize), SplatError> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| malformed("no end_header"))?;
    let mut body = end + END.len();
    // the terminator is "\n" or "\r\n"
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) != Some(&b'\n') {
        return Err(malformed("end_header not followed by newline"));
    }
    body += 1;

    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not UTF-8"))?;
    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(malformed("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    "binary_big_endian" => Format::BinaryBe,
                    other => return Err(malformed(format!("unknown format `{other}`"))),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| malformed(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before element"))?;
                Scalar::parse(count_ty)
                    .ok_or_else(|| malformed(format!("bad list count type `{count_ty}`")))?;
                let kind = Scalar::parse(item_ty)
                    .ok_or_else(|| malformed(format!("bad list item type `{item_ty}`")))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind,
                    is_list: true,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before element"))?;
                let kind =
                    Scalar::parse(ty).ok_or_else(|| malformed(format!("bad property type `{ty}`")))?;
                el.props.push(Property {
                    name: name.to_string(),
                    kind,
                    is_list: false,
                });
            }
            _ => return Err(malformed(format!("unrecognized header line `{line}`"))),
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok((format, elements, body))
}

/// Property indices of the splat fields inside the vertex element.
struct Layout {
    mean: [usize; 3],
    dc: [usize; 3],
    rest: Vec<usize>,
    opacity: usize,
    scale: [usize; 3],
    rot: [usize; 4],
    degree: u8,
}

fn find(props: &[Property], name: &str) -> Result<usize, SplatError> {
    props
        .iter()
        .position(|p| p.name == name)
        .ok_or_else(|| SplatError::MissingField(name.to_string()))
}

fn layout(props: &[Property]) -> Result<Layout, SplatError> {
    if let Some(p) = props.iter().find(|p| p.is_list) {
        return Err(malformed(format!("list property `{}` in vertex element", p.name)));
    }
    let f = |n: &str| find(props, n);
    let mean = [f(MEAN[0])?, f(MEAN[1])?, f(MEAN[2])?];
    let dc = [f(DC[0])?, f(DC[1])?, f(DC[2])?];
    let opacity = f("opacity")?;
    let scale = [f(SCALE[0])?, f(SCALE[1])?, f(SCALE[2])?];
    let rot = [f(ROT[0])?, f(ROT[1])?, f(ROT[2])?, f(ROT[3])?];

    let rest_total = props.iter().filter(|p| p.name.starts_with("f_rest_")).count();
    let mut rest = Vec::with_capacity(rest_total);
    for k in 0..rest_total {
        rest.push(
            find(props, &format!("f_rest_{k}"))
                .map_err(|_| malformed(format!("f_rest properties are not contiguous at {k}")))?,
        );
    }
    let degree = match rest_total {
        0 => 0,
        9 => 1,
        24 => 2,
        45 => 3,
        n => return Err(malformed(format!("{n} f_rest properties do not match an SH degree"))),
    };
    Ok(Layout {
        mean,
        dc,
        rest,
        opacity,
        scale,
        rot,
        degree,
    })
}

const MEAN: [&str; 3] = ["x", "y", "z"];
const DC: [&str; 3] = ["f_dc_0", "f_dc_1", "f_dc_2"];
const SCALE: [&str; 3] = ["scale_0", "scale_1", "scale_2"];
const ROT: [&str; 4] = ["rot_0", "rot_1", "rot_2", "rot_3"];

fn decode_vertex(vals: &[f64], lay: &Layout, vertex: usize) -> Result<Gaussian, SplatError> {
    let bad = |field: &str| SplatError::InvalidValue {
        vertex,
        field: field.to_string(),
    };
    let pick = |idx: usize, field: &str| -> Result<f32, SplatError> {
        let v = vals[idx] as f32;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(field))
        }
    };
    let mut g = Gaussian::default();
    for i in 0..3 {
        g.mean[i] = pick(lay.mean[i], MEAN[i])?;
        g.sh[0][i] = pick(lay.dc[i], DC[i])?;
        g.scale_log[i] = pick(lay.scale[i], SCALE[i])?;
    }
    g.opacity_logit = pick(lay.opacity, "opacity")?;
    for i in 0..4 {
        g.rotation[i] = pick(lay.rot[i], ROT[i])?;
    }
    // f_rest is channel-major: all R coefficients, then G, then B.
    let per_channel = lay.rest.len() / 3;
    for (k, &idx) in lay.rest.iter().enumerate() {
        let channel = k / per_channel;
        let coeff = 1 + k % per_channel;
        g.sh[coeff][channel] = pick(idx, "f_rest")?;
    }
    if !g.normalize_rotation() {
        return Err(bad("rot_0"));
    }
    debug_assert!(per_channel < SH_COEFFS);
    Ok(g)
}

fn ascii_skip_lines(body: &str, mut pos: usize, n: usize) -> Result<usize, SplatError> {
    for _ in 0..n {
        let nl = body[pos..]
            .find('\n')
            .ok_or_else(|| malformed("unexpected end of ASCII body"))?;
        pos += nl + 1;
    }
    Ok(pos)
}

/// Loads a 3DGS PLY file. Rotations are normalized, the placement is the
/// identity and the SH degree is inferred from the `f_rest` count.
pub fn load_splat_ply(path: impl AsRef<Path>) -> Result<SplatScene, SplatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| SplatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut scene = decode_splat_ply(&bytes)?;
    scene.source_path = path.display().to_string();
    Ok(scene)
}

/// In-memory form of [`load_splat_ply`].
pub fn decode_splat_ply(bytes: &[u8]) -> Result<SplatScene, SplatError> {
    let (format, elements, body_start) = parse_header(bytes)?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed("no vertex element"))?;
    let lay = layout(&elements[vi].props)?;
    let count = elements[vi].count;
    let nprops = elements[vi].props.len();
    let body = &bytes[body_start..];
    let mut gaussians = Vec::with_capacity(count);
    let mut vals = vec![0.0f64; nprops];

    match format {
        Format::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| malformed("ASCII body is not UTF-8"))?;
            let mut pos = 0;
            for el in &elements[..vi] {
                pos = ascii_skip_lines(text, pos, el.count)?;
            }
            let mut lines = text[pos..].lines().filter(|l| !l.trim().is_empty());
            for v in 0..count {
                let line = lines
                    .next()
                    .ok_or_else(|| malformed(format!("body ends before vertex {v}")))?;
                let mut toks = line.split_whitespace();
                for slot in vals.iter_mut() {
                    let tok = toks
                        .next()
                        .ok_or_else(|| malformed(format!("vertex {v} has too few values")))?;
                    *slot = tok.parse::<f64>().map_err(|_| SplatError::InvalidValue {
                        vertex: v,
                        field: tok.to_string(),
                    })?;
                }
                gaussians.push(decode_vertex(&vals, &lay, v)?);
            }
        }
        Format::BinaryLe | Format::BinaryBe => {
            let mut offset = 0usize;
            for el in &elements[..vi] {
                if el.props.iter().any(|p| p.is_list) {
                    return Err(malformed(format!(
                        "list properties in element `{}` preceding vertex are unsupported",
                        el.name
                    )));
                }
                let stride: usize = el.props.iter().map(|p| p.kind.size()).sum();
                offset += stride * el.count;
            }
            let stride: usize = elements[vi].props.iter().map(|p| p.kind.size()).sum();
            let needed = offset + stride * count;
            if body.len() < needed {
                return Err(malformed(format!(
                    "binary body has {} bytes, {} required",
                    body.len(),
                    needed
                )));
            }
            for v in 0..count {
                let mut at = offset + v * stride;
                for (slot, p) in vals.iter_mut().zip(&elements[vi].props) {
                    let b = &body[at..at + p.kind.size()];
                    *slot = if format == Format::BinaryLe {
                        p.kind.read::<LittleEndian>(b)
                    } else {
                        p.kind.read::<BigEndian>(b)
                    };
                    at += p.kind.size();
                }
                gaussians.push(decode_vertex(&vals, &lay, v)?);
            }
        }
    }
    Ok(SplatScene::new(gaussians, lay.degree))
}

/// Number of higher-order SH coefficients per channel for a degree.
pub fn rest_per_channel(degree: u8) -> usize {
    let d = degree as usize;
    (d + 1) * (d + 1) - 1
}

/// Writes `scene` as binary little-endian float32 with its placement baked
/// into means and rotations.
pub fn save_splat_ply(scene: &SplatScene, path: impl AsRef<Path>) -> Result<(), SplatError> {
    let path = path.as_ref();
    let io_err = |source| SplatError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    encode_splat_ply(scene, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn encode_splat_ply(scene: &SplatScene, w: &mut impl Write) -> std::io::Result<()> {
    let gaussians = scene.baked_gaussians();
    let rest = rest_per_channel(scene.sh_degree);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", gaussians.len()));
    for n in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {n}\n"));
    }
    for k in 0..rest * 3 {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    for n in ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"] {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    for g in &gaussians {
        for v in g.mean.iter().chain(&g.sh[0]) {
            w.write_f32::<LittleEndian>(*v)?;
        }
        for c in 0..3 {
            for k in 0..rest {
                w.write_f32::<LittleEndian>(g.sh[1 + k][c])?;
            }
        }
        w.write_f32::<LittleEndian>(g.opacity_logit)?;
        for v in g.scale_log.iter().chain(&g.rotation) {
            w.write_f32::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_VERTEX: &str = "ply
format ascii 1.0
element vertex 1
property float x
property float y
property float z
property float nx
property float ny
property float nz
property float f_dc_0
property float f_dc_1
property float f_dc_2
property float opacity
property float scale_0
property float scale_1
property float scale_2
property float rot_0
property float rot_1
property float rot_2
property float rot_3
end_header
1 2 3 0 0 0 0 0 0 0 0 0 0 1 0 0 0
";

    #[test]
    fn decodes_single_ascii_vertex() {
        let s = decode_splat_ply(ONE_VERTEX.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.sh_degree, 0);
        assert_eq!(s.gaussians[0].mean, [1.0, 2.0, 3.0]);
        assert_eq!(s.gaussians[0].rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_opacity_is_named() {
        let text = ONE_VERTEX.replace("property float opacity\n", "");
        let err = decode_splat_ply(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SplatError::MissingField(ref f) if f == "opacity"), "{err}");
    }

    #[test]
    fn odd_rest_count_is_malformed() {
        let text = ONE_VERTEX.replace(
            "property float opacity\n",
            "property float f_rest_0\nproperty float f_rest_1\nproperty float opacity\n",
        );
        assert!(matches!(
            decode_splat_ply(text.as_bytes()),
            Err(SplatError::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_value_reports_vertex() {
        let text = ONE_VERTEX.replace("1 2 3 0", "1 nan 3 0");
        let err = decode_splat_ply(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SplatError::InvalidValue { vertex: 0, .. }), "{err}");
    }

    #[test]
    fn rotation_normalized_on_load() {
        let text = ONE_VERTEX.replace("0 1 0 0 0\n", "0 2 0 0 0\n");
        let s = decode_splat_ply(text.as_bytes()).unwrap();
        assert_eq!(s.gaussians[0].rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn header_without_end_is_malformed() {
        assert!(matches!(
            decode_splat_ply(b"ply\nformat ascii 1.0\n"),
            Err(SplatError::MalformedHeader(_))
        ));
    }

    #[test]
    fn binary_round_trip_degree_one() {
        let mut g = Gaussian {
            mean: [0.5, -1.0, 2.0],
            scale_log: [-1.0, -2.0, -3.0],
            opacity_logit: 0.7,
            ..Default::default()
        };
        for k in 0..4 {
            g.sh[k] = [k as f32, 0.1 * k as f32, -(k as f32)];
        }
        let s = SplatScene::new(vec![g], 1);
        let mut buf = Vec::new();
        encode_splat_ply(&s, &mut buf).unwrap();
        let back = decode_splat_ply(&buf).unwrap();
        assert_eq!(back.sh_degree, 1);
        assert_eq!(back.gaussians[0], g);
    }
}
