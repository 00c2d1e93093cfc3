//! Scene PLY in the common 3DGS vertex layout, plus plain point clouds.
//!
//! Scenes are written as little-endian float32 with the properties
//! `x y z nx ny nz f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3`, where
//! `f_rest` is channel-major and scale/opacity are stored in log/logit form.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scene::{sh, GaussianScene, GaussianSplat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

/// A PLY read back from disk. Files without the splat properties still give
/// their vertex positions.
#[derive(Debug, Clone)]
pub enum PlyImport {
    Scene(GaussianScene),
    Points(Vec<[f64; 3]>),
}

impl PlyImport {
    pub fn is_scene(&self) -> bool {
        matches!(self, PlyImport::Scene(_))
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        match self {
            PlyImport::Scene(s) => s.splats.iter().map(|s| s.position).collect(),
            PlyImport::Points(p) => p.clone(),
        }
    }

    pub fn into_scene(self, path: &Path) -> Result<GaussianScene> {
        match self {
            PlyImport::Scene(s) => Ok(s),
            PlyImport::Points(_) => Err(Error::Dataset(format!(
                "{} holds a bare point cloud, not a splat scene",
                path.display()
            ))),
        }
    }
}

pub fn scene_property_names(sh_degree: usize) -> Vec<String> {
    let rest = 3 * (sh::coeff_count(sh_degree) - 1);
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

fn splat_record(s: &GaussianSplat, degree: usize) -> Vec<f64> {
    let k = sh::coeff_count(degree);
    let mut v = Vec::with_capacity(14 + 3 * k);
    v.extend(s.position);
    v.extend([0.0; 3]);
    v.extend(s.sh[0]);
    for c in 0..3 {
        for coeff in &s.sh[1..k] {
            v.push(coeff[c]);
        }
    }
    v.push(s.opacity_logit);
    v.extend(s.log_scale);
    v.extend(s.rotation);
    v
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn scene_to_bytes(scene: &GaussianScene, format: PlyFormat) -> Vec<u8> {
    let degree = scene.sh_degree();
    let names = scene_property_names(degree);
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    write!(out, "ply\nformat {fmt} 1.0\nelement vertex {}\n", scene.len()).unwrap();
    for n in &names {
        writeln!(out, "property float {n}").unwrap();
    }
    out.extend_from_slice(b"end_header\n");
    for s in &scene.splats {
        let rec = splat_record(s, degree);
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in rec {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            PlyFormat::Ascii => {
                let line: Vec<String> = rec.iter().map(|&v| (v as f32).to_string()).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
    }
    out
}

pub fn write_scene_ply(path: &Path, scene: &GaussianScene, format: PlyFormat) -> Result<()> {
    write_file(path, &scene_to_bytes(scene, format))
}

/// Binary point cloud with optional 8-bit colors.
pub fn write_points_ply(path: &Path, points: &[[f64; 3]], colors: Option<&[[f64; 3]]>) -> Result<()> {
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", points.len()).unwrap();
    out.extend_from_slice(b"property float x\nproperty float y\nproperty float z\n");
    if colors.is_some() {
        out.extend_from_slice(b"property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in points.iter().enumerate() {
        for v in p {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if let Some(c) = colors {
            out.extend(c[i].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    write_file(path, &out)
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

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = b.try_into().expect("sized slice");
                (if big { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16),
            Scalar::U16 => num!(u16),
            Scalar::I32 => num!(i32),
            Scalar::U32 => num!(u32),
            Scalar::F32 => num!(f32),
            Scalar::F64 => num!(f64),
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

#[derive(Debug, Clone, Copy, PartialEq)]
enum Encoding {
    Ascii,
    Binary { big: bool },
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        let line = String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string();
        *pos += end + 1;
        line_no += 1;
        Some((line_no, line))
    };
    let truncated = |pos: usize| Error::Binary {
        path: path.to_path_buf(),
        offset: pos as u64,
        message: "header ends before end_header".into(),
    };
    match next_line(&mut pos) {
        Some((_, l)) if l == "ply" => {}
        _ => return Err(Error::parse(path, 1, "missing `ply` magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = next_line(&mut pos).ok_or_else(|| truncated(bytes.len()))?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Binary { big: false },
                    "binary_big_endian" => Encoding::Binary { big: true },
                    other => return Err(Error::parse(path, n, format!("unknown format `{other}`"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(path, n, format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::parse(path, n, "unknown list property type"));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| Error::parse(path, n, format!("unknown type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, n, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            _ => return Err(Error::parse(path, n, format!("unexpected header line `{line}`"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::parse(path, 2, "missing format line"))?,
        elements,
        body: pos,
    })
}

struct BinaryReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    big: bool,
}

impl BinaryReader<'_> {
    fn take(&mut self, ty: Scalar, what: &str) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(Error::Binary {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                message: format!("file truncated while reading {what}"),
            });
        }
        let v = ty.decode(&self.bytes[self.pos..self.pos + n], self.big);
        self.pos += n;
        Ok(v)
    }
}

/// Reads every scalar property of the `vertex` element.
fn read_vertices(path: &Path, bytes: &[u8], header: &Header) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let vidx = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::Dataset(format!("{}: no vertex element", path.display())))?;
    let vertex = &header.elements[vidx];
    let names: Vec<String> = vertex
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar(n, _) => Some(n.clone()),
            Property::List(..) => None,
        })
        .collect();
    let mut rows = Vec::with_capacity(vertex.count);
    match header.encoding {
        Encoding::Binary { big } => {
            let mut r = BinaryReader {
                path,
                bytes,
                pos: header.body,
                big,
            };
            for (ei, el) in header.elements.iter().enumerate().take(vidx + 1) {
                for row in 0..el.count {
                    let mut values = Vec::new();
                    for p in &el.props {
                        match p {
                            Property::Scalar(name, ty) => {
                                let v = r.take(*ty, &format!("{}[{row}].{name}", el.name))?;
                                values.push(v);
                            }
                            Property::List(name, ct, it) => {
                                let len = r.take(*ct, &format!("{}[{row}].{name}", el.name))? as usize;
                                for _ in 0..len {
                                    r.take(*it, &format!("{}[{row}].{name}", el.name))?;
                                }
                            }
                        }
                    }
                    if ei == vidx {
                        rows.push(values);
                    }
                }
            }
        }
        Encoding::Ascii => {
            let text = std::str::from_utf8(&bytes[header.body..])
                .map_err(|_| Error::parse(path, 0, "ascii body is not UTF-8"))?;
            let header_lines = bytes[..header.body].iter().filter(|&&b| b == b'\n').count();
            let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for (ei, el) in header.elements.iter().enumerate().take(vidx + 1) {
                for row in 0..el.count {
                    let (i, line) = lines.next().ok_or_else(|| {
                        Error::parse(path, header_lines + 1, format!("file ends before {}[{row}]", el.name))
                    })?;
                    if ei != vidx {
                        continue;
                    }
                    let line_no = header_lines + i + 1;
                    let tokens: Vec<&str> = line.split_whitespace().collect();
                    if el.props.iter().any(|p| matches!(p, Property::List(..))) {
                        return Err(Error::parse(path, line_no, "list properties on vertices are not supported"));
                    }
                    if tokens.len() != names.len() {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!("expected {} values, got {}", names.len(), tokens.len()),
                        ));
                    }
                    rows.push(
                        tokens
                            .iter()
                            .zip(&el.props)
                            .map(|(t, p)| {
                                // Float text is the shortest f32 representation; parse it as f32.
                                let v = match p {
                                    Property::Scalar(_, Scalar::F32) => t.parse::<f32>().map(f64::from).ok(),
                                    _ => t.parse::<f64>().ok(),
                                };
                                v.ok_or_else(|| Error::parse(path, line_no, format!("bad number `{t}`")))
                            })
                            .collect::<Result<_>>()?,
                    );
                }
            }
        }
    }
    Ok((names, rows))
}

fn build_scene(path: &Path, names: &[String], rows: &[Vec<f64>]) -> Result<Option<GaussianScene>> {
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let required = [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
        "rot_2", "rot_3",
    ];
    if required.iter().any(|r| !index.contains_key(r)) {
        return Ok(None);
    }
    let rest = names.iter().filter(|n| n.starts_with("f_rest_")).count();
    let degree = sh::degree_from_coeff_count(rest / 3 + 1)
        .filter(|_| rest % 3 == 0)
        .ok_or_else(|| Error::Dataset(format!("{}: {rest} f_rest properties match no SH degree", path.display())))?;
    let k = sh::coeff_count(degree);
    let rest_idx: Vec<usize> = (0..rest)
        .map(|i| {
            index.get(format!("f_rest_{i}").as_str()).copied().ok_or_else(|| {
                Error::Dataset(format!("{}: f_rest_{i} missing", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let g = |row: &Vec<f64>, n: &str| row[index[n]];
    let splats = rows
        .iter()
        .map(|row| {
            let mut coeffs = vec![[0.0; 3]; k];
            coeffs[0] = [g(row, "f_dc_0"), g(row, "f_dc_1"), g(row, "f_dc_2")];
            for c in 0..3 {
                for j in 1..k {
                    coeffs[j][c] = row[rest_idx[c * (k - 1) + j - 1]];
                }
            }
            GaussianSplat {
                position: [g(row, "x"), g(row, "y"), g(row, "z")],
                rotation: [g(row, "rot_0"), g(row, "rot_1"), g(row, "rot_2"), g(row, "rot_3")],
                log_scale: [g(row, "scale_0"), g(row, "scale_1"), g(row, "scale_2")],
                opacity_logit: g(row, "opacity"),
                sh: coeffs,
            }
        })
        .collect();
    GaussianScene::from_splats(degree, splats).map(Some)
}

pub fn parse_ply(path: &Path, bytes: &[u8]) -> Result<PlyImport> {
    let header = parse_header(path, bytes)?;
    let (names, rows) = read_vertices(path, bytes, &header)?;
    if let Some(scene) = build_scene(path, &names, &rows)? {
        return Ok(PlyImport::Scene(scene));
    }
    let pos: Vec<usize> = ["x", "y", "z"]
        .iter()
        .map(|axis| {
            names
                .iter()
                .position(|n| n == axis)
                .ok_or_else(|| Error::Dataset(format!("{}: vertex has no `{axis}`", path.display())))
        })
        .collect::<Result<_>>()?;
    Ok(PlyImport::Points(rows.iter().map(|r| [r[pos[0]], r[pos[1]], r[pos[2]]]).collect()))
}

pub fn read_ply(path: &Path) -> Result<PlyImport> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

/// Scene PLYs in `dir`, sorted by file name.
pub fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    out.sort();
    Ok(out)
}
