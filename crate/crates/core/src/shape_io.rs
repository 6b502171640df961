//! Mesh and point-cloud loading, unit-cube normalization and area-weighted
//! surface sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Vec3;

pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_SAMPLE_COUNT: usize = 2048;

#[derive(Debug, Error)]
pub enum ShapeIoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {format} record at {location}: {reason}")]
    Malformed {
        format: &'static str,
        location: String,
        reason: String,
    },
    #[error("zero vertices")]
    ZeroVertices,
    #[error("face {face} references vertex {index}, but only {count} vertices exist")]
    BadFaceIndex { face: usize, index: usize, count: usize },
    #[error("unknown shape format {0:?} (expected obj, ply or xyz)")]
    UnknownFormat(String),
    #[error("margin must lie in [0, 0.5), got {0}")]
    BadMargin(f64),
    #[error("shape has zero extent (all vertices identical)")]
    ZeroExtent,
    #[error("all triangles are degenerate (total area 0)")]
    DegenerateMesh,
    #[error("sample count must be at least 1")]
    ZeroSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFormat {
    Obj,
    Ply,
    Xyz,
}

impl ShapeFormat {
    pub fn from_path(path: &Path) -> Result<Self, ShapeIoError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        ext.parse()
    }
}

impl std::str::FromStr for ShapeFormat {
    type Err = ShapeIoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "xyz" | "txt" => Ok(Self::Xyz),
            other => Err(ShapeIoError::UnknownFormat(other.to_string())),
        }
    }
}

/// Vertices and (possibly empty) triangle list as read from disk.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn has_faces(&self) -> bool {
        !self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<(), ShapeIoError> {
        if self.vertices.is_empty() {
            return Err(ShapeIoError::ZeroVertices);
        }
        let count = self.vertices.len();
        for (face, tri) in self.faces.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= count) {
                return Err(ShapeIoError::BadFaceIndex { face, index, count });
            }
        }
        Ok(())
    }

    pub fn triangle_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

pub fn load_shape(path: &Path, format: Option<ShapeFormat>) -> Result<Mesh, ShapeIoError> {
    let format = match format {
        Some(f) => f,
        None => ShapeFormat::from_path(path)?,
    };
    let text = fs::read_to_string(path).map_err(|source| ShapeIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_shape(&text, format)
}

pub fn parse_shape(text: &str, format: ShapeFormat) -> Result<Mesh, ShapeIoError> {
    let mesh = match format {
        ShapeFormat::Obj => parse_obj(text)?,
        ShapeFormat::Ply => parse_ply(text)?,
        ShapeFormat::Xyz => parse_xyz(text)?,
    };
    mesh.validate()?;
    Ok(mesh)
}

fn malformed(format: &'static str, location: String, reason: impl Into<String>) -> ShapeIoError {
    ShapeIoError::Malformed {
        format,
        location,
        reason: reason.into(),
    }
}

fn parse_floats<'a>(
    fields: impl Iterator<Item = &'a str>,
    count: usize,
    format: &'static str,
    location: &dyn Fn() -> String,
) -> Result<Vec<f64>, ShapeIoError> {
    let mut out = Vec::with_capacity(count);
    for field in fields.take(count) {
        let v: f64 = field
            .parse()
            .map_err(|_| malformed(format, location(), format!("invalid number {field:?}")))?;
        if !v.is_finite() {
            return Err(malformed(format, location(), format!("non-finite value {field:?}")));
        }
        out.push(v);
    }
    if out.len() < count {
        return Err(malformed(
            format,
            location(),
            format!("expected {count} coordinates, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// Fan-triangulates a polygon given as vertex indices.
fn fan(poly: &[usize], faces: &mut Vec<[usize; 3]>) {
    for t in 1..poly.len() - 1 {
        faces.push([poly[0], poly[t], poly[t + 1]]);
    }
}

pub fn parse_obj(text: &str) -> Result<Mesh, ShapeIoError> {
    let mut mesh = Mesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let location = || format!("line {}", lineno + 1);
        let line = line.split('#').next().unwrap_or_default().trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let c = parse_floats(fields, 3, "obj", &location)?;
                mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut poly = Vec::new();
                for field in fields {
                    let first = field.split('/').next().unwrap_or_default();
                    let raw: i64 = first
                        .parse()
                        .map_err(|_| malformed("obj", location(), format!("invalid face index {field:?}")))?;
                    // 1-based, negative counts back from the latest vertex.
                    let idx = if raw > 0 {
                        raw - 1
                    } else if raw < 0 {
                        mesh.vertices.len() as i64 + raw
                    } else {
                        return Err(malformed("obj", location(), "face index 0"));
                    };
                    if idx < 0 || idx as usize >= mesh.vertices.len() {
                        return Err(malformed(
                            "obj",
                            location(),
                            format!("face index {raw} out of range"),
                        ));
                    }
                    poly.push(idx as usize);
                }
                if poly.len() < 3 {
                    return Err(malformed("obj", location(), "face with fewer than 3 vertices"));
                }
                fan(&poly, &mut mesh.faces);
            }
            _ => {}
        }
    }
    if mesh.vertices.is_empty() {
        return Err(ShapeIoError::ZeroVertices);
    }
    Ok(mesh)
}

pub fn parse_xyz(text: &str) -> Result<Mesh, ShapeIoError> {
    let mut mesh = Mesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let location = || format!("line {}", lineno + 1);
        let fields = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty());
        let c = parse_floats(fields, 3, "xyz", &location)?;
        mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
    }
    if mesh.vertices.is_empty() {
        return Err(ShapeIoError::ZeroVertices);
    }
    Ok(mesh)
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

enum PlyProperty {
    Scalar(String),
    List(String),
}

/// ASCII PLY with a `vertex` element (x, y, z properties) and an optional
/// `face` element carrying a vertex index list.
pub fn parse_ply(text: &str) -> Result<Mesh, ShapeIoError> {
    let mut lines = text.lines().enumerate();
    let header_err = |lineno: usize, reason: &str| malformed("ply", format!("header line {}", lineno + 1), reason);
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(header_err(0, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut ascii = false;
    loop {
        let Some((lineno, line)) = lines.next() else {
            return Err(header_err(0, "missing end_header"));
        };
        let mut f = line.split_whitespace();
        match f.next() {
            Some("format") => {
                ascii = f.next() == Some("ascii");
                if !ascii {
                    return Err(header_err(lineno, "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                let name = f.next().ok_or_else(|| header_err(lineno, "element without name"))?;
                let count = f
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(lineno, "element without valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| header_err(lineno, "property before element"))?;
                let rest: Vec<&str> = f.collect();
                let prop = match rest.as_slice() {
                    ["list", _, _, name] => PlyProperty::List(name.to_string()),
                    [_, name] => PlyProperty::Scalar(name.to_string()),
                    _ => return Err(header_err(lineno, "malformed property")),
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            _ => {}
        }
    }
    if !ascii {
        return Err(header_err(0, "missing format line"));
    }

    let mut mesh = Mesh::default();
    for el in &elements {
        for item in 0..el.count {
            let location = || format!("{} element {}", el.name, item);
            let Some((_, line)) = lines.next() else {
                return Err(malformed("ply", location(), "unexpected end of file"));
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut cursor = 0usize;
            let mut xyz = [None; 3];
            let mut list: Option<Vec<usize>> = None;
            for prop in &el.properties {
                match prop {
                    PlyProperty::Scalar(name) => {
                        let tok = tokens
                            .get(cursor)
                            .ok_or_else(|| malformed("ply", location(), "too few values"))?;
                        cursor += 1;
                        let axis = match name.as_str() {
                            "x" => Some(0),
                            "y" => Some(1),
                            "z" => Some(2),
                            _ => None,
                        };
                        if let (Some(a), "vertex") = (axis, el.name.as_str()) {
                            let v: f64 = tok
                                .parse()
                                .map_err(|_| malformed("ply", location(), format!("invalid number {tok:?}")))?;
                            xyz[a] = Some(v);
                        }
                    }
                    PlyProperty::List(name) => {
                        let n: usize = tokens
                            .get(cursor)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| malformed("ply", location(), "invalid list length"))?;
                        cursor += 1;
                        let vals = tokens
                            .get(cursor..cursor + n)
                            .ok_or_else(|| malformed("ply", location(), "too few list values"))?;
                        cursor += n;
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            let idx = vals
                                .iter()
                                .map(|t| t.parse::<usize>())
                                .collect::<Result<Vec<_>, _>>()
                                .map_err(|_| malformed("ply", location(), "invalid vertex index"))?;
                            list = Some(idx);
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => {
                    let [Some(x), Some(y), Some(z)] = xyz else {
                        return Err(malformed("ply", location(), "vertex without x, y, z"));
                    };
                    mesh.vertices.push(Vec3::new(x, y, z));
                }
                "face" => {
                    let poly = list.ok_or_else(|| malformed("ply", location(), "face without vertex_indices"))?;
                    if poly.len() < 3 {
                        return Err(malformed("ply", location(), "face with fewer than 3 vertices"));
                    }
                    fan(&poly, &mut mesh.faces);
                }
                _ => {}
            }
        }
    }
    if mesh.vertices.is_empty() {
        return Err(ShapeIoError::ZeroVertices);
    }
    Ok(mesh)
}

/// Maps original coordinates into the unit cube: `x' = (x − center)·scale + ½`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Vec3::repeat(0.5),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale + Vec3::repeat(0.5)
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        (p - Vec3::repeat(0.5)) / self.scale + self.center
    }
}

/// Uniform scale and translation placing the bounding box at the cube center
/// with its longest side equal to `1 − 2·margin`.
pub fn normalize_to_unit_cube(
    vertices: &[Vec3],
    margin: f64,
) -> Result<(Vec<Vec3>, Normalization), ShapeIoError> {
    if !(0.0..0.5).contains(&margin) {
        return Err(ShapeIoError::BadMargin(margin));
    }
    let first = vertices.first().ok_or(ShapeIoError::ZeroVertices)?;
    let (mut lo, mut hi) = (*first, *first);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(ShapeIoError::ZeroExtent);
    }
    let norm = Normalization {
        center: (lo + hi) * 0.5,
        scale: (1.0 - 2.0 * margin) / extent,
    };
    Ok((vertices.iter().map(|v| norm.apply(v)).collect(), norm))
}

/// `k` i.i.d. surface points: a triangle drawn with probability proportional
/// to its area, then a uniform point inside it.
pub fn sample_surface(mesh: &Mesh, k: usize, seed: u64) -> Result<Vec<Vec3>, ShapeIoError> {
    if k == 0 {
        return Err(ShapeIoError::ZeroSamples);
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.triangle_area(f)).collect();
    if !areas.iter().any(|&a| a > 0.0) {
        return Err(ShapeIoError::DegenerateMesh);
    }
    let picker = WeightedIndex::new(&areas).map_err(|_| ShapeIoError::DegenerateMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k)
        .map(|_| {
            let [a, b, c] = mesh.faces[picker.sample(&mut rng)].map(|i| mesh.vertices[i]);
            let r1: f64 = rng.random();
            let r2: f64 = rng.random();
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect())
}

/// A shape placed in the unit cube, with the surface samples that drive the
/// inclusion energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledShape {
    pub points: Vec<Vec3>,
    /// Source mesh in unit-cube coordinates, when the input had faces.
    pub source_mesh: Option<Mesh>,
    pub normalization: Normalization,
}

impl SampledShape {
    /// Normalizes `raw` and samples its surface; point clouds (no faces) are
    /// used as-is.
    pub fn from_mesh(raw: &Mesh, margin: f64, samples: usize, seed: u64) -> Result<Self, ShapeIoError> {
        raw.validate()?;
        let (vertices, normalization) = normalize_to_unit_cube(&raw.vertices, margin)?;
        if raw.has_faces() {
            let mesh = Mesh {
                vertices,
                faces: raw.faces.clone(),
            };
            let points = sample_surface(&mesh, samples, seed)?;
            Ok(Self {
                points,
                source_mesh: Some(mesh),
                normalization,
            })
        } else {
            Ok(Self {
                points: vertices,
                source_mesh: None,
                normalization,
            })
        }
    }

    /// Points already in unit-cube coordinates.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self {
            points,
            source_mesh: None,
            normalization: Normalization::identity(),
        }
    }

    /// The geometry a deformation should move: mesh vertices when a mesh is
    /// attached, else the samples.
    pub fn carrier(&self) -> &[Vec3] {
        match &self.source_mesh {
            Some(m) => &m.vertices,
            None => &self.points,
        }
    }

    /// Applies `f` to the samples and the mesh vertices.
    pub fn map_points(&self, f: impl Fn(&[Vec3]) -> Vec<Vec3>) -> Self {
        Self {
            points: f(&self.points),
            source_mesh: self.source_mesh.as_ref().map(|m| Mesh {
                vertices: f(&m.vertices),
                faces: m.faces.clone(),
            }),
            normalization: self.normalization,
        }
    }
}

fn fmt_f64(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

pub fn format_xyz(points: &[Vec3]) -> String {
    let mut out = String::with_capacity(points.len() * 72);
    for p in points {
        fmt_f64(&mut out, p.x);
        out.push(' ');
        fmt_f64(&mut out, p.y);
        out.push(' ');
        fmt_f64(&mut out, p.z);
        out.push('\n');
    }
    out
}

pub fn format_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 74 + mesh.faces.len() * 24);
    for p in &mesh.vertices {
        out.push_str("v ");
        fmt_f64(&mut out, p.x);
        out.push(' ');
        fmt_f64(&mut out, p.y);
        out.push(' ');
        fmt_f64(&mut out, p.z);
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn write_xyz(path: &Path, points: &[Vec3]) -> Result<(), ShapeIoError> {
    fs::write(path, format_xyz(points)).map_err(|source| ShapeIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<(), ShapeIoError> {
    fs::write(path, format_obj(mesh)).map_err(|source| ShapeIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
