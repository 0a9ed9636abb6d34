use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::IoError;
use crate::geom::{Point3, RigidTransform, Vec3};

/// Points with optional per-point intensity and wall association.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub intensity: Option<Vec<f32>>,
    /// Index into the wall model, `None` when unassigned.
    pub wall_label: Vec<Option<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        let n = points.len();
        Self {
            points,
            intensity: None,
            wall_label: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            wall_label: indices.iter().map(|&i| self.wall_label[i]).collect(),
        }
    }

    /// Subtracts a local origin from every coordinate.
    pub fn shift(&mut self, origin: &Vec3) {
        for p in &mut self.points {
            p.coords -= origin;
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            intensity: self.intensity.clone(),
            wall_label: self.wall_label.clone(),
        }
    }
}

/// Reads an ASCII `x y z [intensity]` file, or a little-endian binary PLY when
/// the file starts with the `ply` magic.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let mut file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic).map_err(|e| IoError::io(path, e))?;
    drop(file);
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let reader = BufReader::new(file);
    let cloud = if n >= 3 && &magic[..3] == b"ply" {
        parse_ply(reader)?
    } else {
        parse_ascii(reader)?
    };
    if cloud.is_empty() {
        return Err(IoError::EmptyCloud);
    }
    Ok(cloud)
}

fn parse_ascii<R: BufRead>(reader: R) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    let mut intensity: Vec<f32> = Vec::new();
    let mut arity: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IoError::parse(lineno, e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut vals = [0f64; 4];
        let mut count = 0;
        for tok in content.split_whitespace() {
            if count == 4 {
                return Err(IoError::parse(lineno, "too many columns"));
            }
            vals[count] = tok
                .parse::<f64>()
                .map_err(|_| IoError::parse(lineno, format!("invalid number {tok:?}")))?;
            if !vals[count].is_finite() {
                return Err(IoError::parse(lineno, "non-finite value"));
            }
            count += 1;
        }
        if count < 3 {
            return Err(IoError::parse(lineno, "expected x y z [intensity]"));
        }
        match arity {
            None => arity = Some(count),
            Some(a) if a != count => {
                return Err(IoError::parse(
                    lineno,
                    format!("expected {a} columns, found {count}"),
                ))
            }
            _ => {}
        }
        points.push(Point3::new(vals[0], vals[1], vals[2]));
        if count == 4 {
            intensity.push(vals[3] as f32);
        }
    }
    let n = points.len();
    Ok(PointCloud {
        points,
        intensity: (arity == Some(4)).then_some(intensity),
        wall_label: vec![None; n],
    })
}

#[derive(Clone, Copy)]
enum Field {
    X,
    Y,
    Z,
    Intensity,
    Skip,
}

fn type_size(ty: &str) -> Option<usize> {
    Some(match ty {
        "char" | "uchar" | "int8" | "uint8" => 1,
        "short" | "ushort" | "int16" | "uint16" => 2,
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => 4,
        "double" | "float64" => 8,
        _ => return None,
    })
}

fn parse_ply<R: BufRead>(mut reader: R) -> Result<PointCloud, IoError> {
    let mut lineno = 0;
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut layout: Vec<(Field, usize)> = Vec::new();
    loop {
        let mut line = String::new();
        lineno += 1;
        let read = reader
            .read_line(&mut line)
            .map_err(|e| IoError::parse(lineno, e.to_string()))?;
        if read == 0 {
            return Err(IoError::parse(lineno, "unexpected end of PLY header"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] | [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(IoError::parse(lineno, format!("unsupported PLY format {other}")))
            }
            ["element", "vertex", n] => {
                vertex_count = Some(
                    n.parse()
                        .map_err(|_| IoError::parse(lineno, "invalid vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(IoError::parse(lineno, "list properties on vertices unsupported"))
            }
            ["property", ty, name] if in_vertex => {
                let size =
                    type_size(ty).ok_or_else(|| IoError::parse(lineno, format!("unknown type {ty}")))?;
                let field = match (*name, *ty) {
                    ("x", "double" | "float64") => Field::X,
                    ("y", "double" | "float64") => Field::Y,
                    ("z", "double" | "float64") => Field::Z,
                    ("x" | "y" | "z", _) => return Err(IoError::parse(lineno, "coordinates must be double")),
                    ("intensity", "float" | "float32") => Field::Intensity,
                    _ => Field::Skip,
                };
                layout.push((field, size));
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(IoError::parse(lineno, format!("unexpected header line {line:?}"))),
        }
    }
    let n = vertex_count.ok_or_else(|| IoError::parse(lineno, "missing vertex element"))?;
    let has = |f: fn(&Field) -> bool| layout.iter().any(|(x, _)| f(x));
    if !(has(|f| matches!(f, Field::X)) && has(|f| matches!(f, Field::Y)) && has(|f| matches!(f, Field::Z))) {
        return Err(IoError::parse(lineno, "vertex element lacks x/y/z"));
    }
    let with_intensity = has(|f| matches!(f, Field::Intensity));
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(if with_intensity { n } else { 0 });
    let mut skip = [0u8; 8];
    for v in 0..n {
        let mut p = [0f64; 3];
        for (field, size) in &layout {
            let err = |_| IoError::parse(lineno, format!("truncated PLY body at vertex {v}"));
            match field {
                Field::X => p[0] = reader.read_f64::<LittleEndian>().map_err(err)?,
                Field::Y => p[1] = reader.read_f64::<LittleEndian>().map_err(err)?,
                Field::Z => p[2] = reader.read_f64::<LittleEndian>().map_err(err)?,
                Field::Intensity => intensity.push(reader.read_f32::<LittleEndian>().map_err(err)?),
                Field::Skip => reader.read_exact(&mut skip[..*size]).map_err(err)?,
            }
        }
        if !p.iter().all(|c| c.is_finite()) {
            return Err(IoError::parse(
                lineno,
                format!("non-finite coordinate at vertex {v}"),
            ));
        }
        points.push(Point3::new(p[0], p[1], p[2]));
    }
    Ok(PointCloud {
        points,
        intensity: with_intensity.then_some(intensity),
        wall_label: vec![None; n],
    })
}

pub fn write_point_cloud_ascii(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, p) in cloud.points.iter().enumerate() {
        let res = match &cloud.intensity {
            Some(int) => writeln!(w, "{:.6} {:.6} {:.6} {:.6}", p.x, p.y, p.z, int[i]),
            None => writeln!(w, "{:.6} {:.6} {:.6}", p.x, p.y, p.z),
        };
        res.map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_point_cloud_ply(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| IoError::io(path, e);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    )
    .map_err(io)?;
    if cloud.intensity.is_some() {
        writeln!(w, "property float intensity").map_err(io)?;
    }
    writeln!(w, "end_header").map_err(io)?;
    for (i, p) in cloud.points.iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            w.write_f64::<LittleEndian>(c).map_err(io)?;
        }
        if let Some(int) = &cloud.intensity {
            w.write_f32::<LittleEndian>(int[i]).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
