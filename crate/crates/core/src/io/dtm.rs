use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::IoError;
use crate::geom::{Point3, Vec3};

const NODATA_OUT: f64 = -9999.0;

/// Regular elevation grid with cell-centred samples.
///
/// `origin_x`/`origin_y` is the lower-left corner of the lower-left cell.
/// `elevations` is row-major with row 0 the northernmost row, as in the
/// ESRI ASCII layout. NaN marks nodata.
#[derive(Debug, Clone, PartialEq)]
pub struct DtmGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub elevations: Vec<f64>,
}

impl DtmGrid {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_cols: usize,
        n_rows: usize,
        elevations: Vec<f64>,
    ) -> Result<Self, IoError> {
        if !(cell_size > 0.0) || n_cols == 0 || n_rows == 0 {
            return Err(IoError::InconsistentDimensions(
                "cell size and dimensions must be positive".into(),
            ));
        }
        if elevations.len() != n_cols * n_rows {
            return Err(IoError::InconsistentDimensions(format!(
                "{} values for a {}x{} grid",
                elevations.len(),
                n_cols,
                n_rows
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            cell_size,
            n_cols,
            n_rows,
            elevations,
        })
    }

    /// Samples `f(x, y)` at every cell centre.
    pub fn from_fn(
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        n_cols: usize,
        n_rows: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut elevations = Vec::with_capacity(n_cols * n_rows);
        for r in 0..n_rows {
            for c in 0..n_cols {
                let p = Self::centre(origin_x, origin_y, cell_size, n_rows, c, r);
                elevations.push(f(p.0, p.1));
            }
        }
        Self {
            origin_x,
            origin_y,
            cell_size,
            n_cols,
            n_rows,
            elevations,
        }
    }

    fn centre(ox: f64, oy: f64, cs: f64, n_rows: usize, c: usize, r: usize) -> (f64, f64) {
        (
            ox + (c as f64 + 0.5) * cs,
            oy + ((n_rows - 1 - r) as f64 + 0.5) * cs,
        )
    }

    pub fn node_xy(&self, col: usize, row: usize) -> (f64, f64) {
        Self::centre(
            self.origin_x,
            self.origin_y,
            self.cell_size,
            self.n_rows,
            col,
            row,
        )
    }

    pub fn value(&self, col: usize, row: usize) -> f64 {
        self.elevations[row * self.n_cols + col]
    }

    /// Valid (non-nodata) nodes in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (0..self.n_cols).filter_map(move |c| {
                let z = self.value(c, r);
                (!z.is_nan()).then(|| {
                    let (x, y) = self.node_xy(c, r);
                    Point3::new(x, y, z)
                })
            })
        })
    }

    /// Bilinear interpolation between the four surrounding cell centres.
    /// `None` outside the lattice of centres or when any corner is nodata.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let (c0, r0s, fx, fy) = self.locate(x, y)?;
        let c1 = (c0 + 1).min(self.n_cols - 1);
        let r1s = (r0s + 1).min(self.n_rows - 1);
        let row = |rs: usize| self.n_rows - 1 - rs;
        let z00 = self.value(c0, row(r0s));
        let z10 = self.value(c1, row(r0s));
        let z01 = self.value(c0, row(r1s));
        let z11 = self.value(c1, row(r1s));
        let z = z00 * (1.0 - fx) * (1.0 - fy) + z10 * fx * (1.0 - fy) + z01 * (1.0 - fx) * fy + z11 * fx * fy;
        (!z.is_nan()).then_some(z)
    }

    /// Upward unit normal of the bilinear surface at `(x, y)`.
    pub fn normal_at(&self, x: f64, y: f64) -> Option<Vec3> {
        let h = 0.25 * self.cell_size;
        let dzdx = (self.height_at(x + h, y)? - self.height_at(x - h, y)?) / (2.0 * h);
        let dzdy = (self.height_at(x, y + h)? - self.height_at(x, y - h)?) / (2.0 * h);
        Some(Vec3::new(-dzdx, -dzdy, 1.0).normalize())
    }

    // Returns (col, row-from-south, frac_x, frac_y).
    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        let gx = (x - self.origin_x) / self.cell_size - 0.5;
        let gy = (y - self.origin_y) / self.cell_size - 0.5;
        let eps = 1e-9;
        let max_x = (self.n_cols - 1) as f64;
        let max_y = (self.n_rows - 1) as f64;
        if !(gx >= -eps && gx <= max_x + eps && gy >= -eps && gy <= max_y + eps) {
            return None;
        }
        let gx = gx.clamp(0.0, max_x);
        let gy = gy.clamp(0.0, max_y);
        let c0 = (gx.floor() as usize).min(self.n_cols.saturating_sub(2));
        let r0 = (gy.floor() as usize).min(self.n_rows.saturating_sub(2));
        Some((c0, r0, gx - c0 as f64, gy - r0 as f64))
    }

    pub fn shift(&mut self, origin: &Vec3) {
        self.origin_x -= origin.x;
        self.origin_y -= origin.y;
        for z in &mut self.elevations {
            *z -= origin.z;
        }
    }
}

pub fn read_dtm(path: &Path) -> Result<DtmGrid, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    parse_dtm(BufReader::new(file))
}

pub(crate) fn parse_dtm<R: BufRead>(reader: R) -> Result<DtmGrid, IoError> {
    let mut ncols = None;
    let mut nrows = None;
    let mut xll = None;
    let mut yll = None;
    let mut centre_ref = (false, false);
    let mut cellsize = None;
    let mut nodata: Option<f64> = None;
    let mut values = Vec::new();
    let mut data_rows = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IoError::parse(lineno, e.to_string()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let first_numeric = toks[0].parse::<f64>().is_ok();
        if !first_numeric {
            if data_rows > 0 {
                return Err(IoError::parse(lineno, "header line after data"));
            }
            if toks.len() != 2 {
                return Err(IoError::parse(lineno, "malformed header line"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| IoError::parse(lineno, format!("invalid header value {s:?}")))
            };
            let int = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| IoError::parse(lineno, format!("invalid header value {s:?}")))
            };
            match toks[0].to_ascii_lowercase().as_str() {
                "ncols" => ncols = Some(int(toks[1])?),
                "nrows" => nrows = Some(int(toks[1])?),
                "xllcorner" => xll = Some(num(toks[1])?),
                "yllcorner" => yll = Some(num(toks[1])?),
                "xllcenter" => {
                    xll = Some(num(toks[1])?);
                    centre_ref.0 = true;
                }
                "yllcenter" => {
                    yll = Some(num(toks[1])?);
                    centre_ref.1 = true;
                }
                "cellsize" => cellsize = Some(num(toks[1])?),
                "nodata_value" => nodata = Some(num(toks[1])?),
                other => return Err(IoError::parse(lineno, format!("unknown header key {other}"))),
            }
            continue;
        }
        let n_cols = ncols.ok_or_else(|| IoError::parse(lineno, "missing ncols"))?;
        if toks.len() != n_cols {
            return Err(IoError::InconsistentDimensions(format!(
                "line {lineno}: expected {n_cols} values, found {}",
                toks.len()
            )));
        }
        for t in toks {
            let v: f64 = t
                .parse()
                .map_err(|_| IoError::parse(lineno, format!("invalid value {t:?}")))?;
            values.push(match nodata {
                Some(nd) if v == nd => f64::NAN,
                _ => v,
            });
        }
        data_rows += 1;
    }
    let missing = |k: &str| IoError::parse(0, format!("missing header key {k}"));
    let n_cols = ncols.ok_or_else(|| missing("ncols"))?;
    let n_rows = nrows.ok_or_else(|| missing("nrows"))?;
    let cs = cellsize.ok_or_else(|| missing("cellsize"))?;
    let mut ox = xll.ok_or_else(|| missing("xllcorner"))?;
    let mut oy = yll.ok_or_else(|| missing("yllcorner"))?;
    if centre_ref.0 {
        ox -= 0.5 * cs;
    }
    if centre_ref.1 {
        oy -= 0.5 * cs;
    }
    if data_rows != n_rows {
        return Err(IoError::InconsistentDimensions(format!(
            "expected {n_rows} rows, found {data_rows}"
        )));
    }
    DtmGrid::new(ox, oy, cs, n_cols, n_rows, values)
}

pub fn write_dtm(path: &Path, dtm: &DtmGrid) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| IoError::io(path, e);
    writeln!(w, "ncols {}", dtm.n_cols).map_err(io)?;
    writeln!(w, "nrows {}", dtm.n_rows).map_err(io)?;
    writeln!(w, "xllcorner {:.6}", dtm.origin_x).map_err(io)?;
    writeln!(w, "yllcorner {:.6}", dtm.origin_y).map_err(io)?;
    writeln!(w, "cellsize {:.6}", dtm.cell_size).map_err(io)?;
    writeln!(w, "NODATA_value {NODATA_OUT}").map_err(io)?;
    for row in dtm.elevations.chunks(dtm.n_cols) {
        let line: Vec<String> = row
            .iter()
            .map(|z| {
                if z.is_nan() {
                    format!("{NODATA_OUT}")
                } else {
                    format!("{z:.6}")
                }
            })
            .collect();
        writeln!(w, "{}", line.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}
