//! Jets, uniform grids, finite-difference stencils and the grid CSV format.
//!
//! Grids are stored row-major with `x` varying fastest: the value at node
//! `(i, j)` lives at `values[j * nx + i]`. NaN marks a masked cell.

use std::fmt::Write as _;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};

/// Value and derivatives up to second order of a function of two variables.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jet2 {
    pub u: f64,
    pub ux: f64,
    pub uy: f64,
    pub uxx: f64,
    pub uxy: f64,
    pub uyy: f64,
}

impl Jet2 {
    pub fn new(u: f64, ux: f64, uy: f64, uxx: f64, uxy: f64, uyy: f64) -> Self {
        Jet2 { u, ux, uy, uxx, uxy, uyy }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.u, self.ux, self.uy, self.uxx, self.uxy, self.uyy]
    }

    /// `uxx * uyy - uxy^2`.
    pub fn hessian_det(&self) -> f64 {
        self.uxx * self.uyy - self.uxy * self.uxy
    }

    /// Exact jet of `e(vars.0, vars.1)` at `(x, y)` via symbolic differentiation.
    pub fn from_expr(e: &Expr, vars: (&str, &str), x: f64, y: f64) -> Result<Jet2, EvalError> {
        JetExprs::new(e, vars).eval(x, y)
    }
}

/// The six derivative trees of an expression, built once and evaluated many times.
#[derive(Debug, Clone)]
pub struct JetExprs {
    vars: (String, String),
    trees: [Expr; 6],
}

impl JetExprs {
    pub fn new(e: &Expr, vars: (&str, &str)) -> Self {
        let (a, b) = vars;
        let ea = e.diff(a);
        let eb = e.diff(b);
        let trees = [e.clone(), ea.clone(), eb.clone(), ea.diff(a), ea.diff(b), eb.diff(b)];
        JetExprs {
            vars: (a.to_string(), b.to_string()),
            trees,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<Jet2, EvalError> {
        let b = Bindings::new().with(&self.vars.0, x).with(&self.vars.1, y);
        let mut out = [0.0; 6];
        for (slot, t) in out.iter_mut().zip(&self.trees) {
            *slot = t.eval(&b)?;
        }
        Ok(Jet2::new(out[0], out[1], out[2], out[3], out[4], out[5]))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("invalid grid geometry: {0}")]
    Geometry(String),
    #[error("values length {got} does not match nx*ny = {want}")]
    Length { got: usize, want: usize },
    #[error("evaluation failed at node ({i}, {j}): {source}")]
    Eval { i: usize, j: usize, source: EvalError },
    #[error("node ({i}, {j}) is not interior to a {nx}x{ny} grid")]
    Boundary { i: usize, j: usize, nx: usize, ny: usize },
    #[error("stencil at ({i}, {j}) touches a masked cell")]
    Masked { i: usize, j: usize },
}

#[derive(Debug, Error)]
pub enum GridIoError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Shape and placement of a uniform rectangular grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Geometry {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, dx: f64, dy: f64) -> Result<Self, FieldError> {
        let g = Geometry { nx, ny, x0, y0, dx, dy };
        g.validate()?;
        Ok(g)
    }

    /// `nx` by `ny` nodes spanning `[x0, x1] x [y0, y1]` including both ends.
    pub fn spanning(nx: usize, ny: usize, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) -> Result<Self, FieldError> {
        if nx < 2 || ny < 2 {
            return Err(FieldError::Geometry(format!("need at least 2 nodes per axis, got {nx}x{ny}")));
        }
        Geometry::new(nx, ny, x0, y0, (x1 - x0) / (nx - 1) as f64, (y1 - y0) / (ny - 1) as f64)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.nx < 1 || self.ny < 1 {
            return Err(FieldError::Geometry(format!("nx, ny must be >= 1, got {}x{}", self.nx, self.ny)));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(FieldError::Geometry(format!("spacings must be positive, got dx={} dy={}", self.dx, self.dy)));
        }
        if !(self.x0.is_finite() && self.y0.is_finite() && self.dx.is_finite() && self.dy.is_finite()) {
            return Err(FieldError::Geometry("non-finite origin or spacing".into()));
        }
        Ok(())
    }

    /// Stencil operations need at least one interior node.
    pub fn require_stencil(&self) -> Result<(), FieldError> {
        if self.nx < 3 || self.ny < 3 {
            return Err(FieldError::Geometry(format!(
                "stencil operations need nx, ny >= 3, got {}x{}",
                self.nx, self.ny
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    pub fn x1(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y1(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i >= 1 && j >= 1 && i + 1 < self.nx && j + 1 < self.ny
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    geom: Geometry,
    values: Vec<f64>,
}

impl Grid2 {
    pub fn new(geom: Geometry, values: Vec<f64>) -> Result<Self, FieldError> {
        geom.validate()?;
        if values.len() != geom.len() {
            return Err(FieldError::Length {
                got: values.len(),
                want: geom.len(),
            });
        }
        Ok(Grid2 { geom, values })
    }

    pub fn filled(geom: Geometry, value: f64) -> Result<Self, FieldError> {
        Grid2::new(geom, vec![value; geom.len()])
    }

    pub fn from_fn(geom: Geometry, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self, FieldError> {
        geom.validate()?;
        let mut values = Vec::with_capacity(geom.len());
        for j in 0..geom.ny {
            for i in 0..geom.nx {
                values.push(f(geom.x(i), geom.y(j)));
            }
        }
        Ok(Grid2 { geom, values })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.geom.index(i, j)]
    }

    pub fn is_masked(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_nan()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().filter(|v| !v.is_nan()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Samples `e` at every node, binding `vars.0` to x and `vars.1` to y.
pub fn sample(e: &Expr, vars: (&str, &str), geom: &Geometry) -> Result<Grid2, FieldError> {
    geom.validate()?;
    let mut values = Vec::with_capacity(geom.len());
    let mut b = Bindings::new().with(vars.0, 0.0).with(vars.1, 0.0);
    for j in 0..geom.ny {
        for i in 0..geom.nx {
            b.set(vars.0, geom.x(i));
            b.set(vars.1, geom.y(j));
            let v = e.eval(&b).map_err(|source| FieldError::Eval { i, j, source })?;
            values.push(v);
        }
    }
    Grid2::new(*geom, values)
}

/// Second-order central-difference jet at an interior node.
pub fn fd_jet(g: &Grid2, i: usize, j: usize) -> Result<Jet2, FieldError> {
    let geo = g.geometry();
    if !geo.is_interior(i, j) {
        return Err(FieldError::Boundary {
            i,
            j,
            nx: geo.nx,
            ny: geo.ny,
        });
    }
    let at = |di: isize, dj: isize| g.get((i as isize + di) as usize, (j as isize + dj) as usize);
    let mut stencil = [0.0; 9];
    for (k, (di, dj)) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]
        .into_iter()
        .enumerate()
    {
        stencil[k] = at(di, dj);
    }
    if stencil.iter().any(|v| v.is_nan()) {
        return Err(FieldError::Masked { i, j });
    }
    let [sw, s, se, w, c, e, nw, n, ne] = stencil;
    let (dx, dy) = (geo.dx, geo.dy);
    Ok(Jet2 {
        u: c,
        ux: (e - w) / (2.0 * dx),
        uy: (n - s) / (2.0 * dy),
        uxx: (e - 2.0 * c + w) / (dx * dx),
        uxy: (ne - se - nw + sw) / (4.0 * dx * dy),
        uyy: (n - 2.0 * c + s) / (dy * dy),
    })
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn grid(&self, nx: usize, ny: usize) -> Result<Geometry, FieldError> {
        Geometry::spanning(nx, ny, (self.x0, self.x1), (self.y0, self.y1))
    }
}

/// A grid paired with an explicit validity mask (`true` = valid).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedGrid2 {
    grid: Grid2,
    mask: Vec<bool>,
}

impl MaskedGrid2 {
    /// Masked cells are stored as NaN in the underlying grid.
    pub fn new(geom: Geometry, values: Vec<Option<f64>>) -> Result<Self, FieldError> {
        let mask: Vec<bool> = values.iter().map(|v| v.is_some()).collect();
        let raw = values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let grid = Grid2::new(geom, raw)?;
        Ok(MaskedGrid2 { grid, mask })
    }

    pub fn from_grid(grid: Grid2) -> Self {
        let mask = grid.values().iter().map(|v| !v.is_nan()).collect();
        MaskedGrid2 { grid, mask }
    }

    pub fn grid(&self) -> &Grid2 {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.grid.geometry().index(i, j);
        self.mask[k].then(|| self.grid.values()[k])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        1.0 - self.valid_count() as f64 / self.mask.len() as f64
    }

    /// Largest |value - reference(x, y)| over valid cells; `None` when every cell is masked.
    pub fn max_abs_error(&self, mut reference: impl FnMut(f64, f64) -> f64) -> Option<f64> {
        let geo = *self.grid.geometry();
        let mut worst: Option<f64> = None;
        for j in 0..geo.ny {
            for i in 0..geo.nx {
                if let Some(v) = self.get(i, j) {
                    let err = (v - reference(geo.x(i), geo.y(j))).abs();
                    worst = Some(worst.map_or(err, |w| w.max(err)));
                }
            }
        }
        worst
    }

    pub fn fd_jet(&self, i: usize, j: usize) -> Result<Jet2, FieldError> {
        fd_jet(&self.grid, i, j)
    }
}

/// Formats a real with 17 significant digits (lossless for f64); NaN as `nan`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_real(tok: &str) -> Option<f64> {
    let t = tok.trim();
    if t == "nan" {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok().filter(|v| !v.is_nan())
}

/// Serializes a grid in the CSV layout: a `# nx=..,ny=..,x0=..,y0=..,dx=..,dy=..`
/// header followed by `ny` rows of `nx` values.
pub fn grid_to_csv(g: &Grid2) -> String {
    let geo = g.geometry();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# nx={},ny={},x0={},y0={},dx={},dy={}",
        geo.nx,
        geo.ny,
        format_real(geo.x0),
        format_real(geo.y0),
        format_real(geo.dx),
        format_real(geo.dy)
    );
    for row in g.values().chunks(geo.nx) {
        let line: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn grid_from_csv(reader: impl Read) -> Result<Grid2, GridIoError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().ok_or(GridIoError::Format {
        line: 1,
        message: "empty file".into(),
    })??;
    let geom = parse_header(&header)?;
    let mut values = Vec::with_capacity(geom.len());
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split(',').collect();
        if toks.len() != geom.nx {
            return Err(GridIoError::Format {
                line: lineno,
                message: format!("expected {} values, found {}", geom.nx, toks.len()),
            });
        }
        for t in toks {
            let v = parse_real(t).ok_or_else(|| GridIoError::Format {
                line: lineno,
                message: format!("non-numeric token `{}`", t.trim()),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows != geom.ny {
        return Err(GridIoError::Format {
            line: rows + 2,
            message: format!("expected {} rows, found {rows}", geom.ny),
        });
    }
    Ok(Grid2::new(geom, values)?)
}

fn parse_header(line: &str) -> Result<Geometry, GridIoError> {
    let bad = |message: String| GridIoError::Format { line: 1, message };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| bad("header must start with `#`".into()))?;
    let mut fields: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["nx", "ny", "x0", "y0", "dx", "dy"];
    for part in body.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header entry `{}`", part.trim())))?;
        let slot = KEYS
            .iter()
            .position(|key| *key == k.trim())
            .ok_or_else(|| bad(format!("unknown header key `{}`", k.trim())))?;
        let value = parse_real(v).filter(|v| v.is_finite()).ok_or_else(|| bad(format!("bad value for `{}`", k.trim())))?;
        fields[slot] = Some(value);
    }
    let mut vals = [0.0; 6];
    for (k, f) in fields.iter().enumerate() {
        vals[k] = f.ok_or_else(|| bad(format!("missing header key `{}`", KEYS[k])))?;
    }
    let as_count = |v: f64, key: &str| {
        if v.fract() == 0.0 && v > 0.0 {
            Ok(v as usize)
        } else {
            Err(bad(format!("`{key}` must be a positive integer")))
        }
    };
    let geom = Geometry {
        nx: as_count(vals[0], "nx")?,
        ny: as_count(vals[1], "ny")?,
        x0: vals[2],
        y0: vals[3],
        dx: vals[4],
        dy: vals[5],
    };
    geom.validate().map_err(|e| bad(e.to_string()))?;
    Ok(geom)
}

pub fn write_grid(g: &Grid2, path: &Path) -> io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(grid_to_csv(g).as_bytes())?;
    f.sync_all()
}

pub fn read_grid(path: &Path) -> Result<Grid2, GridIoError> {
    grid_from_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn unit3() -> Geometry {
        Geometry::new(3, 3, 0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn sample_product() {
        let g = sample(&parse("X*Y").unwrap(), ("X", "Y"), &unit3()).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 2.0, 4.0]);
    }

    #[test]
    fn sample_points() {
        let g = sample(&parse("X^2-Y^2").unwrap(), ("X", "Y"), &unit3()).unwrap();
        assert_eq!(g.get(1, 1), 0.0);
        let g = sample(&parse("X^2 - Y*arctan(Y)").unwrap(), ("X", "Y"), &unit3()).unwrap();
        assert!((g.get(1, 1) - (1.0 - std::f64::consts::FRAC_PI_4)).abs() < 1e-15);
    }

    #[test]
    fn sample_reports_failing_node() {
        let geo = Geometry::new(3, 3, -1.0, 0.0, 1.0, 1.0).unwrap();
        let err = sample(&parse("ln(X)").unwrap(), ("X", "Y"), &geo).unwrap_err();
        assert!(matches!(err, FieldError::Eval { i: 0, j: 0, .. }));
    }

    #[test]
    fn geometry_rejects_small_or_flat_grids() {
        assert!(Geometry::new(0, 3, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(Geometry::new(2, 3, 0.0, 0.0, 1.0, 1.0).unwrap().require_stencil().is_err());
        assert!(Geometry::new(3, 3, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Grid2::new(unit3(), vec![0.0; 8]).is_err());
    }

    #[test]
    fn stencils_exact_on_bilinear_and_quadratic() {
        let geo = Geometry::new(5, 5, -0.3, 0.7, 0.25, 0.5).unwrap();
        let g = sample(&parse("X*Y").unwrap(), ("X", "Y"), &geo).unwrap();
        let q = sample(&parse("X^2-Y^2").unwrap(), ("X", "Y"), &geo).unwrap();
        for j in 1..4 {
            for i in 1..4 {
                let jet = fd_jet(&g, i, j).unwrap();
                assert!((jet.ux - geo.y(j)).abs() < 1e-12);
                assert!((jet.uy - geo.x(i)).abs() < 1e-12);
                assert!((jet.uxy - 1.0).abs() < 1e-12);
                assert!(jet.uxx.abs() < 1e-12 && jet.uyy.abs() < 1e-12);
                let jq = fd_jet(&q, i, j).unwrap();
                assert!((jq.uxx - 2.0).abs() < 1e-12);
                assert!((jq.uyy + 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_second_derivative_within_taylor_bound() {
        let dx = 0.01;
        let geo = Geometry::new(101, 3, 0.0, 0.0, dx, dx).unwrap();
        let g = sample(&parse("sin(X)").unwrap(), ("X", "Y"), &geo).unwrap();
        let jet = fd_jet(&g, 50, 1).unwrap();
        assert!((jet.uxx + 0.5f64.sin()).abs() <= 1e-4);
    }

    #[test]
    fn fd_jet_rejects_boundary_and_masked() {
        let mut vals = vec![1.0; 16];
        vals[0] = f64::NAN;
        let g = Grid2::new(Geometry::new(4, 4, 0.0, 0.0, 1.0, 1.0).unwrap(), vals).unwrap();
        assert!(matches!(fd_jet(&g, 0, 1), Err(FieldError::Boundary { .. })));
        assert!(matches!(fd_jet(&g, 1, 1), Err(FieldError::Masked { .. })));
        assert!(fd_jet(&g, 2, 2).is_ok());
    }

    #[test]
    fn csv_header_and_rows() {
        let text = "# nx=3,ny=2,x0=0,y0=0,dx=1,dy=1\n1,2,3\n4,5,6\n";
        let g = grid_from_csv(text.as_bytes()).unwrap();
        assert_eq!((g.geometry().nx, g.geometry().ny), (3, 2));
        assert_eq!(g.get(0, 1), 4.0);
        let text = "# nx=3,ny=3,x0=0,y0=0,dx=1,dy=1\n1,2,3\n4,5,6\n7,nan,9\n";
        let g = grid_from_csv(text.as_bytes()).unwrap();
        assert_eq!(g.geometry().nx, 3);
        assert!(g.is_masked(1, 2));
        assert_eq!(g.get(2, 1), 6.0);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let text = "# nx=3,ny=3,x0=0,y0=0,dx=1,dy=1\n1,2,3\n4,5\n7,8,9\n";
        match grid_from_csv(text.as_bytes()) {
            Err(GridIoError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "# nx=3,ny=3,x0=0,y0=0,dx=1,dy=1\n1,2,3\n4,x,6\n7,8,9\n";
        assert!(matches!(grid_from_csv(text.as_bytes()), Err(GridIoError::Format { line: 3, .. })));
        let text = "nx=3,ny=3\n";
        assert!(matches!(grid_from_csv(text.as_bytes()), Err(GridIoError::Format { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip_through_file() {
        let geo = Geometry::new(4, 3, 0.1, -0.2, 1.0 / 3.0, 0.7).unwrap();
        let g = Grid2::from_fn(geo, |x, y| (x * 7.1).sin() * y.exp() / 3.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        write_grid(&g, &path).unwrap();
        let back = read_grid(&path).unwrap();
        assert_eq!(back, g);
    }
}
