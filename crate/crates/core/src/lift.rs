//! From a solution `U(X, Y)` of the linear equation to a solution `u(x, y)` of
//! the Monge-Ampère equation: parametric lift through the contact map,
//! residual verification, resampling onto a regular `(x, y)` grid, and the
//! whole classify-solve-lift pipeline.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equations::{
    catalog_get, classify, equation_from_class_function, linear_coefficient, residual, ClassTest, Classification,
    EquationError, LinearizableClass, MAEquation, Route,
};
use crate::expr::{EvalError, Expr};
use crate::fields::{fd_jet, format_real, parse_real, sample, FieldError, Geometry, Grid2, Jet2, MaskedGrid2, Rect};
use crate::linsolve::{solve_dirichlet, BoundarySpec, EllipticProblem, LinsolveError, SolveReport};
use crate::transforms::{contact_map, DEG_EPS};

const NEWTON_MAX_ITER: usize = 20;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_DAMPING: f64 = 0.5;
const INSIDE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("every one of the {total} source nodes is degenerate; nothing to lift")]
    Empty { total: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One point of a lifted surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedSample {
    #[serde(rename = "X")]
    pub cap_x: f64,
    #[serde(rename = "Y")]
    pub cap_y: f64,
    pub x: f64,
    pub y: f64,
    /// Jet of `u` at `(x, y)`.
    pub jet: Jet2,
    pub jacobian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftPath {
    /// Jets by symbolic differentiation.
    Symbolic,
    /// Jets by central differences on a solved grid.
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiftSource {
    Expr(Expr),
    Grid(Geometry),
}

/// Samples on a structured `(X, Y)` mesh; `None` marks a degenerate node.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSurface {
    pub nx: usize,
    pub ny: usize,
    pub samples: Vec<Option<LiftedSample>>,
    pub source: LiftSource,
    /// Nodes dropped because `U_X`, `U_YY` or the jacobian vanished.
    pub degenerate: usize,
}

impl LiftedSurface {
    pub fn path(&self) -> LiftPath {
        match self.source {
            LiftSource::Expr(_) => LiftPath::Symbolic,
            LiftSource::Grid(_) => LiftPath::Grid,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&LiftedSample> {
        self.samples[j * self.nx + i].as_ref()
    }

    pub fn valid(&self) -> impl Iterator<Item = &LiftedSample> {
        self.samples.iter().flatten()
    }

    pub fn mask_fraction(&self) -> f64 {
        1.0 - self.valid().count() as f64 / self.samples.len() as f64
    }

    /// `# lifted` header, a column line, then one row per valid sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# lifted\nX,Y,x,y,u,ux,uy,uxx,uxy,uyy,jac\n");
        for s in self.valid() {
            let row = [s.cap_x, s.cap_y, s.x, s.y]
                .into_iter()
                .chain(s.jet.as_array())
                .chain([s.jacobian])
                .map(format_real)
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    /// Bounding box of the image points.
    pub fn image_bounds(&self) -> Option<Rect> {
        self.valid().fold(None, |acc, s| {
            Some(match acc {
                None => Rect::new(s.x, s.x, s.y, s.y),
                Some(r) => Rect::new(r.x0.min(s.x), r.x1.max(s.x), r.y0.min(s.y), r.y1.max(s.y)),
            })
        })
    }
}

/// Reads the rows written by [`LiftedSurface::to_csv`].
pub fn read_lifted_samples(reader: impl Read) -> Result<Vec<LiftedSample>, LiftError> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let lineno = k + 1;
        if line.is_empty() || line.starts_with('#') || line.starts_with('X') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| {
                parse_real(t.trim()).ok_or_else(|| LiftError::Format {
                    line: lineno,
                    message: format!("`{}` is not a number", t.trim()),
                })
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 11 {
            return Err(LiftError::Format {
                line: lineno,
                message: format!("expected 11 columns, found {}", vals.len()),
            });
        }
        out.push(LiftedSample {
            cap_x: vals[0],
            cap_y: vals[1],
            x: vals[2],
            y: vals[3],
            jet: Jet2::new(vals[4], vals[5], vals[6], vals[7], vals[8], vals[9]),
            jacobian: vals[10],
        });
    }
    Ok(out)
}

fn lift_jet(jet: &Jet2, cap_x: f64, cap_y: f64) -> Option<LiftedSample> {
    match contact_map(jet, cap_x, cap_y) {
        Ok(img) if img.jacobian.abs() > DEG_EPS => Some(LiftedSample {
            cap_x,
            cap_y,
            x: img.x,
            y: img.y,
            jet: img.jet,
            jacobian: img.jacobian,
        }),
        _ => None,
    }
}

fn finish(nx: usize, ny: usize, samples: Vec<Option<LiftedSample>>, source: LiftSource) -> Result<LiftedSurface, LiftError> {
    let degenerate = samples.iter().filter(|s| s.is_none()).count();
    if degenerate == samples.len() {
        return Err(LiftError::Empty { total: samples.len() });
    }
    Ok(LiftedSurface {
        nx,
        ny,
        samples,
        source,
        degenerate,
    })
}

/// Lifts a closed-form `U(X, Y)` at every node of `mesh` using exact jets.
pub fn lift_expr(u: &Expr, mesh: &Geometry) -> Result<LiftedSurface, LiftError> {
    mesh.validate()?;
    let jets = crate::fields::JetExprs::new(u, ("X", "Y"));
    let mut samples = Vec::with_capacity(mesh.len());
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let (cx, cy) = (mesh.x(i), mesh.y(j));
            samples.push(lift_jet(&jets.eval(cx, cy)?, cx, cy));
        }
    }
    finish(mesh.nx, mesh.ny, samples, LiftSource::Expr(u.clone()))
}

/// Lifts a gridded `U`, using central-difference jets at interior nodes.
/// The result has `(nx - 2) x (ny - 2)` nodes.
pub fn lift_grid(u: &Grid2) -> Result<LiftedSurface, LiftError> {
    let geo = *u.geometry();
    geo.require_stencil()?;
    let (nx, ny) = (geo.nx - 2, geo.ny - 2);
    let mut samples = Vec::with_capacity(nx * ny);
    for j in 1..geo.ny - 1 {
        for i in 1..geo.nx - 1 {
            let s = match fd_jet(u, i, j) {
                Ok(jet) => lift_jet(&jet, geo.x(i), geo.y(j)),
                Err(FieldError::Masked { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            samples.push(s);
        }
    }
    finish(nx, ny, samples, LiftSource::Grid(geo))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub equation_id: String,
    pub samples: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub path: LiftPath,
    pub mask_fraction: f64,
    /// Samples at which the right-hand side could not be evaluated.
    pub failed: usize,
}

/// Monge-Ampère residual of `eq` at every lifted sample.
pub fn verify_lift(s: &LiftedSurface, eq: &MAEquation) -> VerificationReport {
    let mut failed = 0;
    let mut residuals = Vec::new();
    for p in s.valid() {
        match residual(eq, &p.jet, p.x, p.y) {
            Ok(r) if r.is_finite() => residuals.push(r.abs()),
            _ => failed += 1,
        }
    }
    let max_abs = residuals.iter().copied().fold(0.0, f64::max);
    let mean_abs = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().sum::<f64>() / residuals.len() as f64
    };
    VerificationReport {
        equation_id: eq.id.clone(),
        samples: residuals.len(),
        max_abs,
        mean_abs,
        path: s.path(),
        mask_fraction: s.mask_fraction(),
        failed,
    }
}

/// Image quadrilaterals of the source mesh.
struct CellMesh<'a> {
    s: &'a LiftedSurface,
    cx: usize,
    cy: usize,
    valid: Vec<bool>,
}

impl<'a> CellMesh<'a> {
    fn new(s: &'a LiftedSurface) -> Self {
        let (cx, cy) = (s.nx.saturating_sub(1), s.ny.saturating_sub(1));
        let mut valid = Vec::with_capacity(cx * cy);
        for j in 0..cy {
            for i in 0..cx {
                let corners = [s.get(i, j), s.get(i + 1, j), s.get(i + 1, j + 1), s.get(i, j + 1)];
                // a missing corner or a sign change of the jacobian means the cell straddles a fold
                let ok = match corners {
                    [Some(a), Some(b), Some(c), Some(d)] => {
                        let sign = a.jacobian.signum();
                        [b, c, d].iter().all(|p| p.jacobian.signum() == sign)
                    }
                    _ => false,
                };
                valid.push(ok);
            }
        }
        CellMesh { s, cx, cy, valid }
    }

    fn corners(&self, i: usize, j: usize) -> [&LiftedSample; 4] {
        let g = |a, b| self.s.get(a, b).expect("valid cell has all corners");
        [g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1)]
    }

    fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[j * self.cx + i]
    }

    /// Local coordinates of `(x, y)` in cell `(i, j)` by damped Newton on the bilinear map.
    fn invert(&self, i: usize, j: usize, x: f64, y: f64) -> Option<(f64, f64)> {
        let [p00, p10, p11, p01] = self.corners(i, j);
        let map = |s: f64, t: f64| {
            let w = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
            (
                w[0] * p00.x + w[1] * p10.x + w[2] * p11.x + w[3] * p01.x,
                w[0] * p00.y + w[1] * p10.y + w[2] * p11.y + w[3] * p01.y,
            )
        };
        let tol = NEWTON_TOL * (1.0 + x.abs().max(y.abs()));
        let (mut s, mut t) = (0.5, 0.5);
        let (mx, my) = map(s, t);
        let (mut rx, mut ry) = (x - mx, y - my);
        for _ in 0..NEWTON_MAX_ITER {
            let norm = rx.abs().max(ry.abs());
            if norm <= tol {
                return Some((s, t));
            }
            let xs = (1.0 - t) * (p10.x - p00.x) + t * (p11.x - p01.x);
            let ys = (1.0 - t) * (p10.y - p00.y) + t * (p11.y - p01.y);
            let xt = (1.0 - s) * (p01.x - p00.x) + s * (p11.x - p10.x);
            let yt = (1.0 - s) * (p01.y - p00.y) + s * (p11.y - p10.y);
            let det = xs * yt - xt * ys;
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            let (mut ds, mut dt) = ((yt * rx - xt * ry) / det, (xs * ry - ys * rx) / det);
            let mut accepted = false;
            for _ in 0..8 {
                let (mx, my) = map(s + ds, t + dt);
                let (nrx, nry) = (x - mx, y - my);
                if nrx.abs().max(nry.abs()) < norm || nrx.abs().max(nry.abs()) <= tol {
                    s += ds;
                    t += dt;
                    rx = nrx;
                    ry = nry;
                    accepted = true;
                    break;
                }
                ds *= NEWTON_DAMPING;
                dt *= NEWTON_DAMPING;
            }
            if !accepted {
                return None;
            }
        }
        (rx.abs().max(ry.abs()) <= tol).then_some((s, t))
    }

    fn inside(s: f64, t: f64) -> bool {
        (-INSIDE_TOL..=1.0 + INSIDE_TOL).contains(&s) && (-INSIDE_TOL..=1.0 + INSIDE_TOL).contains(&t)
    }

    fn interpolate(&self, i: usize, j: usize, s: f64, t: f64) -> f64 {
        let [p00, p10, p11, p01] = self.corners(i, j);
        (1.0 - s) * (1.0 - t) * p00.jet.u + s * (1.0 - t) * p10.jet.u + s * t * p11.jet.u + (1.0 - s) * t * p01.jet.u
    }

    /// Walks from `start` towards the point, then falls back to a full scan.
    fn locate(&self, start: (usize, usize), x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        let (mut i, mut j) = start;
        for _ in 0..self.cx + self.cy + 2 {
            if !self.is_valid(i, j) {
                break;
            }
            let Some((s, t)) = self.invert(i, j, x, y) else { break };
            if Self::inside(s, t) {
                return Some((i, j, s, t));
            }
            let step = |k: usize, v: f64, n: usize| -> Option<usize> {
                if v < -INSIDE_TOL {
                    k.checked_sub(1)
                } else if v > 1.0 + INSIDE_TOL {
                    (k + 1 < n).then_some(k + 1)
                } else {
                    Some(k)
                }
            };
            match (step(i, s, self.cx), step(j, t, self.cy)) {
                (Some(ni), Some(nj)) => {
                    i = ni;
                    j = nj;
                }
                _ => break,
            }
        }
        self.scan(x, y)
    }

    fn scan(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        for j in 0..self.cy {
            for i in 0..self.cx {
                if !self.is_valid(i, j) {
                    continue;
                }
                let c = self.corners(i, j);
                let (lo_x, hi_x) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
                let (lo_y, hi_y) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
                let pad = 1e-9 * (1.0 + (hi_x - lo_x).max(hi_y - lo_y));
                if x < lo_x - pad || x > hi_x + pad || y < lo_y - pad || y > hi_y + pad {
                    continue;
                }
                if let Some((s, t)) = self.invert(i, j, x, y) {
                    if Self::inside(s, t) {
                        return Some((i, j, s, t));
                    }
                }
            }
        }
        None
    }
}

/// Tabulates `u` on a regular `(x, y)` grid by inverting the bilinear image of
/// each source cell. Points outside the image or inside fold cells are masked.
pub fn resample(s: &LiftedSurface, target: &Geometry) -> Result<MaskedGrid2, FieldError> {
    target.validate()?;
    let mesh = CellMesh::new(s);
    let mut values = Vec::with_capacity(target.len());
    let mut hint = (0, 0);
    for j in 0..target.ny {
        for i in 0..target.nx {
            let (x, y) = (target.x(i), target.y(j));
            let found = if mesh.cx == 0 || mesh.cy == 0 {
                None
            } else {
                mesh.locate(hint, x, y)
            };
            values.push(found.map(|(ci, cj, a, b)| {
                hint = (ci, cj);
                mesh.interpolate(ci, cj, a, b)
            }));
        }
    }
    MaskedGrid2::new(*target, values)
}

/// Either a catalog id or a class function `f(u, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassSpec {
    Id(String),
    F(Expr),
}

/// Target grid for resampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub nx: usize,
    pub ny: usize,
    #[serde(flatten)]
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub class: ClassSpec,
    /// Domain of the linear problem in `(X, Y)`.
    pub domain: Rect,
    pub boundary: BoundarySpec,
    pub nx: usize,
    pub ny: usize,
    /// Defaults to the bounding box of the lifted image at `nx x ny`.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_max_iter() -> usize {
    200_000
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("classify: {0}")]
    Classify(#[from] EquationError),
    #[error("classify: equation `{id}` is not in the linearizable class ({test:?} test failed)")]
    NotInClass { id: String, test: ClassTest },
    #[error("classify: equation `{id}` has constant right-hand side; it is linearized by the Ampère step alone")]
    AmpereOnly { id: String },
    #[error("solve: {0}")]
    Solve(#[from] LinsolveError),
    #[error("lift: {0}")]
    Lift(#[from] LiftError),
    #[error("resample: {0}")]
    Resample(FieldError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Classify(_) | PipelineError::NotInClass { .. } | PipelineError::AmpereOnly { .. } => "classify",
            PipelineError::Solve(_) => "solve",
            PipelineError::Lift(_) => "lift",
            PipelineError::Resample(_) => "resample",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub equation: MAEquation,
    pub class: LinearizableClass,
    pub coefficient: Expr,
    pub solution: Grid2,
    pub solve: SolveReport,
    pub surface: LiftedSurface,
    pub resampled: MaskedGrid2,
    pub verification: VerificationReport,
}

/// classify, build `f(X, Y)`, solve the Dirichlet problem, lift, resample, verify.
pub fn pipeline(cfg: &PipelineConfig, seed: u64) -> Result<PipelineOutput, PipelineError> {
    let equation = match &cfg.class {
        ClassSpec::Id(id) => catalog_get(id)?,
        ClassSpec::F(f) => equation_from_class_function("custom", f)?,
    };
    let class = match classify(&equation, seed)? {
        Classification::InClass(c) if c.route == Route::ContactChain => c,
        Classification::InClass(_) => return Err(PipelineError::AmpereOnly { id: equation.id }),
        Classification::NotInClass { test, .. } => return Err(PipelineError::NotInClass { id: equation.id, test }),
    };
    let coefficient = linear_coefficient(&class);

    let geom = cfg.domain.grid(cfg.nx, cfg.ny).map_err(LinsolveError::from)?;
    let fgrid = sample(&coefficient, ("X", "Y"), &geom).map_err(LinsolveError::from)?;
    let zero = Grid2::filled(geom, 0.0).map_err(LinsolveError::from)?;
    let boundary = match &cfg.boundary {
        BoundarySpec::All(e) => crate::linsolve::Boundary::from_expr(&geom, e),
        BoundarySpec::Edges { bottom, top, left, right } => {
            crate::linsolve::Boundary::from_edges(&geom, [bottom, top, left, right])
        }
    }
    .map_err(LinsolveError::from)?;
    let problem = EllipticProblem::new(fgrid, zero, boundary)?;
    let tol = cfg.tol.unwrap_or_else(|| problem.default_tol());
    let (solution, solve) = solve_dirichlet(&problem, tol, cfg.max_iter)?;

    let surface = lift_grid(&solution)?;
    let target = match cfg.target {
        Some(t) => t.rect.grid(t.nx, t.ny),
        None => {
            let r = surface.image_bounds().expect("lift_grid never returns an empty surface");
            r.grid(cfg.nx, cfg.ny)
        }
    }
    .map_err(PipelineError::Resample)?;
    let resampled = resample(&surface, &target).map_err(PipelineError::Resample)?;
    let verification = verify_lift(&surface, &equation);
    Ok(PipelineOutput {
        equation,
        class,
        coefficient,
        solution,
        solve,
        surface,
        resampled,
        verification,
    })
}
