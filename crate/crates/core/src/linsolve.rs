//! Dirichlet solver for `U_XX + f(X, Y) U_YY = g(X, Y)` on a rectangle.
//!
//! Five-point central differences, red-black successive over-relaxation with a
//! fixed factor and a fixed colour order, so identical inputs give bit-identical
//! output.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Bindings, EvalError, Expr};
use crate::fields::{sample, FieldError, Geometry, Grid2};

pub const OMEGA: f64 = 1.5;

#[derive(Debug, Error)]
pub enum LinsolveError {
    #[error("coefficient f = {value} <= 0 at node ({i}, {j}); the problem is not elliptic")]
    NotElliptic { i: usize, j: usize, value: f64 },
    #[error("no convergence after {} iterations (residual {:e})", .report.iterations, .report.residual)]
    NotConverged { report: SolveReport, grid: Box<Grid2> },
    #[error("inconsistent problem: {0}")]
    Shape(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("c2 must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Dirichlet values on the four edges. `bottom`/`top` have `nx` entries and
/// own the corners; `left`/`right` have `ny` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Boundary {
    pub fn from_fn(geom: &Geometry, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let (x1, y1) = (geom.x1(), geom.y1());
        Boundary {
            bottom: (0..geom.nx).map(|i| f(geom.x(i), geom.y0)).collect(),
            top: (0..geom.nx).map(|i| f(geom.x(i), y1)).collect(),
            left: (0..geom.ny).map(|j| f(geom.x0, geom.y(j))).collect(),
            right: (0..geom.ny).map(|j| f(x1, geom.y(j))).collect(),
        }
    }

    /// Samples one expression in `(X, Y)` along every edge.
    pub fn from_expr(geom: &Geometry, e: &Expr) -> Result<Self, EvalError> {
        Boundary::from_edges(geom, [e, e, e, e])
    }

    /// Edge expressions in order bottom, top, left, right. Each sees both `X`
    /// and `Y` bound: the running coordinate and the edge's fixed one.
    pub fn from_edges(geom: &Geometry, edges: [&Expr; 4]) -> Result<Self, EvalError> {
        let at = |e: &Expr, x: f64, y: f64| e.eval(&Bindings::from([("X", x), ("Y", y)]));
        let (x1, y1) = (geom.x1(), geom.y1());
        Ok(Boundary {
            bottom: (0..geom.nx).map(|i| at(edges[0], geom.x(i), geom.y0)).collect::<Result<_, _>>()?,
            top: (0..geom.nx).map(|i| at(edges[1], geom.x(i), y1)).collect::<Result<_, _>>()?,
            left: (0..geom.ny).map(|j| at(edges[2], geom.x0, geom.y(j))).collect::<Result<_, _>>()?,
            right: (0..geom.ny).map(|j| at(edges[3], x1, geom.y(j))).collect::<Result<_, _>>()?,
        })
    }

    fn value(&self, geom: &Geometry, i: usize, j: usize) -> Option<f64> {
        if j == 0 {
            Some(self.bottom[i])
        } else if j + 1 == geom.ny {
            Some(self.top[i])
        } else if i == 0 {
            Some(self.left[j])
        } else if i + 1 == geom.nx {
            Some(self.right[j])
        } else {
            None
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.bottom
            .iter()
            .chain(&self.top)
            .chain(&self.left[1..self.left.len() - 1])
            .chain(&self.right[1..self.right.len() - 1])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticProblem {
    pub fcoeff: Grid2,
    pub source: Grid2,
    pub boundary: Boundary,
}

impl EllipticProblem {
    pub fn new(fcoeff: Grid2, source: Grid2, boundary: Boundary) -> Result<Self, LinsolveError> {
        let geom = *fcoeff.geometry();
        geom.require_stencil()?;
        if *source.geometry() != geom {
            return Err(LinsolveError::Shape("source and coefficient grids differ in geometry".into()));
        }
        if boundary.bottom.len() != geom.nx
            || boundary.top.len() != geom.nx
            || boundary.left.len() != geom.ny
            || boundary.right.len() != geom.ny
        {
            return Err(LinsolveError::Shape("boundary edge lengths do not match the grid".into()));
        }
        for j in 0..geom.ny {
            for i in 0..geom.nx {
                let f = fcoeff.get(i, j);
                if !(f > 0.0) {
                    return Err(LinsolveError::NotElliptic { i, j, value: f });
                }
            }
        }
        Ok(EllipticProblem {
            fcoeff,
            source,
            boundary,
        })
    }

    /// Samples coefficient, source and boundary expressions in `(X, Y)`.
    pub fn from_exprs(geom: &Geometry, fcoeff: &Expr, source: &Expr, boundary: &Expr) -> Result<Self, LinsolveError> {
        let f = sample(fcoeff, ("X", "Y"), geom)?;
        let g = sample(source, ("X", "Y"), geom)?;
        let b = Boundary::from_expr(geom, boundary)?;
        EllipticProblem::new(f, g, b)
    }

    pub fn geometry(&self) -> &Geometry {
        self.fcoeff.geometry()
    }

    /// `1e-10 (1 + max|g|)`.
    pub fn default_tol(&self) -> f64 {
        1e-10 * (1.0 + self.source.max_abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Max-norm of the discrete residual at interior nodes.
    pub residual: f64,
    pub tol: f64,
    pub converged: bool,
    /// Wall time; left out of serialized reports so reruns write identical files.
    #[serde(skip)]
    pub elapsed_seconds: f64,
    pub omega: f64,
}

/// Max-norm of `L U - g` over interior nodes.
pub fn discrete_residual(p: &EllipticProblem, u: &[f64]) -> f64 {
    let geo = p.geometry();
    let (nx, ny) = (geo.nx, geo.ny);
    let (idx2, idy2) = (1.0 / (geo.dx * geo.dx), 1.0 / (geo.dy * geo.dy));
    let (f, g) = (p.fcoeff.values(), p.source.values());
    let mut worst: f64 = 0.0;
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            let lx = (u[k + 1] - 2.0 * u[k] + u[k - 1]) * idx2;
            let ly = (u[k + nx] - 2.0 * u[k] + u[k - nx]) * idy2;
            worst = worst.max((lx + f[k] * ly - g[k]).abs());
        }
    }
    worst
}

/// Red-black SOR until the discrete residual drops to `tol` or `max_iter`
/// sweeps have run. The interior starts from zero.
pub fn solve_dirichlet(p: &EllipticProblem, tol: f64, max_iter: usize) -> Result<(Grid2, SolveReport), LinsolveError> {
    let start = Instant::now();
    let geo = *p.geometry();
    let (nx, ny) = (geo.nx, geo.ny);
    let (idx2, idy2) = (1.0 / (geo.dx * geo.dx), 1.0 / (geo.dy * geo.dy));
    let (f, g) = (p.fcoeff.values(), p.source.values());

    let mut u = vec![0.0; geo.len()];
    for j in 0..ny {
        for i in 0..nx {
            if let Some(b) = p.boundary.value(&geo, i, j) {
                u[j * nx + i] = b;
            }
        }
    }

    let mut residual = discrete_residual(p, &u);
    let mut iterations = 0;
    while residual > tol && iterations < max_iter {
        for colour in 0..2 {
            for j in 1..ny - 1 {
                let first = 1 + (j + 1 + colour) % 2;
                for i in (first..nx - 1).step_by(2) {
                    let k = j * nx + i;
                    let diag = 2.0 * idx2 + 2.0 * f[k] * idy2;
                    let gs = ((u[k + 1] + u[k - 1]) * idx2 + f[k] * (u[k + nx] + u[k - nx]) * idy2 - g[k]) / diag;
                    u[k] += OMEGA * (gs - u[k]);
                }
            }
        }
        iterations += 1;
        residual = discrete_residual(p, &u);
    }

    let report = SolveReport {
        iterations,
        residual,
        tol,
        converged: residual <= tol,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        omega: OMEGA,
    };
    let grid = Grid2::new(geo, u)?;
    if report.converged {
        Ok((grid, report))
    } else {
        Err(LinsolveError::NotConverged {
            report,
            grid: Box::new(grid),
        })
    }
}

/// Whether every interior value lies within the boundary range.
pub fn max_principle_holds(u: &Grid2, boundary: &Boundary, slack: f64) -> bool {
    let (lo, hi) = boundary.min_max();
    let geo = u.geometry();
    (1..geo.ny - 1).all(|j| (1..geo.nx - 1).all(|i| (lo - slack..=hi + slack).contains(&u.get(i, j))))
}

/// Source term `U*_XX + f U*_YY` that makes `ustar` an exact solution.
pub fn mms_source(ustar: &Expr, fcoeff: &Expr) -> Expr {
    let uxx = ustar.diff("X").diff("X");
    let uyy = ustar.diff("Y").diff("Y");
    Expr::add(uxx, Expr::mul(fcoeff.clone(), uyy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// Degree-`n` harmonic polynomial in the stretched coordinates `(X, Y/sqrt(c2))`,
/// i.e. the real or imaginary part of `(X + i Y/sqrt(c2))^n`. It solves
/// `U_XX + c2 U_YY = 0` exactly.
pub fn constant_f_family(c2: f64, n: u32, part: Part) -> Result<Expr, LinsolveError> {
    if !(c2 > 0.0) {
        return Err(LinsolveError::NonPositiveScale(c2));
    }
    let mut terms: Vec<Expr> = Vec::new();
    let mut binom = 1.0f64;
    for k in 0..=n {
        if k > 0 {
            binom = binom * (n - k + 1) as f64 / k as f64;
        }
        // i^k is real for even k and imaginary for odd k
        let wanted = match part {
            Part::Re => k % 2 == 0,
            Part::Im => k % 2 == 1,
        };
        if !wanted {
            continue;
        }
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let coef = sign * binom / c2.powf(k as f64 / 2.0);
        let mut term = Expr::constant(coef);
        if n - k > 0 {
            term = Expr::mul(term, Expr::powi(Expr::var("X"), (n - k) as i32));
        }
        if k > 0 {
            term = Expr::mul(term, Expr::powi(Expr::var("Y"), k as i32));
        }
        terms.push(term);
    }
    Ok(terms.into_iter().reduce(Expr::add).unwrap_or_else(|| Expr::constant(0.0)))
}

/// Edge data of a problem file: one expression for all edges, or one per edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundarySpec {
    All(Expr),
    Edges { bottom: Expr, top: Expr, left: Expr, right: Expr },
}

/// Problem file: grid extent, coefficient, source, boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub f: Expr,
    #[serde(default = "zero_expr")]
    pub source: Expr,
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn zero_expr() -> Expr {
    Expr::constant(0.0)
}

fn default_max_iter() -> usize {
    200_000
}

impl ProblemSpec {
    pub fn geometry(&self) -> Result<Geometry, FieldError> {
        Geometry::spanning(self.nx, self.ny, (self.x0, self.x1), (self.y0, self.y1))
    }

    pub fn build(&self) -> Result<EllipticProblem, LinsolveError> {
        let geom = self.geometry()?;
        let f = sample(&self.f, ("X", "Y"), &geom)?;
        let g = sample(&self.source, ("X", "Y"), &geom)?;
        let b = match &self.boundary {
            BoundarySpec::All(e) => Boundary::from_expr(&geom, e)?,
            BoundarySpec::Edges { bottom, top, left, right } => Boundary::from_edges(&geom, [bottom, top, left, right])?,
        };
        EllipticProblem::new(f, g, b)
    }
}
