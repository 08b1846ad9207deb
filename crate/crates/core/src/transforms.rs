//! The elementary transformations and their composition.
//!
//! Starting from a function `U(X, Y)` the chain is
//!
//! ```text
//! rotation   tau = -Y, sigma = X, Z = -U
//! Legendre   xi = Z_tau, eta = Z_sigma, W = tau Z_tau + sigma Z_sigma - Z
//! point      alpha = xi, beta = 1/eta, V = W/eta
//! Ampere     x = alpha, y = V_beta, u = V - beta V_beta
//! ```
//!
//! and collapses to the contact map `x = U_Y, y = U - Y U_Y, u = X`.
//! Every step is implemented on second-order jets so the composite can be
//! checked against the closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::fields::{format_real, FieldError, Geometry, Grid2, Jet2};

/// Threshold below which `|U_X|`, `|U_YY|` and the other pivots count as zero.
pub const DEG_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("degenerate jet: |{which}| = {value:e} is within the degeneracy threshold")]
    DegenerateJet { which: &'static str, value: f64 },
    #[error("singular Hessian (determinant {det:e})")]
    SingularHessian { det: f64 },
    #[error("point transformation undefined at eta = 0")]
    ZeroEta,
    #[error("{what} must be strictly increasing (violated at index {index})")]
    NonMonotone { what: &'static str, index: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
    #[error("column {column} folds: discrete slope in beta is not strictly monotone")]
    Fold { column: usize },
    #[error("image jet is not finite")]
    NonFiniteImage,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

fn nondegenerate(which: &'static str, value: f64) -> Result<(), TransformError> {
    if value.abs() <= DEG_EPS || !value.is_finite() {
        Err(TransformError::DegenerateJet { which, value })
    } else {
        Ok(())
    }
}

/// Image of a source point under the contact map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactImage {
    pub x: f64,
    pub y: f64,
    /// Jet of `u` at `(x, y)`.
    pub jet: Jet2,
    /// Determinant of `(X, Y) -> (x, y)`, equal to `-U_X U_YY`.
    pub jacobian: f64,
}

/// Pushes the jet of `U` at `(X, Y)` through `x = U_Y, y = U - Y U_Y, u = X`.
pub fn contact_map(jet: &Jet2, cap_x: f64, cap_y: f64) -> Result<ContactImage, TransformError> {
    let Jet2 {
        u,
        ux,
        uy,
        uxx,
        uxy,
        uyy,
    } = *jet;
    nondegenerate("U_X", ux)?;
    nondegenerate("U_YY", uyy)?;
    let y = cap_y;
    let scale = 1.0 / (ux * ux * ux * uyy);
    let image = Jet2 {
        u: cap_x,
        ux: y / ux,
        uy: 1.0 / ux,
        uxx: (y * y * uxy * uxy - y * y * uxx * uyy - 2.0 * y * ux * uxy + ux * ux) * scale,
        uxy: (y * uxy * uxy - y * uxx * uyy - ux * uxy) * scale,
        uyy: (uxy * uxy - uxx * uyy) * scale,
    };
    if !image.is_finite() {
        return Err(TransformError::NonFiniteImage);
    }
    Ok(ContactImage {
        x: uy,
        y: u - y * uy,
        jet: image,
        jacobian: -ux * uyy,
    })
}

/// Result of the Ampère step `x = alpha, y = V_beta, u = V - beta V_beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpereImage {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    /// `dy/dbeta = V_betabeta`; its sign tells which way the column is traversed.
    pub dy_dbeta: f64,
    /// Jet of `u` at `(x, y)`.
    pub jet: Jet2,
}

pub fn ampere_step(v: &Jet2, alpha: f64, beta: f64) -> Result<AmpereImage, TransformError> {
    nondegenerate("V_betabeta", v.uyy)?;
    let u = v.u - beta * v.uy;
    let jet = Jet2 {
        u,
        ux: v.ux,
        uy: -beta,
        uxx: v.hessian_det() / v.uyy,
        uxy: v.uxy / v.uyy,
        uyy: -1.0 / v.uyy,
    };
    Ok(AmpereImage {
        x: alpha,
        y: v.uy,
        u,
        dy_dbeta: v.uyy,
        jet,
    })
}

/// `alpha = xi, beta = 1/eta, V = W/eta`.
pub fn point_step(xi: f64, eta: f64, w: f64) -> Result<(f64, f64, f64), TransformError> {
    if eta == 0.0 {
        return Err(TransformError::ZeroEta);
    }
    Ok((xi, 1.0 / eta, w / eta))
}

/// Jet form of [`point_step`]: `V(alpha, beta) = beta W(alpha, 1/beta)`.
pub fn point_step_jet(w: &Jet2, xi: f64, eta: f64) -> Result<(f64, f64, Jet2), TransformError> {
    nondegenerate("eta", eta)?;
    let (alpha, beta, v) = point_step(xi, eta, w.u)?;
    let jet = Jet2 {
        u: v,
        ux: beta * w.ux,
        uy: w.u - w.uy / beta,
        uxx: beta * w.uxx,
        uxy: w.ux - w.uxy / beta,
        uyy: w.uyy / (beta * beta * beta),
    };
    Ok((alpha, beta, jet))
}

/// Recovers `(X, Y, U)` from `tau = -Y, sigma = X, Z = -U`.
pub fn rotation_step(tau: f64, sigma: f64, z: f64) -> (f64, f64, f64) {
    (sigma, -tau, -z)
}

/// `(X, Y, U) -> (tau, sigma, Z)`; the inverse relabelling of [`rotation_step`].
pub fn rotation_inverse(cap_x: f64, cap_y: f64, cap_u: f64) -> (f64, f64, f64) {
    (-cap_y, cap_x, -cap_u)
}

/// Jet of `Z(tau, sigma) = -U(sigma, -tau)` from the jet of `U`.
pub fn rotation_jet(jet: &Jet2, cap_x: f64, cap_y: f64) -> (f64, f64, Jet2) {
    let (tau, sigma, z) = rotation_inverse(cap_x, cap_y, jet.u);
    let zj = Jet2 {
        u: z,
        ux: jet.uy,
        uy: -jet.ux,
        uxx: -jet.uyy,
        uxy: jet.uxy,
        uyy: -jet.uxx,
    };
    (tau, sigma, zj)
}

/// Classical Legendre transform of a jet: `x = U_X, y = U_Y, u = X U_X + Y U_Y - U`.
/// The image Hessian is the inverse of the source Hessian.
pub fn legendre_point_map(jet: &Jet2, cap_x: f64, cap_y: f64) -> Result<(f64, f64, Jet2), TransformError> {
    let det = jet.hessian_det();
    if det.abs() <= DEG_EPS || !det.is_finite() {
        return Err(TransformError::SingularHessian { det });
    }
    let image = Jet2 {
        u: cap_x * jet.ux + cap_y * jet.uy - jet.u,
        ux: cap_x,
        uy: cap_y,
        uxx: jet.uyy / det,
        uxy: -jet.uxy / det,
        uyy: jet.uxx / det,
    };
    Ok((jet.ux, jet.uy, image))
}

/// Runs the four elementary steps one after another on the jet of `U`.
///
/// The Jacobian is accumulated as the product of the step determinants, which
/// gives a route to `-U_X U_YY` independent of [`contact_map`].
pub fn compose_chain_jet(jet: &Jet2, cap_x: f64, cap_y: f64) -> Result<ContactImage, TransformError> {
    let (tau, sigma, z) = rotation_jet(jet, cap_x, cap_y);
    // rotation (X, Y) -> (tau, sigma) has determinant 1
    let legendre_det = z.hessian_det();
    let (xi, eta, w) = legendre_point_map(&z, tau, sigma)?;
    let (alpha, beta, v) = point_step_jet(&w, xi, eta)?;
    let point_det = -1.0 / (eta * eta);
    let amp = ampere_step(&v, alpha, beta)?;
    if !amp.jet.is_finite() {
        return Err(TransformError::NonFiniteImage);
    }
    Ok(ContactImage {
        x: amp.x,
        y: amp.y,
        jet: amp.jet,
        jacobian: legendre_det * point_det * amp.dy_dbeta,
    })
}

/// [`compose_chain_jet`] applied to the exact jet of an expression in `(X, Y)`.
pub fn compose_chain(u: &Expr, cap_x: f64, cap_y: f64) -> Result<ContactImage, TransformError> {
    let jet = Jet2::from_expr(u, ("X", "Y"), cap_x, cap_y)?;
    compose_chain_jet(&jet, cap_x, cap_y)
}

/// Discrete convex conjugate evaluated at caller-supplied slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualGrid1 {
    pub slopes: Vec<f64>,
    pub values: Vec<f64>,
    /// Index of the data node attaining each maximum.
    pub argmax: Vec<usize>,
}

fn check_increasing(what: &'static str, v: &[f64]) -> Result<(), TransformError> {
    if let Some(k) = v.iter().position(|x| !x.is_finite()) {
        return Err(TransformError::NonFinite(k));
    }
    match v.windows(2).position(|w| w[1] <= w[0]) {
        Some(k) => Err(TransformError::NonMonotone { what, index: k + 1 }),
        None => Ok(()),
    }
}

/// `values[k] = max_i (slopes[k] * xs[i] - vs[i])`.
///
/// Builds the lower convex hull of the data once, then sweeps it with a single
/// pointer: since slopes increase, the maximizing hull vertex only moves right.
/// Total work is `O(n + m)`.
pub fn discrete_legendre_1d(xs: &[f64], vs: &[f64], slopes: &[f64]) -> Result<DualGrid1, TransformError> {
    if xs.len() != vs.len() {
        return Err(TransformError::Length(format!("{} abscissae, {} values", xs.len(), vs.len())));
    }
    if xs.len() < 2 {
        return Err(TransformError::Length("need at least two data nodes".into()));
    }
    check_increasing("xs", xs)?;
    check_increasing("slopes", slopes)?;
    if let Some(k) = vs.iter().position(|v| !v.is_finite()) {
        return Err(TransformError::NonFinite(k));
    }

    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (xs[b] - xs[a]) * (vs[i] - vs[a]) - (vs[b] - vs[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }

    let mut values = Vec::with_capacity(slopes.len());
    let mut argmax = Vec::with_capacity(slopes.len());
    let mut k = 0;
    for &s in slopes {
        let val = |h: usize| s * xs[hull[h]] - vs[hull[h]];
        while k + 1 < hull.len() && val(k + 1) >= val(k) {
            k += 1;
        }
        values.push(val(k));
        argmax.push(hull[k]);
    }
    Ok(DualGrid1 {
        slopes: slopes.to_vec(),
        values,
        argmax,
    })
}

/// Two-dimensional discrete conjugate `W(xi, eta) = max (xi X + eta Y - g(X, Y))`,
/// computed as a row pass in X followed by a column pass in Y.
pub fn discrete_legendre_2d(g: &Grid2, slopes: &Geometry) -> Result<Grid2, TransformError> {
    let geo = *g.geometry();
    if let Some(k) = g.values().iter().position(|v| !v.is_finite()) {
        return Err(TransformError::NonFinite(k));
    }
    slopes.validate()?;
    let xs: Vec<f64> = (0..geo.nx).map(|i| geo.x(i)).collect();
    let ys: Vec<f64> = (0..geo.ny).map(|j| geo.y(j)).collect();
    let xis: Vec<f64> = (0..slopes.nx).map(|k| slopes.x(k)).collect();
    let etas: Vec<f64> = (0..slopes.ny).map(|l| slopes.y(l)).collect();

    // partial[j][k] = max_i (xi_k X_i - g(X_i, Y_j))
    let mut partial = Vec::with_capacity(geo.ny);
    for row in g.values().chunks(geo.nx) {
        partial.push(discrete_legendre_1d(&xs, row, &xis)?.values);
    }
    let mut out = vec![0.0; slopes.len()];
    let mut column = vec![0.0; geo.ny];
    for k in 0..slopes.nx {
        for (j, c) in column.iter_mut().enumerate() {
            *c = -partial[j][k];
        }
        let dual = discrete_legendre_1d(&ys, &column, &etas)?;
        for (l, v) in dual.values.into_iter().enumerate() {
            out[slopes.index(k, l)] = v;
        }
    }
    Ok(Grid2::new(*slopes, out)?)
}

/// Orientation of a column in the discrete Ampère transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `V_betabeta > 0`: conjugated directly.
    Convex,
    /// `V_betabeta < 0`: `-V` is conjugated and the result negated back.
    Concave,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteredPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    /// Source column (alpha index) and interior row (beta index).
    pub column: usize,
    pub row: usize,
}

/// Output of [`ampere_discrete`]: one column of samples per alpha node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteredSamples {
    pub points: Vec<ScatteredPoint>,
    pub columns: usize,
    /// Interior beta rows per column.
    pub rows: usize,
    pub branches: Vec<Branch>,
}

impl ScatteredSamples {
    pub fn get(&self, column: usize, row: usize) -> &ScatteredPoint {
        &self.points[column * self.rows + row - 1]
    }

    /// `# scattered` header followed by `x,y,u` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# scattered\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", format_real(p.x), format_real(p.y), format_real(p.u)));
        }
        out
    }

    /// `u_xx u_yy - u_xy^2 - rhs` at every sample with a full 3x3 neighbourhood,
    /// from a least-squares quadratic through the nine neighbours.
    pub fn monge_ampere_residuals(&self, rhs: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for c in 1..self.columns.saturating_sub(1) {
            for r in 2..self.rows {
                let centre = self.get(c, r);
                let mut neighbours = Vec::with_capacity(9);
                for dc in [-1isize, 0, 1] {
                    for dr in [-1isize, 0, 1] {
                        neighbours.push(*self.get((c as isize + dc) as usize, (r as isize + dr) as usize));
                    }
                }
                if let Some(det) = quadratic_fit_hessian_det(centre, &neighbours) {
                    out.push((c, r, det - rhs));
                }
            }
        }
        out
    }
}

/// Fits `u = a + b dx + c dy + d dx^2/2 + e dx dy + f dy^2/2` around `centre`
/// and returns `d f - e^2`.
fn quadratic_fit_hessian_det(centre: &ScatteredPoint, pts: &[ScatteredPoint]) -> Option<f64> {
    use nalgebra::{DMatrix, DVector};
    let scale = pts
        .iter()
        .map(|p| (p.x - centre.x).abs().max((p.y - centre.y).abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let mut a = DMatrix::zeros(pts.len(), 6);
    let mut b = DVector::zeros(pts.len());
    for (k, p) in pts.iter().enumerate() {
        let (dx, dy) = ((p.x - centre.x) / scale, (p.y - centre.y) / scale);
        let row = [1.0, dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy];
        for (col, v) in row.into_iter().enumerate() {
            a[(k, col)] = v;
        }
        b[k] = p.u;
    }
    let coef = a.svd(true, true).solve(&b, 1e-14).ok()?;
    let s2 = scale * scale;
    let (d, e, f) = (coef[3] / s2, coef[4] / s2, coef[5] / s2);
    Some(d * f - e * e)
}

/// Discrete Ampère transform of `V(alpha, beta)` sampled on a grid (alpha along x).
///
/// Per column, `y` is the centred difference `V_beta` at interior nodes and
/// `u = V - beta V_beta` is read off the discrete conjugate at slope `y`.
pub fn ampere_discrete(v: &Grid2) -> Result<ScatteredSamples, TransformError> {
    let geo = *v.geometry();
    geo.require_stencil()?;
    let betas: Vec<f64> = (0..geo.ny).map(|j| geo.y(j)).collect();
    let rows = geo.ny - 2;
    let mut points = Vec::with_capacity(geo.nx * rows);
    let mut branches = Vec::with_capacity(geo.nx);
    for i in 0..geo.nx {
        let column: Vec<f64> = (0..geo.ny).map(|j| v.get(i, j)).collect();
        if let Some(k) = column.iter().position(|c| !c.is_finite()) {
            return Err(TransformError::NonFinite(geo.index(i, k)));
        }
        let slopes: Vec<f64> = (1..geo.ny - 1)
            .map(|j| (column[j + 1] - column[j - 1]) / (2.0 * geo.dy))
            .collect();
        let increasing = slopes.windows(2).all(|w| w[1] > w[0]);
        let decreasing = slopes.windows(2).all(|w| w[1] < w[0]);
        let branch = if rows == 1 {
            // a single interior node: orientation from the second difference
            let second = column[2] - 2.0 * column[1] + column[0];
            if second > 0.0 {
                Branch::Convex
            } else if second < 0.0 {
                Branch::Concave
            } else {
                return Err(TransformError::Fold { column: i });
            }
        } else if increasing {
            Branch::Convex
        } else if decreasing {
            Branch::Concave
        } else {
            return Err(TransformError::Fold { column: i });
        };
        let us: Vec<f64> = match branch {
            Branch::Convex => discrete_legendre_1d(&betas, &column, &slopes)?
                .values
                .into_iter()
                .map(|c| -c)
                .collect(),
            Branch::Concave => {
                let neg: Vec<f64> = column.iter().map(|c| -c).collect();
                let neg_slopes: Vec<f64> = slopes.iter().map(|s| -s).collect();
                discrete_legendre_1d(&betas, &neg, &neg_slopes)
                    .map_err(|_| TransformError::Fold { column: i })?
                    .values
            }
        };
        for (r, (y, u)) in slopes.iter().zip(us).enumerate() {
            points.push(ScatteredPoint {
                x: geo.x(i),
                y: *y,
                u,
                column: i,
                row: r + 1,
            });
        }
        branches.push(branch);
    }
    Ok(ScatteredSamples {
        points,
        columns: geo.nx,
        rows,
        branches,
    })
}
