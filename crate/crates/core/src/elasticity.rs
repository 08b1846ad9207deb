//! Deformation maps built from potentials, and area/volume preservation checks.
//!
//! Plane kinds map material `(X, Y)` to spatial `(x, y)`:
//!
//! - `from-U`: `x = U_X, y = U_Y`,
//! - `from-V`: `x = V_alpha, y = V_beta` with `(alpha, beta)` the inversion of `(X, Y)`,
//! - `from-W`: `(x, y)` is the inversion of `grad W`.
//!
//! Axisymmetric kinds do the same in the `(R, Z)` half-plane, and the membrane
//! kind is the in-plane part of a plane-stress map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::fields::{format_real, FieldError, JetExprs, Jet2, Rect};
use crate::lift::LiftedSurface;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ElasticityError {
    #[error("inversion undefined at the origin")]
    Origin,
    #[error("grad W vanishes at ({x}, {y})")]
    ZeroGradient { x: f64, y: f64 },
    #[error("potential for kind {kind} mentions `{var}`; expected {expected}")]
    UnknownVariable {
        kind: &'static str,
        var: String,
        expected: &'static str,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeformationKind {
    #[serde(rename = "from-U")]
    FromU,
    #[serde(rename = "from-V")]
    FromV,
    #[serde(rename = "from-W")]
    FromW,
    #[serde(rename = "axisym-U")]
    AxisymU,
    #[serde(rename = "axisym-V")]
    AxisymV,
    #[serde(rename = "membrane")]
    Membrane,
}

impl DeformationKind {
    pub fn name(self) -> &'static str {
        match self {
            DeformationKind::FromU => "from-U",
            DeformationKind::FromV => "from-V",
            DeformationKind::FromW => "from-W",
            DeformationKind::AxisymU => "axisym-U",
            DeformationKind::AxisymV => "axisym-V",
            DeformationKind::Membrane => "membrane",
        }
    }

    /// Variables of the potential.
    pub fn potential_vars(self) -> (&'static str, &'static str) {
        match self {
            DeformationKind::FromU | DeformationKind::FromW => ("X", "Y"),
            DeformationKind::AxisymU => ("R", "Z"),
            DeformationKind::FromV | DeformationKind::AxisymV | DeformationKind::Membrane => ("alpha", "beta"),
        }
    }

    /// Whether the potential lives on the inverted chart.
    pub fn inverted(self) -> bool {
        matches!(self, DeformationKind::FromV | DeformationKind::AxisymV | DeformationKind::Membrane)
    }

    pub fn axisymmetric(self) -> bool {
        matches!(self, DeformationKind::AxisymU | DeformationKind::AxisymV)
    }

    /// What [`PreparedDeformation::jacobian`] measures.
    pub fn measure(self) -> Measure {
        match self {
            DeformationKind::FromU | DeformationKind::FromV | DeformationKind::FromW => Measure::Area,
            DeformationKind::AxisymU | DeformationKind::AxisymV => Measure::Volume,
            DeformationKind::Membrane => Measure::InPlaneArea,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// `det d(x, y)/d(X, Y)`.
    Area,
    /// `(r/R) det d(r, z)/d(R, Z)`.
    Volume,
    /// Area ratio of the in-plane map; the thickness stretch is not modelled.
    InPlaneArea,
}

/// Deformation JSON: `{"kind": ..., "potential": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    pub kind: DeformationKind,
    pub potential: Expr,
}

/// `(X, Y) -> (X, -Y) / (X^2 + Y^2)`; its own inverse.
pub fn inversion_coords(cap_x: f64, cap_y: f64) -> Result<(f64, f64), ElasticityError> {
    let r2 = cap_x * cap_x + cap_y * cap_y;
    if r2 == 0.0 {
        return Err(ElasticityError::Origin);
    }
    Ok((cap_x / r2, -cap_y / r2))
}

/// Derivative matrix of [`inversion_coords`] at `(X, Y)`, rows `(alpha, beta)`.
pub fn inversion_derivative(cap_x: f64, cap_y: f64) -> Result<[[f64; 2]; 2], ElasticityError> {
    let r2 = cap_x * cap_x + cap_y * cap_y;
    if r2 == 0.0 {
        return Err(ElasticityError::Origin);
    }
    let r4 = r2 * r2;
    let a = (cap_y * cap_y - cap_x * cap_x) / r4;
    let b = 2.0 * cap_x * cap_y / r4;
    Ok([[a, -b], [b, a]])
}

type Mat2 = [[f64; 2]; 2];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn hessian(jet: &Jet2) -> Mat2 {
    [[jet.uxx, jet.uxy], [jet.uxy, jet.uyy]]
}

/// Image and jacobian of the `from-W` map given the jet of `W`.
pub fn from_w_image(jet: &Jet2, cap_x: f64, cap_y: f64) -> Result<((f64, f64), f64), ElasticityError> {
    let (x, y) = inversion_coords(jet.ux, jet.uy).map_err(|_| ElasticityError::ZeroGradient { x: cap_x, y: cap_y })?;
    let d = inversion_derivative(jet.ux, jet.uy)?;
    Ok(((x, y), det(&matmul(&d, &hessian(jet)))))
}

/// Monge-Ampère residual of the `from-W` potential: `det Hess W - |grad W|^4`.
pub fn from_w_residual(jet: &Jet2) -> f64 {
    let g2 = jet.ux * jet.ux + jet.uy * jet.uy;
    jet.hessian_det() - g2 * g2
}

/// Where the potential is evaluated for a material point: the point itself,
/// or its inversion for the `V` kinds.
pub fn potential_point(kind: DeformationKind, cap_x: f64, cap_y: f64) -> Result<(f64, f64), ElasticityError> {
    if kind.inverted() {
        inversion_coords(cap_x, cap_y)
    } else {
        Ok((cap_x, cap_y))
    }
}

/// Image, jacobian and Monge-Ampère residual at a material point, given the
/// potential's jet at [`potential_point`].
pub fn deform_jet(kind: DeformationKind, jet: &Jet2, cap_x: f64, cap_y: f64) -> Result<DeformedPoint, ElasticityError> {
    use DeformationKind::*;
    let (al, be) = potential_point(kind, cap_x, cap_y)?;
    let hess = hessian(jet);
    let ((x, y), area) = match kind {
        FromW => from_w_image(jet, cap_x, cap_y)?,
        _ if kind.inverted() => ((jet.ux, jet.uy), det(&matmul(&hess, &inversion_derivative(cap_x, cap_y)?))),
        _ => ((jet.ux, jet.uy), det(&hess)),
    };
    let jacobian = if kind.axisymmetric() { x / cap_x * area } else { area };
    let rho2 = al * al + be * be;
    let hd = jet.hessian_det();
    let ma_residual = match kind {
        FromU => hd - 1.0,
        FromV => hd - 1.0 / (rho2 * rho2),
        FromW => from_w_residual(jet),
        AxisymU => hd - cap_x / jet.ux,
        AxisymV => hd - al / (rho2 * rho2 * jet.ux),
        Membrane => hd - 1.0 / (rho2 * rho2 * (al * jet.ux + be * jet.uy - jet.u)),
    };
    Ok(DeformedPoint {
        cap_x,
        cap_y,
        x,
        y,
        jacobian,
        ma_residual,
    })
}

/// A deformation with its potential's derivatives precomputed.
#[derive(Debug, Clone)]
pub struct PreparedDeformation {
    kind: DeformationKind,
    jets: JetExprs,
}

/// Image of one material point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformedPoint {
    #[serde(rename = "X")]
    pub cap_x: f64,
    #[serde(rename = "Y")]
    pub cap_y: f64,
    pub x: f64,
    pub y: f64,
    /// Area, volume or in-plane area ratio depending on the kind.
    pub jacobian: f64,
    /// The potential's own Monge-Ampère residual at the point.
    pub ma_residual: f64,
}

impl Deformation {
    pub fn new(kind: DeformationKind, potential: Expr) -> Self {
        Deformation { kind, potential }
    }

    pub fn prepare(&self) -> Result<PreparedDeformation, ElasticityError> {
        let (a, b) = self.kind.potential_vars();
        if let Some(var) = self.potential.free_vars().into_iter().find(|v| v != a && v != b) {
            return Err(ElasticityError::UnknownVariable {
                kind: self.kind.name(),
                var,
                expected: match self.kind.potential_vars() {
                    ("X", _) => "X, Y",
                    ("R", _) => "R, Z",
                    _ => "alpha, beta",
                },
            });
        }
        Ok(PreparedDeformation {
            kind: self.kind,
            jets: JetExprs::new(&self.potential, (a, b)),
        })
    }
}

impl PreparedDeformation {
    pub fn kind(&self) -> DeformationKind {
        self.kind
    }

    /// Maps a material point (`(X, Y)` or `(R, Z)`).
    pub fn deform(&self, cap_x: f64, cap_y: f64) -> Result<DeformedPoint, ElasticityError> {
        let (a, b) = potential_point(self.kind, cap_x, cap_y)?;
        deform_jet(self.kind, &self.jets.eval(a, b)?, cap_x, cap_y)
    }

    pub fn jacobian(&self, cap_x: f64, cap_y: f64) -> Result<f64, ElasticityError> {
        Ok(self.deform(cap_x, cap_y)?.jacobian)
    }

    /// Deforms an `n x n` grid of material points over `domain`.
    pub fn deform_grid(&self, domain: &Rect, n: usize) -> Result<Vec<Result<DeformedPoint, ElasticityError>>, ElasticityError> {
        let geo = domain.grid(n, n)?;
        let mut out = Vec::with_capacity(geo.len());
        for j in 0..geo.ny {
            for i in 0..geo.nx {
                out.push(self.deform(geo.x(i), geo.y(j)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompressibilityReport {
    pub kind: DeformationKind,
    pub measure: Measure,
    pub samples: usize,
    /// Points where the map was undefined (origin, zero gradient, evaluation failure).
    pub failed: usize,
    pub max_dev: f64,
    pub mean_dev: f64,
    pub ma_residual_max: f64,
    pub ma_residual_mean: f64,
    pub jacobian_min: f64,
    pub jacobian_max: f64,
}

impl IncompressibilityReport {
    fn from_points(kind: DeformationKind, points: &[DeformedPoint], failed: usize) -> Self {
        let n = points.len().max(1) as f64;
        let devs = points.iter().map(|p| (p.jacobian - 1.0).abs());
        let res = points.iter().map(|p| p.ma_residual.abs());
        IncompressibilityReport {
            kind,
            measure: kind.measure(),
            samples: points.len(),
            failed,
            max_dev: devs.clone().fold(0.0, f64::max),
            mean_dev: devs.sum::<f64>() / n,
            ma_residual_max: res.clone().fold(0.0, f64::max),
            ma_residual_mean: res.sum::<f64>() / n,
            jacobian_min: points.iter().map(|p| p.jacobian).fold(f64::INFINITY, f64::min),
            jacobian_max: points.iter().map(|p| p.jacobian).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Samples the jacobian on an `n x n` grid over `domain` and reports its
/// deviation from 1 next to the potential's Monge-Ampère residual.
pub fn incompressibility_check(d: &Deformation, domain: &Rect, n: usize) -> Result<IncompressibilityReport, ElasticityError> {
    let prepared = d.prepare()?;
    let all = prepared.deform_grid(domain, n)?;
    let failed = all.iter().filter(|r| r.is_err()).count();
    let points: Vec<DeformedPoint> = all.into_iter().flatten().collect();
    Ok(IncompressibilityReport::from_points(d.kind, &points, failed))
}

/// `from-W` check on tabulated jets of `W`, e.g. the samples of a lifted surface
/// where `(x, y, jet)` plays the role of `(X, Y, jet of W)`.
pub fn incompressibility_from_w_jets(jets: impl IntoIterator<Item = (f64, f64, Jet2)>) -> IncompressibilityReport {
    let mut failed = 0;
    let mut points = Vec::new();
    for (cap_x, cap_y, jet) in jets {
        match from_w_image(&jet, cap_x, cap_y) {
            Ok(((x, y), jacobian)) => points.push(DeformedPoint {
                cap_x,
                cap_y,
                x,
                y,
                jacobian,
                ma_residual: from_w_residual(&jet),
            }),
            Err(_) => failed += 1,
        }
    }
    IncompressibilityReport::from_points(DeformationKind::FromW, &points, failed)
}

/// Area ratios of deformed to material cells on a structured mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAreaReport {
    pub cells: usize,
    pub max_dev: f64,
    pub mean_dev: f64,
}

fn shoelace(p: &[(f64, f64); 4]) -> f64 {
    let mut a = 0.0;
    for k in 0..4 {
        let (x0, y0) = p[k];
        let (x1, y1) = p[(k + 1) % 4];
        a += x0 * y1 - x1 * y0;
    }
    0.5 * a
}

/// Compares `area(deformed cell) / area(material cell)` with 1 over every cell
/// of an `nx x ny` mesh whose four corners are all present. Unlike the pointwise
/// jacobian this uses positions only, so it sees how consistently neighbouring
/// samples fit together.
pub fn cell_area_ratios(
    nx: usize,
    ny: usize,
    material: &[Option<(f64, f64)>],
    deformed: &[Option<(f64, f64)>],
) -> CellAreaReport {
    let mut devs = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let ks = [j * nx + i, j * nx + i + 1, (j + 1) * nx + i + 1, (j + 1) * nx + i];
            let corners = |v: &[Option<(f64, f64)>]| -> Option<[(f64, f64); 4]> {
                Some([v[ks[0]]?, v[ks[1]]?, v[ks[2]]?, v[ks[3]]?])
            };
            if let (Some(m), Some(d)) = (corners(material), corners(deformed)) {
                devs.push((shoelace(&d) / shoelace(&m) - 1.0).abs());
            }
        }
    }
    CellAreaReport {
        cells: devs.len(),
        max_dev: devs.iter().copied().fold(0.0, f64::max),
        mean_dev: devs.iter().sum::<f64>() / devs.len().max(1) as f64,
    }
}

/// `from-W` cell check on a lifted surface, taking `(x, y)` as material points
/// and the lifted `u` as `W`.
pub fn lifted_from_w_cells(s: &LiftedSurface) -> CellAreaReport {
    let material: Vec<Option<(f64, f64)>> = s.samples.iter().map(|p| p.map(|p| (p.x, p.y))).collect();
    let deformed: Vec<Option<(f64, f64)>> = s
        .samples
        .iter()
        .map(|p| p.and_then(|p| from_w_image(&p.jet, p.x, p.y).ok().map(|(xy, _)| xy)))
        .collect();
    cell_area_ratios(s.nx, s.ny, &material, &deformed)
}

/// `X,Y,x,y` rows for the points that could be mapped.
pub fn deformed_points_csv(points: &[DeformedPoint]) -> String {
    let mut out = String::from("X,Y,x,y\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_real(p.cap_x),
            format_real(p.cap_y),
            format_real(p.x),
            format_real(p.y)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn plane(kind: DeformationKind, potential: &str) -> PreparedDeformation {
        Deformation::new(kind, parse(potential).unwrap()).prepare().unwrap()
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(inversion_coords(1.0, 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(inversion_coords(0.0, 1.0).unwrap(), (0.0, -1.0));
        let (a, b) = inversion_coords(3.0, 4.0).unwrap();
        assert!((a - 0.12).abs() < 1e-16 && (b + 0.16).abs() < 1e-16);
        assert_eq!(inversion_coords(0.0, 0.0), Err(ElasticityError::Origin));
    }

    #[test]
    fn from_u_examples() {
        let d = plane(DeformationKind::FromU, "(X^2+Y^2)/2");
        let p = d.deform(0.3, -1.7).unwrap();
        assert_eq!((p.x, p.y, p.jacobian), (0.3, -1.7, 1.0));
        let d = plane(DeformationKind::FromU, "X^2+X*Y+Y^2/2");
        let p = d.deform(1.0, 1.0).unwrap();
        assert_eq!((p.x, p.y, p.jacobian), (3.0, 2.0, 1.0));
    }

    #[test]
    fn from_w_unit_gradient_is_fixed() {
        let d = plane(DeformationKind::FromW, "X");
        let p = d.deform(0.4, 0.9).unwrap();
        assert_eq!((p.x, p.y), (1.0, 0.0));
        let d = plane(DeformationKind::FromW, "Y^2");
        assert!(matches!(d.deform(1.0, 0.0), Err(ElasticityError::ZeroGradient { .. })));
    }

    #[test]
    fn incompressibility_reports() {
        let dom = Rect::new(-1.0, 1.0, -1.0, 1.0);
        let r = incompressibility_check(&Deformation::new(DeformationKind::FromU, parse("X^2+X*Y+Y^2/2").unwrap()), &dom, 11)
            .unwrap();
        assert!(r.max_dev <= 1e-12 && r.ma_residual_max <= 1e-12);
        let r = incompressibility_check(&Deformation::new(DeformationKind::FromU, parse("X^2+Y^2").unwrap()), &dom, 11).unwrap();
        assert_eq!((r.max_dev, r.ma_residual_max, r.jacobian_min), (3.0, 3.0, 4.0));
    }

    #[test]
    fn from_v_includes_inversion_factor() {
        // V = (alpha^2 + beta^2)/2 has unit Hessian determinant, so J = (X^2+Y^2)^-2
        let d = plane(DeformationKind::FromV, "(alpha^2+beta^2)/2");
        let p = d.deform(1.0, 1.0).unwrap();
        assert!((p.jacobian - 0.25).abs() < 1e-15);
    }

    #[test]
    fn axisym_u_reports_volume_ratio() {
        // U = R^3/3 + Z^2/2: U_RR U_ZZ = 2R while R/U_R = 1/R
        let d = plane(DeformationKind::AxisymU, "R^3/3+Z^2/2");
        let p = d.deform(2.0, 0.5).unwrap();
        assert_eq!((p.x, p.y), (4.0, 0.5));
        assert_eq!(p.jacobian, 4.0 / 2.0 * 4.0);
        assert_eq!(p.ma_residual, 4.0 - 0.5);
    }

    #[test]
    fn rejects_foreign_variables() {
        let err = Deformation::new(DeformationKind::FromV, parse("X*alpha").unwrap()).prepare().unwrap_err();
        assert!(matches!(err, ElasticityError::UnknownVariable { .. }));
    }

    #[test]
    fn deformation_json() {
        let d: Deformation = serde_json::from_str(r#"{"kind":"from-W","potential":"X^2"}"#).unwrap();
        assert_eq!(d.kind, DeformationKind::FromW);
        let d: Deformation = serde_json::from_str(r#"{"kind":"axisym-V","potential":"alpha"}"#).unwrap();
        assert_eq!(d.kind.measure(), Measure::Volume);
    }
}
