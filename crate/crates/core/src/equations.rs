//! Monge-Ampère equation models `u_xx u_yy - u_xy^2 = F(x, y, u, p, q)` with
//! `p = u_x`, `q = u_y`, their classification into the linearizable class
//! `F = q^4 f(u, p/q)`, and the built-in catalog from finite elasticity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse, Bindings, EvalError, Expr};
use crate::fields::Jet2;
use crate::transforms::legendre_point_map;

/// Variables a right-hand side may mention.
pub const RHS_VARS: [&str; 5] = ["x", "y", "u", "p", "q"];

const SAMPLES: usize = 64;
const HOMOGENEITY_FACTORS: [f64; 3] = [0.5, 2.0, 3.0];
const CLASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquationError {
    #[error("right-hand side mentions `{0}`; only x, y, u, p, q are allowed")]
    UnknownVariable(String),
    #[error("class function mentions `{0}`; only u and s are allowed")]
    UnknownClassVariable(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("g vanishes at s = {s}, so G* = 1/(s^4 g) is undefined")]
    KhabirovZero { s: f64 },
    #[error("g must not be identically zero")]
    KhabirovTrivial,
    #[error("unknown catalog id `{0}`")]
    UnknownId(String),
}

/// `u_xx u_yy - u_xy^2 = F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MAEquation {
    pub id: String,
    #[serde(rename = "F")]
    pub rhs: Expr,
    #[serde(default)]
    pub note: String,
}

impl MAEquation {
    pub fn new(id: &str, rhs: &str, note: &str) -> Self {
        MAEquation {
            id: id.to_string(),
            rhs: parse(rhs).unwrap_or_else(|e| panic!("bad built-in formula {rhs}: {e}")),
            note: note.to_string(),
        }
    }

    pub fn check_variables(&self) -> Result<(), EquationError> {
        match self.rhs.free_vars().into_iter().find(|v| !RHS_VARS.contains(&v.as_str())) {
            Some(v) => Err(EquationError::UnknownVariable(v)),
            None => Ok(()),
        }
    }

    pub fn rhs_at(&self, x: f64, y: f64, u: f64, p: f64, q: f64) -> Result<f64, EvalError> {
        self.rhs.eval(&rhs_bindings(x, y, u, p, q))
    }
}

fn rhs_bindings(x: f64, y: f64, u: f64, p: f64, q: f64) -> Bindings {
    Bindings::from([("x", x), ("y", y), ("u", u), ("p", p), ("q", q)])
}

/// `u_xx u_yy - u_xy^2 - F(x, y, u, u_x, u_y)`.
pub fn residual(eq: &MAEquation, jet: &Jet2, x: f64, y: f64) -> Result<f64, EvalError> {
    let f = eq.rhs_at(x, y, jet.u, jet.ux, jet.uy)?;
    Ok(jet.hessian_det() - f)
}

/// How a right-hand side reaches a linear equation `U_XX + f U_YY = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Full rotation-Legendre-point-Ampère chain; `F = q^4 f(u, p/q)`.
    ContactChain,
    /// Constant `F = c`: the Ampère step alone gives `V_aa + c V_bb = 0`.
    AmpereOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizableClass {
    /// `f(u, s)` with `s = p/q`.
    pub f: Expr,
    /// Whether `F(u, -p, -q) = F(u, p, q)` held at every sample.
    pub even: bool,
    pub route: Route,
    /// Set when `f` is only known on the `q > 0` chart.
    pub chart_warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassTest {
    Evaluable,
    XyIndependence,
    Homogeneity,
}

/// A sample at which a class test failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub p: f64,
    pub q: f64,
    /// What the test compared, e.g. `F` at two `(x, y)` or `F(lambda p, lambda q)` vs `lambda^4 F`.
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    InClass(LinearizableClass),
    NotInClass { test: ClassTest, witness: Witness },
}

impl Classification {
    pub fn class(&self) -> Option<&LinearizableClass> {
        match self {
            Classification::InClass(c) => Some(c),
            Classification::NotInClass { .. } => None,
        }
    }
}

/// JSON report of a classification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub id: String,
    pub in_class: bool,
    pub f: Option<String>,
    pub even: Option<bool>,
    pub route: Option<Route>,
    pub failed_test: Option<ClassTest>,
    pub seed: u64,
    pub witness: Option<Witness>,
}

impl ClassificationReport {
    pub fn new(eq: &MAEquation, c: &Classification, seed: u64) -> Self {
        match c {
            Classification::InClass(cls) => ClassificationReport {
                id: eq.id.clone(),
                in_class: true,
                f: Some(cls.f.to_string()),
                even: Some(cls.even),
                route: Some(cls.route),
                failed_test: None,
                seed,
                witness: None,
            },
            Classification::NotInClass { test, witness } => ClassificationReport {
                id: eq.id.clone(),
                in_class: false,
                f: None,
                even: None,
                route: None,
                failed_test: Some(*test),
                seed,
                witness: Some(witness.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    x: f64,
    y: f64,
    u: f64,
    p: f64,
    q: f64,
}

/// Draws `(x, y, u, p, q)` with `u, p` in `[-2, 2]`, `q` in `[0.2, 2]` and
/// `x, y` in `[0.5, 2]`, away from the origin singularities of the catalog.
fn draw(rng: &mut ChaCha8Rng) -> Sample {
    Sample {
        x: rng.gen_range(0.5..2.0),
        y: rng.gen_range(0.5..2.0),
        u: rng.gen_range(-2.0..2.0),
        p: rng.gen_range(-2.0..2.0),
        q: rng.gen_range(0.2..2.0),
    }
}

fn differs(a: f64, b: f64) -> bool {
    !((a - b).abs() <= CLASS_TOL * (1.0 + b.abs()))
}

/// Numerical membership test for the linearizable class.
///
/// Runs, at 64 samples drawn from `seed`: independence of `x, y`; positive
/// homogeneity of degree 4 in `(p, q)` for `lambda` in {1/2, 2, 3}; evenness
/// under `(p, q) -> (-p, -q)` (recorded only). A right-hand side that is a
/// nonzero constant fails homogeneity but is reported in class through the
/// Ampère-only route.
pub fn classify(eq: &MAEquation, seed: u64) -> Result<Classification, EquationError> {
    eq.check_variables()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Sample> = (0..SAMPLES).map(|_| draw(&mut rng)).collect();
    let eval = |s: &Sample| eq.rhs_at(s.x, s.y, s.u, s.p, s.q);

    let mut values = Vec::with_capacity(SAMPLES);
    for s in &samples {
        match eval(s) {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => return Ok(not_in_class(ClassTest::Evaluable, s, v, v, "F is not finite".into())),
            Err(e) => return Ok(not_in_class(ClassTest::Evaluable, s, f64::NAN, f64::NAN, e.to_string())),
        }
    }

    for (s, &f0) in samples.iter().zip(&values) {
        let moved = Sample {
            x: rng.gen_range(0.5..2.0),
            y: rng.gen_range(0.5..2.0),
            ..*s
        };
        let f1 = eval(&moved).unwrap_or(f64::NAN);
        if differs(f1, f0) {
            let detail = format!("F changes when (x, y) moves to ({}, {})", moved.x, moved.y);
            return Ok(not_in_class(ClassTest::XyIndependence, s, f1, f0, detail));
        }
    }

    let mut homogeneity_failure = None;
    'outer: for (s, &f0) in samples.iter().zip(&values) {
        for lambda in HOMOGENEITY_FACTORS {
            let scaled = Sample {
                p: lambda * s.p,
                q: lambda * s.q,
                ..*s
            };
            let fl = eval(&scaled).unwrap_or(f64::NAN);
            let want = lambda.powi(4) * f0;
            if differs(fl, want) {
                let detail = format!("F(u, {lambda} p, {lambda} q) != {lambda}^4 F(u, p, q)");
                homogeneity_failure = Some(not_in_class(ClassTest::Homogeneity, s, fl, want, detail));
                break 'outer;
            }
        }
    }

    let even = samples.iter().zip(&values).all(|(s, &f0)| {
        let flipped = Sample { p: -s.p, q: -s.q, ..*s };
        eval(&flipped).is_ok_and(|v| !differs(v, f0))
    });

    if let Some(failure) = homogeneity_failure {
        let c = values[0];
        let constant = c != 0.0 && values.iter().all(|v| !differs(*v, c));
        if !constant {
            return Ok(failure);
        }
        return Ok(Classification::InClass(LinearizableClass {
            f: Expr::constant(c),
            even,
            route: Route::AmpereOnly,
            chart_warning: None,
        }));
    }

    let one = Expr::constant(1.0);
    let f = eq
        .rhs
        .subst("x", &one)
        .subst("y", &one)
        .subst("p", &Expr::var("s"))
        .subst("q", &one);
    Ok(Classification::InClass(LinearizableClass {
        f,
        even,
        route: Route::ContactChain,
        chart_warning: (!even).then(|| "F is not even in (p, q); f is valid on the q > 0 chart only".to_string()),
    }))
}

fn not_in_class(test: ClassTest, s: &Sample, lhs: f64, rhs: f64, detail: String) -> Classification {
    Classification::NotInClass {
        test,
        witness: Witness {
            x: s.x,
            y: s.y,
            u: s.u,
            p: s.p,
            q: s.q,
            lhs,
            rhs,
            detail,
        },
    }
}

/// Builds the in-class right-hand side `q^4 f(u, p/q)` from a class function.
pub fn equation_from_class_function(id: &str, f: &Expr) -> Result<MAEquation, EquationError> {
    if let Some(v) = f.free_vars().into_iter().find(|v| v != "u" && v != "s") {
        return Err(EquationError::UnknownClassVariable(v));
    }
    let rhs = Expr::mul(
        Expr::powi(Expr::var("q"), 4),
        f.subst("s", &Expr::div(Expr::var("p"), Expr::var("q"))),
    );
    Ok(MAEquation {
        id: id.to_string(),
        rhs,
        note: format!("q^4 f(u, p/q) with f = {f}"),
    })
}

/// Coefficient of the linear equation `U_XX + f(X, Y) U_YY = 0`: the class
/// function with `(u, s)` renamed to `(X, Y)`.
pub fn linear_coefficient(cls: &LinearizableClass) -> Expr {
    cls.f.rename(&[("u", "X"), ("s", "Y")])
}

/// Khabirov's right-hand side `x^-4 g(y/x)` rewritten as `y^-4 g*(y/x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhabirovCase {
    pub g: Expr,
    /// `g*(s) = s^4 g(s)`.
    pub gstar: Expr,
    /// `G* = 1/g*`.
    #[serde(rename = "Gstar")]
    pub gstar_inv: Expr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhabirovVerification {
    pub seed: u64,
    pub jets: usize,
    /// max |(U_XX U_YY - U_XY^2) F(U_X, U_Y) - 1|
    pub identity_max: f64,
    /// max relative gap between the Hessian determinant and `U_Y^4 G*(U_Y/U_X)`
    pub transformed_rhs_max: f64,
    /// max relative gap between the Legendre image's determinant and `x^-4 g(y/x)`
    pub legendre_max: f64,
    /// max relative gap in `x^-4 g(y/x) = y^-4 g*(y/x)`
    pub rewrite_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KhabirovPush {
    pub case: KhabirovCase,
    /// `u_xx u_yy - u_xy^2 = x^-4 g(y/x)`.
    pub original: MAEquation,
    /// `U_XX U_YY - U_XY^2 = U_Y^4 G*(U_Y/U_X)` in the `(x, y, u, p, q)` variables.
    pub transformed: MAEquation,
    pub verification: KhabirovVerification,
}

/// Builds `g*`, `G*` and the Legendre-transformed equation, then checks the
/// transformation at `jets` seeded jets satisfying the original equation
/// pointwise after the Legendre map.
pub fn khabirov_push(g: &Expr, jets: usize, seed: u64) -> Result<KhabirovPush, EquationError> {
    if let Some(v) = g.free_vars().into_iter().find(|v| v != "s") {
        return Err(EquationError::UnknownClassVariable(v));
    }
    if g.as_const() == Some(0.0) {
        return Err(EquationError::KhabirovTrivial);
    }
    let s = || Expr::var("s");
    let gstar = Expr::mul(Expr::powi(s(), 4), g.clone());
    let gstar_inv = Expr::div(Expr::constant(1.0), gstar.clone());
    let case = KhabirovCase {
        g: g.clone(),
        gstar: gstar.clone(),
        gstar_inv: gstar_inv.clone(),
    };
    let original = MAEquation {
        id: "khabirov".into(),
        rhs: Expr::mul(
            Expr::powi(Expr::var("x"), -4),
            g.subst("s", &Expr::div(Expr::var("y"), Expr::var("x"))),
        ),
        note: format!("x^-4 g(y/x) with g = {g}"),
    };
    let transformed = MAEquation {
        id: "khabirov-transformed".into(),
        rhs: Expr::mul(
            Expr::powi(Expr::var("q"), 4),
            gstar_inv.subst("s", &Expr::div(Expr::var("q"), Expr::var("p"))),
        ),
        note: format!("q^4 G*(q/p) with G* = {gstar_inv}"),
    };

    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = KhabirovVerification {
        seed,
        jets,
        identity_max: 0.0,
        transformed_rhs_max: 0.0,
        legendre_max: 0.0,
        rewrite_max: 0.0,
    };
    let signed = |rng: &mut ChaCha8Rng| {
        let m: f64 = rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    };
    for _ in 0..jets {
        let (ux, uy) = (signed(&mut rng), signed(&mut rng));
        let ratio = uy / ux;
        let g_val = g.eval(&Bindings::from([("s", ratio)]))?;
        if g_val == 0.0 {
            return Err(EquationError::KhabirovZero { s: ratio });
        }
        let f_orig = original.rhs_at(ux, uy, 0.0, 0.0, 0.0)?;
        let uxx: f64 = rng.gen_range(0.5..2.0);
        let uxy: f64 = rng.gen_range(-1.0..1.0);
        // Hessian determinant 1/F at the gradient point
        let uyy = (1.0 / f_orig + uxy * uxy) / uxx;
        let (cx, cy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let jet = Jet2::new(rng.gen_range(-1.0..1.0), ux, uy, uxx, uxy, uyy);
        let det = jet.hessian_det();
        v.identity_max = v.identity_max.max((det * f_orig - 1.0).abs());

        let t = transformed.rhs_at(cx, cy, jet.u, ux, uy)?;
        v.transformed_rhs_max = v.transformed_rhs_max.max(rel(det, t));

        let (x, y, img) = legendre_point_map(&jet, cx, cy).map_err(|_| EvalError::Domain {
            reason: "singular Hessian",
            subtree: "legendre_point_map".into(),
        })?;
        let f_img = original.rhs_at(x, y, img.u, img.ux, img.uy)?;
        v.legendre_max = v.legendre_max.max(rel(img.hessian_det(), f_img));

        let rewritten = uy.powi(-4) * gstar.eval(&Bindings::from([("s", ratio)]))?;
        v.rewrite_max = v.rewrite_max.max(rel(f_orig, rewritten));
    }
    Ok(KhabirovPush {
        case,
        original,
        transformed,
        verification: v,
    })
}

/// The equations of the finite-elasticity setting, written in `(x, y, u, p, q)`.
pub fn catalog() -> Vec<MAEquation> {
    vec![
        MAEquation::new(
            "plane-strain",
            "1",
            "plane strain potential U(X,Y): U_XX U_YY - U_XY^2 = 1",
        ),
        MAEquation::new(
            "plane-strain-class",
            "q^4",
            "class member with f = 1; the contact chain maps it to Laplace's equation",
        ),
        MAEquation::new(
            "inverted-plane-strain",
            "(x^2+y^2)^-2",
            "plane strain potential V(alpha,beta) in inversion coordinates (alpha,beta -> x,y)",
        ),
        MAEquation::new(
            "grad-inversion",
            "(p^2+q^2)^2",
            "plane strain potential W(X,Y) with x = W_X/|grad W|^2, y = -W_Y/|grad W|^2",
        ),
        MAEquation::new(
            "axisym",
            "x/p",
            "axially symmetric potential U(R,Z) (R -> x, U_R -> p)",
        ),
        MAEquation::new(
            "axisym-inverted",
            "x/((x^2+y^2)^2*p)",
            "axially symmetric potential V(alpha,beta) in inversion coordinates",
        ),
        MAEquation::new(
            "membrane",
            "(x^2+y^2)^-2*(x*p+y*q-u)^-1",
            "plane stress membrane potential V(alpha,beta); its Legendre image is general-Au",
        ),
        MAEquation::new("general-A1", "(p^2+q^2)^2", "u_xx u_yy - u_xy^2 = A (u_x^2+u_y^2)^2 with A = 1"),
        MAEquation::new("general-Au", "u*(p^2+q^2)^2", "u_xx u_yy - u_xy^2 = A (u_x^2+u_y^2)^2 with A = u"),
    ]
}

pub fn catalog_get(id: &str) -> Result<MAEquation, EquationError> {
    catalog()
        .into_iter()
        .find(|e| e.id == id)
        .ok_or_else(|| EquationError::UnknownId(id.to_string()))
}
