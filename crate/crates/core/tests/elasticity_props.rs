use ma_lin::elasticity::{
    deform_jet, incompressibility_check, incompressibility_from_w_jets, inversion_coords, inversion_derivative,
    lifted_from_w_cells, Deformation, DeformationKind,
};
use ma_lin::expr::parse;
use ma_lin::fields::Jet2;
use ma_lin::lift::{pipeline, ClassSpec, PipelineConfig};
use ma_lin::linsolve::BoundarySpec;
use ma_lin::Rect;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random jet whose Hessian determinant is exactly `target` (up to rounding).
fn jet_with_det(rng: &mut ChaCha8Rng, ux: f64, uy: f64, target: f64) -> Jet2 {
    let uxx = rng.gen_range(0.3..3.0);
    let uxy = rng.gen_range(-1.0..1.0);
    Jet2::new(rng.gen_range(-1.0..1.0), ux, uy, uxx, uxy, (target + uxy * uxy) / uxx)
}

fn away_from_origin(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let r = rng.gen_range(0.3..3.0);
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * t.cos(), r * t.sin())
}

#[test]
fn inversion_is_an_involution() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let (x, y) = away_from_origin(&mut rng);
        let (a, b) = inversion_coords(x, y).unwrap();
        let (x2, y2) = inversion_coords(a, b).unwrap();
        let scale = x.hypot(y);
        assert!((x2 - x).abs() <= 1e-14 * scale && (y2 - y).abs() <= 1e-14 * scale, "({x}, {y})");
    }
}

#[test]
fn inversion_derivative_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    for _ in 0..100 {
        let (x, y) = away_from_origin(&mut rng);
        let d = inversion_derivative(x, y).unwrap();
        let (ap, bp) = inversion_coords(x + h, y).unwrap();
        let (am, bm) = inversion_coords(x - h, y).unwrap();
        let (aq, bq) = inversion_coords(x, y + h).unwrap();
        let (an, bn) = inversion_coords(x, y - h).unwrap();
        let fd = [[(ap - am) / (2.0 * h), (aq - an) / (2.0 * h)], [(bp - bm) / (2.0 * h), (bq - bn) / (2.0 * h)]];
        let r4 = (x * x + y * y).powi(2);
        for i in 0..2 {
            for j in 0..2 {
                assert!((d[i][j] - fd[i][j]).abs() <= 1e-6 / r4, "({x}, {y}) {d:?} vs {fd:?}");
            }
        }
        let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
        assert!((det * r4 - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn from_u_jacobian_is_the_hessian_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let target = rng.gen_range(-3.0..3.0);
        let jet = jet_with_det(&mut rng, 0.5, -0.5, target);
        let p = deform_jet(DeformationKind::FromU, &jet, 0.7, 0.2).unwrap();
        assert_eq!(p.jacobian, jet.hessian_det());
        assert_eq!((p.x, p.y), (jet.ux, jet.uy));
    }
}

#[test]
fn from_v_jacobian_carries_the_inversion_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (x, y) = away_from_origin(&mut rng);
        let r4 = (x * x + y * y).powi(2);
        let target = rng.gen_range(0.1..3.0);
        let jet = jet_with_det(&mut rng, 1.0, 2.0, target);
        let p = deform_jet(DeformationKind::FromV, &jet, x, y).unwrap();
        let want = jet.hessian_det() / r4;
        assert!((p.jacobian - want).abs() <= 1e-12 * want.abs(), "{} vs {want}", p.jacobian);

        // det Hess V = 1 / (alpha^2 + beta^2)^2 = r^4 at the inverted point
        let jet = jet_with_det(&mut rng, 1.0, 2.0, r4);
        let p = deform_jet(DeformationKind::FromV, &jet, x, y).unwrap();
        assert!((p.jacobian - 1.0).abs() <= 1e-12, "{}", p.jacobian);
        assert!(p.ma_residual.abs() <= 1e-12 * r4);
    }
}

#[test]
fn from_w_jets_solving_the_equation_are_incompressible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jets: Vec<(f64, f64, Jet2)> = (0..200)
        .map(|_| {
            let (wx, wy) = away_from_origin(&mut rng);
            let g4 = (wx * wx + wy * wy).powi(2);
            (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), jet_with_det(&mut rng, wx, wy, g4))
        })
        .collect();
    let r = incompressibility_from_w_jets(jets);
    assert_eq!((r.samples, r.failed), (200, 0));
    assert!(r.max_dev <= 1e-10, "{r:?}");
}

#[test]
fn lifted_surface_gives_an_incompressible_from_w_map() {
    let cfg = |n: usize| PipelineConfig {
        class: ClassSpec::Id("grad-inversion".into()),
        domain: Rect::new(0.5, 1.5, 0.5, 1.5),
        boundary: BoundarySpec::All(parse("X^2-Y*arctan(Y)").unwrap()),
        nx: n,
        ny: n,
        target: None,
        tol: None,
        max_iter: 200_000,
    };
    let (coarse, fine) = (pipeline(&cfg(33), 42).unwrap(), pipeline(&cfg(65), 42).unwrap());
    let points = fine.surface.valid().map(|p| (p.x, p.y, p.jet));
    assert!(incompressibility_from_w_jets(points).max_dev <= 1e-8);
    let (a, b) = (lifted_from_w_cells(&coarse.surface), lifted_from_w_cells(&fine.surface));
    assert!(b.cells > a.cells && b.max_dev < 1e-2);
    assert!((a.max_dev / b.max_dev).log2() >= 1.9, "{a:?} -> {b:?}");
}

fn unit_quadratic() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.2..4.0f64, -2.0..2.0f64).prop_map(|(a, b)| (a, b, (1.0 + b * b) / a))
}

proptest! {
    #[test]
    fn unit_determinant_quadratics_preserve_area((a, b, c) in unit_quadratic()) {
        let u = parse(&format!("{a}*X^2/2+{b}*X*Y+{c}*Y^2/2")).unwrap();
        let r = incompressibility_check(&Deformation::new(DeformationKind::FromU, u), &Rect::new(-1.0, 1.0, -1.0, 1.0), 9)
            .unwrap();
        prop_assert!(r.max_dev <= 1e-12 && r.ma_residual_max <= 1e-12, "{:?}", r);
    }

    #[test]
    fn other_quadratics_are_flagged((a, b, c) in unit_quadratic(), k in 1.1..3.0f64) {
        // scaling the potential by k scales the determinant by k^2
        let u = parse(&format!("{k}*({a}*X^2/2+{b}*X*Y+{c}*Y^2/2)")).unwrap();
        let r = incompressibility_check(&Deformation::new(DeformationKind::FromU, u), &Rect::new(-1.0, 1.0, -1.0, 1.0), 5)
            .unwrap();
        prop_assert!((r.max_dev - (k * k - 1.0)).abs() <= 1e-10 * k * k);
    }
}
