use ma_lin::expr::{parse, Expr};
use ma_lin::fields::{sample, Geometry, Grid2};
use ma_lin::linsolve::{
    constant_f_family, max_principle_holds, mms_source, solve_dirichlet, Boundary, EllipticProblem, Part,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(n: usize) -> Geometry {
    Geometry::spanning(n, n, (0.0, 1.0), (0.0, 1.0)).unwrap()
}

fn max_error(u: &Grid2, exact: &Expr) -> f64 {
    let want = sample(exact, ("X", "Y"), u.geometry()).unwrap();
    u.values().iter().zip(want.values()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

fn solve_mms(n: usize, ustar: &Expr, f: &Expr) -> f64 {
    let geo = unit(n);
    let p = EllipticProblem::from_exprs(&geo, f, &mms_source(ustar, f), ustar).unwrap();
    let (u, _) = solve_dirichlet(&p, p.default_tol(), 200_000).unwrap();
    max_error(&u, ustar)
}

#[test]
fn biquadratic_manufactured_solution_is_reproduced_by_the_stencil() {
    // second differences are exact on X^2 Y^2, so only the solver tolerance remains
    let ustar = parse("X^2*Y^2").unwrap();
    let f = parse("(1+Y^2)^2").unwrap();
    for n in [17, 33, 65] {
        let err = solve_mms(n, &ustar, &f);
        assert!(err <= 1e-10, "{n}: {err}");
    }
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let ustar = parse("exp(X*Y)").unwrap();
    let f = parse("(1+Y^2)^2").unwrap();
    let coarse = solve_mms(33, &ustar, &f);
    let fine = solve_mms(65, &ustar, &f);
    let order = (coarse / fine).log2();
    assert!(order >= 1.9, "order {order}: {coarse} -> {fine}");
}

#[test]
fn smooth_manufactured_solution_converges_at_second_order() {
    let ustar = parse("exp(X)*sin(2*Y)").unwrap();
    let f = parse("1+X*Y").unwrap();
    let coarse = solve_mms(17, &ustar, &f);
    let fine = solve_mms(33, &ustar, &f);
    assert!((coarse / fine).log2() >= 1.9, "{coarse} -> {fine}");
}

#[test]
fn cubic_harmonic_families_are_reproduced_exactly() {
    for c2 in [0.25, 1.0, 4.0] {
        for part in [Part::Re, Part::Im] {
            let e = constant_f_family(c2, 3, part).unwrap();
            let geo = unit(13);
            let p = EllipticProblem::from_exprs(&geo, &Expr::constant(c2), &Expr::constant(0.0), &e).unwrap();
            let (u, _) = solve_dirichlet(&p, 2e-12, 100_000).unwrap();
            assert!(max_error(&u, &e) <= 1e-12, "{e}");
        }
    }
}

#[test]
fn discrete_maximum_principle_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let n = rng.gen_range(5..25);
        let geo = unit(n);
        let (a, b) = (rng.gen_range(0.1..3.0), rng.gen_range(0.0..2.0));
        let f = Grid2::from_fn(geo, |x, y| a + b * x * y).unwrap();
        let g = Grid2::filled(geo, 0.0).unwrap();
        let mut next = || rng.gen_range(-5.0..5.0);
        let boundary = Boundary {
            bottom: (0..n).map(|_| next()).collect(),
            top: (0..n).map(|_| next()).collect(),
            left: (0..n).map(|_| next()).collect(),
            right: (0..n).map(|_| next()).collect(),
        };
        let p = EllipticProblem::new(f, g, boundary.clone()).unwrap();
        let (u, _) = solve_dirichlet(&p, 1e-11, 200_000).unwrap();
        assert!(max_principle_holds(&u, &boundary, 1e-9));
    }
}

#[test]
fn residual_target_is_met_exactly_as_reported() {
    let geo = unit(33);
    let p = EllipticProblem::from_exprs(
        &geo,
        &parse("(1+Y^2)^2").unwrap(),
        &parse("0").unwrap(),
        &parse("X^2-Y*arctan(Y)").unwrap(),
    )
    .unwrap();
    let (u, rep) = solve_dirichlet(&p, p.default_tol(), 200_000).unwrap();
    assert!(rep.converged && rep.residual <= rep.tol);
    assert_eq!(ma_lin::linsolve::discrete_residual(&p, u.values()), rep.residual);
}
