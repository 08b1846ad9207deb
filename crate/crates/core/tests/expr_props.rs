use ma_lin::expr::{parse, BinaryOp, Bindings, Expr, Func};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VARS: [&str; 2] = ["x", "y"];

fn random_tree(rng: &mut ChaCha8Rng, depth: usize, forced: Option<Func>) -> Expr {
    if let Some(f) = forced {
        return Expr::call(f, random_tree(rng, depth - 1, None));
    }
    if depth <= 1 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            Expr::var(VARS[rng.gen_range(0..2)])
        } else {
            Expr::constant((rng.gen_range(0.5..2.0f64) * 100.0).round() / 100.0)
        };
    }
    match rng.gen_range(0..8) {
        0 => Expr::neg(random_tree(rng, depth - 1, None)),
        1 => Expr::call(Func::ALL[rng.gen_range(0..Func::ALL.len())], random_tree(rng, depth - 1, None)),
        2 => Expr::powi(random_tree(rng, depth - 1, None), rng.gen_range(-2..=3)),
        k => {
            let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Add][k - 3];
            Expr::binary(op, random_tree(rng, depth - 1, None), random_tree(rng, depth - 1, None))
        }
    }
}

fn eval_at(e: &Expr, x: f64, y: f64) -> Option<f64> {
    e.eval(&Bindings::from([("x", x), ("y", y)])).ok().filter(|v| v.is_finite())
}

/// Draws (tree, point) pairs that evaluate cleanly and are not near a
/// singularity, judged by the size of the second derivative.
fn tame_samples(seed: u64, count: usize, forced: Option<Func>) -> Vec<(Expr, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let depth = rng.gen_range(2..=5);
        let e = random_tree(&mut rng, depth, forced);
        let (x, y) = (rng.gen_range(0.3..1.7), rng.gen_range(0.3..1.7));
        let var = VARS[rng.gen_range(0..2)];
        let d = e.diff(var);
        let dd = d.diff(var);
        let (Some(v), Some(dv), Some(ddv)) = (eval_at(&e, x, y), eval_at(&d, x, y), eval_at(&dd, x, y)) else {
            continue;
        };
        if v.abs() > 1e3 || dv.abs() > 1e3 || ddv.abs() > 1e3 {
            continue;
        }
        // a cusp such as abs() at the point would spoil the difference quotient
        let h = 1e-5;
        let shifted = |s: f64| if var == "x" { eval_at(&e, x + s, y) } else { eval_at(&e, x, y + s) };
        if shifted(h).is_none() || shifted(-h).is_none() {
            continue;
        }
        out.push((e, x, y));
    }
    out
}

fn check_against_central_difference(e: &Expr, x: f64, y: f64) {
    let h = 1e-5;
    for var in VARS {
        let d = e.diff(var);
        let exact = eval_at(&d, x, y).unwrap_or(f64::NAN);
        let (fp, fm) = if var == "x" {
            (eval_at(e, x + h, y), eval_at(e, x - h, y))
        } else {
            (eval_at(e, x, y + h), eval_at(e, x, y - h))
        };
        let (Some(fp), Some(fm)) = (fp, fm) else { continue };
        if !exact.is_finite() {
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        assert!(
            (exact - fd).abs() <= 1e-6 * (1.0 + exact.abs()),
            "d/d{var} of {e} at ({x},{y}): exact {exact}, fd {fd}"
        );
    }
}

#[test]
fn diff_matches_central_difference_on_random_trees() {
    for (e, x, y) in tame_samples(42, 200, None) {
        check_against_central_difference(&e, x, y);
    }
}

#[test]
fn diff_matches_central_difference_for_every_function() {
    for (k, f) in Func::ALL.into_iter().enumerate() {
        for (e, x, y) in tame_samples(100 + k as u64, 25, Some(f)) {
            check_against_central_difference(&e, x, y);
        }
    }
}

#[test]
fn diff_is_linear() {
    let samples = tame_samples(7, 200, None);
    for pair in samples.chunks(2) {
        let [(a, x, y), (b, _, _)] = pair else { continue };
        for var in VARS {
            let lhs = eval_at(&Expr::add(a.clone(), b.clone()).diff(var), *x, *y);
            let ra = eval_at(&a.diff(var), *x, *y);
            let rb = eval_at(&b.diff(var), *x, *y);
            if let (Some(l), Some(ra), Some(rb)) = (lhs, ra, rb) {
                assert_eq!(l, ra + rb, "{a} + {b}");
            }
        }
    }
}

#[test]
fn diff_only_mentions_variables_of_the_input() {
    for (e, _, _) in tame_samples(9, 200, None) {
        for var in ["x", "y", "z"] {
            assert!(e.diff(var).free_vars().is_subset(&e.free_vars()), "{e}");
        }
    }
}

#[test]
fn evaluation_is_deterministic() {
    for (e, x, y) in tame_samples(11, 50, None) {
        let a = eval_at(&e, x, y).unwrap();
        let b = eval_at(&e.clone(), x, y).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| Expr::constant(n as f64 / 8.0)),
        prop::sample::select(vec!["x", "y", "u", "p_1"]).prop_map(Expr::var),
    ];
    leaf.prop_recursive(5, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::neg),
            (prop::sample::select(Func::ALL.to_vec()), inner.clone()).prop_map(|(f, a)| Expr::call(f, a)),
            (
                prop::sample::select(vec![BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div, BinaryOp::Pow]),
                inner.clone(),
                inner
            )
                .prop_map(|(op, a, b)| Expr::binary(op, a, b)),
        ]
    })
}

proptest! {
    #[test]
    fn printer_round_trip_is_stable(e in arb_expr()) {
        let once = parse(&e.to_string()).unwrap();
        let twice = parse(&once.to_string()).unwrap();
        prop_assert_eq!(once, twice);
    }
}
