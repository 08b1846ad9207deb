use ma_lin::equations::{
    catalog, classify, equation_from_class_function, khabirov_push, linear_coefficient, residual, Classification, Route,
};
use ma_lin::expr::{parse, Bindings};
use ma_lin::fields::Jet2;
use ma_lin::transforms::contact_map;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn signed(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let v = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

#[test]
fn lifted_jets_satisfy_every_chain_linearizable_catalog_entry() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut checked = 0;
    for eq in catalog() {
        let Classification::InClass(class) = classify(&eq, 42).unwrap() else { continue };
        if class.route != Route::ContactChain {
            continue;
        }
        checked += 1;
        let coef = linear_coefficient(&class);
        for _ in 0..100 {
            let (cx, cy) = (rng.gen_range(0.3..2.0), rng.gen_range(-2.0..2.0));
            let c = coef.eval(&Bindings::from([("X", cx), ("Y", cy)])).unwrap();
            let uyy = signed(&mut rng, 0.2, 2.0);
            let jet = Jet2::new(
                rng.gen_range(-2.0..2.0),
                signed(&mut rng, 0.2, 2.0),
                rng.gen_range(-2.0..2.0),
                -c * uyy,
                rng.gen_range(-2.0..2.0),
                uyy,
            );
            let img = contact_map(&jet, cx, cy).unwrap();
            let r = residual(&eq, &img.jet, img.x, img.y).unwrap();
            let scale = img.jet.hessian_det().abs().max(1e-300);
            assert!(r.abs() <= 1e-9 * scale, "{}: residual {r} (scale {scale})", eq.id);
        }
    }
    assert_eq!(checked, 4);
}

#[test]
fn class_function_reconstructs_the_right_hand_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for eq in catalog() {
        let Classification::InClass(class) = classify(&eq, 42).unwrap() else { continue };
        if class.route != Route::ContactChain {
            continue;
        }
        let rebuilt = equation_from_class_function("rebuilt", &class.f).unwrap();
        for _ in 0..50 {
            let (x, y, u, p, q) = (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.2..2.0),
            );
            let a = eq.rhs_at(x, y, u, p, q).unwrap();
            let b = rebuilt.rhs_at(x, y, u, p, q).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{}: {a} vs {b}", eq.id);
        }
    }
}

#[test]
fn classification_does_not_depend_on_the_seed() {
    for eq in catalog() {
        let base = classify(&eq, 42).unwrap().class().is_some();
        for seed in 0..5 {
            assert_eq!(classify(&eq, seed).unwrap().class().is_some(), base, "{} seed {seed}", eq.id);
        }
    }
}

#[test]
fn classification_is_reproducible() {
    for eq in catalog() {
        assert_eq!(classify(&eq, 9).unwrap(), classify(&eq, 9).unwrap(), "{}", eq.id);
    }
}

#[test]
fn classification_witnesses_are_reproducible_failures() {
    for eq in catalog() {
        if let Classification::NotInClass { witness, .. } = classify(&eq, 42).unwrap() {
            assert!(
                (witness.lhs - witness.rhs).abs() > 1e-9 * (1.0 + witness.lhs.abs()),
                "{}: {witness:?}",
                eq.id
            );
        }
    }
}

#[test]
fn khabirov_identities_hold() {
    for g in ["1", "s^4", "1+s^2", "2+sin(s)"] {
        let push = khabirov_push(&parse(g).unwrap(), 50, 42).unwrap();
        let v = &push.verification;
        assert!(v.identity_max <= 1e-10, "{g}: {v:?}");
        assert!(v.transformed_rhs_max <= 1e-10 && v.legendre_max <= 1e-10 && v.rewrite_max <= 1e-10, "{g}: {v:?}");
    }
}
