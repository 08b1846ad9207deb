use super::{BinaryOp, Expr, Func, Node};

pub(super) fn diff(e: &Expr, v: &str) -> Expr {
    if !e.contains_var(v) {
        return Expr::constant(0.0);
    }
    match e.node() {
        Node::Const(_) => Expr::constant(0.0),
        Node::Var(_) => Expr::constant(1.0),
        Node::Neg(a) => Expr::neg(diff(a, v)),
        Node::Binary(op, a, b) => {
            let (ha, hb) = (a.contains_var(v), b.contains_var(v));
            match op {
                BinaryOp::Add | BinaryOp::Sub => {
                    let (da, db) = (diff(a, v), diff(b, v));
                    match (ha, hb, op) {
                        (true, false, _) => da,
                        (false, true, BinaryOp::Add) => db,
                        (false, true, _) => Expr::neg(db),
                        _ => Expr::binary(*op, da, db),
                    }
                }
                BinaryOp::Mul => {
                    let left = || Expr::mul(diff(a, v), b.clone());
                    let right = || Expr::mul(a.clone(), diff(b, v));
                    match (ha, hb) {
                        (true, false) => left(),
                        (false, true) => right(),
                        _ => Expr::add(left(), right()),
                    }
                }
                BinaryOp::Div => {
                    if !hb {
                        return Expr::div(diff(a, v), b.clone());
                    }
                    // (a'b - ab') / b^2
                    let num = if ha {
                        Expr::sub(Expr::mul(diff(a, v), b.clone()), Expr::mul(a.clone(), diff(b, v)))
                    } else {
                        Expr::neg(Expr::mul(a.clone(), diff(b, v)))
                    };
                    Expr::div(num, Expr::powi(b.clone(), 2))
                }
                BinaryOp::Pow => {
                    if !hb {
                        // n a^(n-1) a'
                        let n_minus_1 = Expr::sub(b.clone(), Expr::constant(1.0));
                        let outer = Expr::mul(b.clone(), Expr::pow(a.clone(), n_minus_1));
                        return Expr::mul(outer, diff(a, v));
                    }
                    // a^b (b' ln a + b a'/a), valid for a > 0
                    let mut inner = Expr::mul(diff(b, v), Expr::call(Func::Ln, a.clone()));
                    if ha {
                        let da_over_a = Expr::div(Expr::mul(b.clone(), diff(a, v)), a.clone());
                        inner = Expr::add(inner, da_over_a);
                    }
                    Expr::mul(e.clone(), inner)
                }
            }
        }
        Node::Call(f, a) => {
            let outer = match f {
                Func::Sqrt => Expr::div(
                    Expr::constant(1.0),
                    Expr::mul(Expr::constant(2.0), Expr::call(Func::Sqrt, a.clone())),
                ),
                Func::Exp => Expr::call(Func::Exp, a.clone()),
                Func::Ln => Expr::div(Expr::constant(1.0), a.clone()),
                Func::Sin => Expr::call(Func::Cos, a.clone()),
                Func::Cos => Expr::neg(Expr::call(Func::Sin, a.clone())),
                Func::Sinh => Expr::call(Func::Cosh, a.clone()),
                Func::Cosh => Expr::call(Func::Sinh, a.clone()),
                Func::Arctan => Expr::div(
                    Expr::constant(1.0),
                    Expr::add(Expr::constant(1.0), Expr::powi(a.clone(), 2)),
                ),
                // sign(a), undefined at 0 like the derivative itself
                Func::Abs => Expr::div(a.clone(), Expr::call(Func::Abs, a.clone())),
            };
            Expr::mul(outer, diff(a, v))
        }
    }
}
