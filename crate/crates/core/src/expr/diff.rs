use super::{BinaryOp, Expr, UnaryOp, Var};

/// Exact symbolic derivative of `e` with respect to `var`.
///
/// The result is built with the simplifying constructors on [`Expr`], so
/// constant subtrees fold and 0/1 identities vanish. Integer powers use the
/// power rule; fractional powers are differentiated through
/// `b^c = exp(c log b)`, which restricts the derivative to `b > 0`.
pub fn differentiate(e: &Expr, var: Var) -> Expr {
    derive(e, var, None)
}

/// Deliberately wrong differentiation rules, used to check that the
/// self-test detects a broken derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeFault {
    /// `(ab)' = a'b - ab'`.
    ProductRuleSign,
    /// `sin' = -cos`.
    SineSign,
}

/// [`differentiate`] with one rule replaced by a faulty one.
#[doc(hidden)]
pub fn differentiate_with_fault(e: &Expr, var: Var, fault: DerivativeFault) -> Expr {
    derive(e, var, Some(fault))
}

fn derive(e: &Expr, var: Var, fault: Option<DerivativeFault>) -> Expr {
    let differentiate = |e: &Expr, var| derive(e, var, fault);
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = differentiate(a, var);
            if da.as_const() == Some(0.0) {
                return Expr::Const(0.0);
            }
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => da.neg(),
                UnaryOp::Sin if fault == Some(DerivativeFault::SineSign) => {
                    Expr::apply(UnaryOp::Cos, a).mul(da).neg()
                }
                UnaryOp::Sin => Expr::apply(UnaryOp::Cos, a).mul(da),
                UnaryOp::Cos => Expr::apply(UnaryOp::Sin, a).mul(da).neg(),
                UnaryOp::Exp => Expr::apply(UnaryOp::Exp, a).mul(da),
                UnaryOp::Log => da.div(a),
                UnaryOp::Sqrt => da.div(Expr::Const(2.0).mul(Expr::apply(UnaryOp::Sqrt, a))),
            }
        }
        Expr::Binary(op, a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            match op {
                BinaryOp::Add => da.add(db),
                BinaryOp::Sub => da.sub(db),
                BinaryOp::Mul if fault == Some(DerivativeFault::ProductRuleSign) => {
                    da.mul((**b).clone()).sub((**a).clone().mul(db))
                }
                BinaryOp::Mul => da.mul((**b).clone()).add((**a).clone().mul(db)),
                BinaryOp::Div => {
                    if db.as_const() == Some(0.0) {
                        return da.div((**b).clone());
                    }
                    let num = da.mul((**b).clone()).sub((**a).clone().mul(db));
                    num.div((**b).clone().pow(2.0))
                }
            }
        }
        Expr::Pow(a, c) => {
            let da = differentiate(a, var);
            if da.as_const() == Some(0.0) {
                return Expr::Const(0.0);
            }
            let base = (**a).clone();
            if c.fract() == 0.0 {
                Expr::Const(*c).mul(base.pow(c - 1.0)).mul(da)
            } else {
                // d/dx exp(c log a) = exp(c log a) * c * a' / a
                let lowered = Expr::apply(
                    UnaryOp::Exp,
                    Expr::Const(*c).mul(Expr::apply(UnaryOp::Log, base.clone())),
                );
                lowered.mul(Expr::Const(*c).mul(da).div(base))
            }
        }
    }
}

/// Gradient with respect to `z1..zn`.
pub fn gradient(e: &Expr, n: usize) -> Vec<Expr> {
    (0..n).map(|i| differentiate(e, Var::Z(i))).collect()
}

/// Hessian with respect to `z1..zn`.
///
/// Only the upper triangle is differentiated; the lower triangle is a copy,
/// so the result is symmetric node for node.
pub fn hessian(e: &Expr, n: usize) -> Vec<Vec<Expr>> {
    let grad = gradient(e, n);
    let mut rows: Vec<Vec<Expr>> = vec![Vec::with_capacity(n); n];
    for i in 0..n {
        for j in 0..n {
            let entry = if j < i {
                rows[j][i].clone()
            } else {
                differentiate(&grad[i], Var::Z(j))
            };
            rows[i].push(entry);
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval_expr, parse_expr};

    fn d(text: &str, n: usize, i: usize) -> Expr {
        differentiate(&parse_expr(text, n).unwrap(), Var::Z(i))
    }

    fn eval_matrix(h: &[Vec<Expr>], z: &[f64]) -> Vec<Vec<f64>> {
        h.iter()
            .map(|row| row.iter().map(|e| eval_expr(e, z, 0.0).unwrap()).collect())
            .collect()
    }

    #[test]
    fn power_rule() {
        let de = d("-z1^2 - z2^2", 2, 0);
        assert_eq!(de, Expr::Const(-2.0).mul(Expr::z(0)));
        assert_eq!(eval_expr(&de, &[1.5, 9.0], 0.0).unwrap(), -3.0);
    }

    #[test]
    fn scaled_square_derivative_simplifies_to_variable() {
        assert_eq!(d("z1 + 0.5*z2^2", 2, 1), Expr::z(1));
    }

    #[test]
    fn linear_term_derivative_is_one() {
        assert_eq!(d("-z1^2 - z2^2 + z3 + 1", 3, 2), Expr::Const(1.0));
    }

    #[test]
    fn hessian_and_gradient_examples() {
        let h = hessian(&parse_expr("-z1^2 - z2^2", 2).unwrap(), 2);
        for z in [[0.0, 0.0], [3.0, -1.0]] {
            assert_eq!(eval_matrix(&h, &z), vec![vec![-2.0, 0.0], vec![0.0, -2.0]]);
        }
        let g = gradient(&parse_expr("z1 - z2", 2).unwrap(), 2);
        assert_eq!(g, vec![Expr::Const(1.0), Expr::Const(-1.0)]);
        let h = hessian(&parse_expr("z1*z2 + 1", 2).unwrap(), 2);
        assert_eq!(eval_matrix(&h, &[0.3, 0.7]), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn time_derivative() {
        let e = parse_expr("sin(t) * z1", 1).unwrap();
        let dt = differentiate(&e, Var::T);
        assert!((eval_expr(&dt, &[2.0], 0.3).unwrap() - 2.0 * 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn fractional_power_is_lowered() {
        let de = d("z1^1.5", 1, 0);
        let v = eval_expr(&de, &[4.0], 0.0).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        assert!(eval_expr(&de, &[-1.0], 0.0).is_err());
    }

    #[test]
    fn quotient_and_chain_rules() {
        let e = parse_expr("log(z1) / sqrt(z2) + exp(cos(z1*z2))", 2).unwrap();
        let (a, b) = (1.3f64, 0.4f64);
        let expect0 = 1.0 / (a * b.sqrt()) - (a * b).cos().exp() * (a * b).sin() * b;
        let expect1 = -0.5 * a.ln() * b.powf(-1.5) - (a * b).cos().exp() * (a * b).sin() * a;
        let g = gradient(&e, 2);
        assert!((eval_expr(&g[0], &[a, b], 0.0).unwrap() - expect0).abs() < 1e-12);
        assert!((eval_expr(&g[1], &[a, b], 0.0).unwrap() - expect1).abs() < 1e-12);
    }
}
