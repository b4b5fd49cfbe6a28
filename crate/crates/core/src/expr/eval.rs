use thiserror::Error;

use super::{BinaryOp, Expr, UnaryOp, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{op} domain error at `{node}`: argument {arg}")]
    Domain {
        op: &'static str,
        /// The offending subexpression, printed.
        node: String,
        arg: f64,
    },
    #[error("expected {expected} state values, got {got}")]
    Dimension { expected: usize, got: usize },
}

fn domain(op: &'static str, node: &Expr, arg: f64) -> EvalError {
    EvalError::Domain {
        op,
        node: node.to_string(),
        arg,
    }
}

/// Evaluates `e` at state `z` and time `t`.
///
/// `z` must cover every state index the expression references. Domain
/// violations (log of a non-positive number, sqrt of a negative one,
/// division by zero, fractional power of a negative base) are errors rather
/// than NaNs.
pub fn eval_expr(e: &Expr, z: &[f64], t: f64) -> Result<f64, EvalError> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Var(Var::T) => Ok(t),
        Expr::Var(Var::Z(i)) => z.get(*i).copied().ok_or(EvalError::Dimension {
            expected: i + 1,
            got: z.len(),
        }),
        Expr::Unary(op, a) => {
            let x = eval_expr(a, z, t)?;
            match op {
                UnaryOp::Neg => Ok(-x),
                UnaryOp::Sin => Ok(x.sin()),
                UnaryOp::Cos => Ok(x.cos()),
                UnaryOp::Exp => Ok(x.exp()),
                UnaryOp::Log if x > 0.0 => Ok(x.ln()),
                UnaryOp::Log => Err(domain("log", e, x)),
                UnaryOp::Sqrt if x >= 0.0 => Ok(x.sqrt()),
                UnaryOp::Sqrt => Err(domain("sqrt", e, x)),
            }
        }
        Expr::Binary(op, a, b) => {
            let x = eval_expr(a, z, t)?;
            let y = eval_expr(b, z, t)?;
            match op {
                BinaryOp::Add => Ok(x + y),
                BinaryOp::Sub => Ok(x - y),
                BinaryOp::Mul => Ok(x * y),
                BinaryOp::Div if y != 0.0 => Ok(x / y),
                BinaryOp::Div => Err(domain("division", e, y)),
            }
        }
        Expr::Pow(a, p) => {
            let x = eval_expr(a, z, t)?;
            if p.fract() == 0.0 {
                if x == 0.0 && *p < 0.0 {
                    return Err(domain("power", e, x));
                }
                if p.abs() <= i32::MAX as f64 {
                    return Ok(x.powi(*p as i32));
                }
            } else if x < 0.0 {
                return Err(domain("power", e, x));
            }
            Ok(x.powf(*p))
        }
    }
}
