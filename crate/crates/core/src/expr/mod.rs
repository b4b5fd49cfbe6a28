//! Expression language for objectives and constraints.
//!
//! Expressions are trees over the state variables `z1..zn` and time `t`.
//! They are parsed from text, evaluated in double precision and
//! differentiated symbolically. Every derivative is itself an [`Expr`], so
//! gradients and Hessians are exact up to floating-point evaluation.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;          (* right-associative *)
//! primary = number | "t" | "z" digits
//!         | func "(" expr ")" | "(" expr ")" ;
//! func    = "sin" | "cos" | "exp" | "log" | "sqrt" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ]
//!         | "." digits [ exponent ] ;
//! ```
//!
//! The exponent of `^` must fold to a constant.

mod diff;
mod eval;
mod parse;

use std::fmt;

pub use diff::{differentiate, differentiate_with_fault, gradient, hessian, DerivativeFault};
pub use eval::{eval_expr, EvalError};
pub use parse::{parse_expr, ParseError};

/// A variable an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// State component, zero-based (`Z(0)` prints as `z1`).
    Z(usize),
    /// Time.
    T,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Z(i) => write!(f, "z{}", i + 1),
            Var::T => f.write_str("t"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }
}

/// Expression tree.
///
/// Powers carry their exponent as a plain number: the grammar only admits
/// constant exponents, and the parser folds them on the way in.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Const(value)
    }

    pub fn z(index: usize) -> Expr {
        Expr::Var(Var::Z(index))
    }

    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Negation with folding of constants and double negation.
    pub fn neg(self) -> Expr {
        match self {
            Expr::Const(c) if c == 0.0 => Expr::Const(0.0),
            Expr::Const(c) => Expr::Const(-c),
            Expr::Unary(UnaryOp::Neg, inner) => *inner,
            Expr::Binary(BinaryOp::Mul, a, b) if a.as_const().is_some() => {
                Expr::Const(-a.as_const().unwrap_or_default()).mul(*b)
            }
            e => Expr::Unary(UnaryOp::Neg, Box::new(e)),
        }
    }

    /// Unary function application; folds when the argument is a constant
    /// inside the function's domain.
    pub fn apply(op: UnaryOp, arg: Expr) -> Expr {
        if op == UnaryOp::Neg {
            return arg.neg();
        }
        if let Some(c) = arg.as_const() {
            let folded = match op {
                UnaryOp::Sin => Some(c.sin()),
                UnaryOp::Cos => Some(c.cos()),
                UnaryOp::Exp => Some(c.exp()),
                UnaryOp::Log if c > 0.0 => Some(c.ln()),
                UnaryOp::Sqrt if c >= 0.0 => Some(c.sqrt()),
                _ => None,
            };
            if let Some(v) = folded {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Box::new(arg))
    }

    pub fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a + b),
            (Some(a), _) if a == 0.0 => rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::Binary(BinaryOp::Add, Box::new(self), Box::new(rhs)),
        }
    }

    pub fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a - b),
            (Some(a), _) if a == 0.0 => rhs.neg(),
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::Binary(BinaryOp::Sub, Box::new(self), Box::new(rhs)),
        }
    }

    pub fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::Const(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => Expr::Const(0.0),
            (Some(a), _) if a == 1.0 => rhs,
            (_, Some(b)) if b == 1.0 => self,
            (Some(a), _) if a == -1.0 => rhs.neg(),
            (_, Some(b)) if b == -1.0 => self.neg(),
            (Some(a), None) => match rhs {
                // c1 * (c2 * x) -> (c1 c2) * x
                Expr::Binary(BinaryOp::Mul, inner, x) if inner.as_const().is_some() => {
                    Expr::Const(a * inner.as_const().unwrap_or_default()).mul(*x)
                }
                rhs => Expr::Binary(BinaryOp::Mul, Box::new(self), Box::new(rhs)),
            },
            // keep constants on the left
            (None, Some(_)) => rhs.mul(self),
            _ => Expr::Binary(BinaryOp::Mul, Box::new(self), Box::new(rhs)),
        }
    }

    pub fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::Const(a / b),
            (Some(a), _) if a == 0.0 => Expr::Const(0.0),
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::Binary(BinaryOp::Div, Box::new(self), Box::new(rhs)),
        }
    }

    pub fn pow(self, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::Const(1.0);
        }
        if exponent == 1.0 {
            return self;
        }
        if let Some(c) = self.as_const() {
            let v = c.powf(exponent);
            if v.is_finite() {
                return Expr::Const(v);
            }
        }
        Expr::Pow(Box::new(self), exponent)
    }

    /// Largest state index referenced (zero-based), if any.
    pub fn max_state_index(&self) -> Option<usize> {
        match self {
            Expr::Const(_) | Expr::Var(Var::T) => None,
            Expr::Var(Var::Z(i)) => Some(*i),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_state_index(),
            Expr::Binary(_, a, b) => match (a.max_state_index(), b.max_state_index()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Whether the expression references any state variable.
    pub fn depends_on_state(&self) -> bool {
        self.max_state_index().is_some()
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }
}

// Binding strength used to decide where the printer needs parentheses.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    let a = c.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        write!(f, "{c}")
    } else {
        write!(f, "{c:e}")
    }
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if c.is_sign_negative() => PREC_UNARY,
            Expr::Const(_) | Expr::Var(_) => PREC_ATOM,
            Expr::Unary(UnaryOp::Neg, _) => PREC_UNARY,
            Expr::Unary(..) => PREC_ATOM,
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_SUM,
            Expr::Binary(..) => PREC_PRODUCT,
            Expr::Pow(..) => PREC_POWER,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            f.write_str("(")?;
            self.write_at(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Const(c) => write_number(f, *c),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                a.write_at(f, PREC_UNARY)
            }
            Expr::Unary(op, a) => {
                write!(f, "{}(", op.name())?;
                a.write_at(f, 0)?;
                f.write_str(")")
            }
            Expr::Binary(op, a, b) => {
                let prec = self.precedence();
                a.write_at(f, prec)?;
                match op {
                    BinaryOp::Add | BinaryOp::Sub => write!(f, " {} ", op.symbol())?,
                    _ => f.write_str(op.symbol())?,
                }
                // operators are left-associative
                b.write_at(f, prec + 1)
            }
            Expr::Pow(a, e) => {
                a.write_at(f, PREC_ATOM)?;
                f.write_str("^")?;
                write_number(f, *e)
            }
        }
    }
}

/// Prints with the minimal parentheses the grammar needs; the output parses
/// back to an equal tree for anything the parser produces.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_at(f, 0)
    }
}
