//! Randomized internal consistency sweeps.
//!
//! * symbolic gradients and Hessians against central finite differences;
//! * the inverse-norm bound `‖A⁻¹‖ ≤ L^(p-1)/K` on random matrices;
//! * the increase-direction identities on random regular active sets.
//!
//! Every sweep is seeded, so a run is reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::certify::build_upsilon;
use crate::expr::{
    differentiate, differentiate_with_fault, eval_expr, hessian, BinaryOp, DerivativeFault, Expr,
    UnaryOp, Var,
};
use crate::improve::increase_direction;
use crate::linalg::{gram_det, inverse_norm_bound, singular_values};
use crate::model::PointEval;

/// Random expression over `z1..zn` and `t` with at most `depth` levels of
/// operators.
pub fn random_expr<R: Rng>(rng: &mut R, n: usize, depth: u32) -> Expr {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..4) {
            0 => Expr::Const((rng.random_range(-2.0f64..2.0) * 100.0).round() / 100.0),
            1 => Expr::Var(Var::T),
            _ => Expr::Var(Var::Z(rng.random_range(0..n))),
        };
    }
    let sub = |rng: &mut R| random_expr(rng, n, depth - 1);
    match rng.random_range(0..12) {
        0 => Expr::Unary(UnaryOp::Neg, Box::new(sub(rng))),
        1 => Expr::Unary(UnaryOp::Sin, Box::new(sub(rng))),
        2 => Expr::Unary(UnaryOp::Cos, Box::new(sub(rng))),
        3 => Expr::Unary(UnaryOp::Exp, Box::new(sub(rng))),
        4 => Expr::Unary(UnaryOp::Log, Box::new(sub(rng))),
        5 => Expr::Unary(UnaryOp::Sqrt, Box::new(sub(rng))),
        6 => {
            let c = [2.0, 3.0, -1.0, 0.5, 1.5][rng.random_range(0..5)];
            Expr::Pow(Box::new(sub(rng)), c)
        }
        k => {
            let op = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div][k as usize - 7 & 3];
            Expr::Binary(op, Box::new(sub(rng)), Box::new(sub(rng)))
        }
    }
}

/// Distance of `(z, t)` from the boundary of the expression's domain: the
/// smallest `log`/`sqrt` argument, fractional-power base, negative-power
/// base magnitude or denominator magnitude. `+∞` when nothing restricts the
/// domain; NaN when a subexpression cannot be evaluated.
pub fn domain_margin(e: &Expr, z: &[f64], t: f64) -> f64 {
    let value = |a: &Expr| eval_expr(a, z, t).unwrap_or(f64::NAN);
    let own = match e {
        Expr::Unary(UnaryOp::Log | UnaryOp::Sqrt, a) => value(a),
        Expr::Binary(BinaryOp::Div, _, b) => value(b).abs(),
        Expr::Pow(a, c) if c.fract() != 0.0 => value(a),
        Expr::Pow(a, c) if *c < 0.0 => value(a).abs(),
        _ => f64::INFINITY,
    };
    let children = match e {
        Expr::Const(_) | Expr::Var(_) => f64::INFINITY,
        Expr::Unary(_, a) | Expr::Pow(a, _) => domain_margin(a, z, t),
        Expr::Binary(_, a, b) => domain_margin(a, z, t).min(domain_margin(b, z, t)),
    };
    if own.is_nan() || children.is_nan() {
        f64::NAN
    } else {
        own.min(children)
    }
}

/// Largest `|value|` over every subexpression at `(z, t)`; NaN when one
/// cannot be evaluated.
pub fn magnitude(e: &Expr, z: &[f64], t: f64) -> f64 {
    let own = eval_expr(e, z, t).map(f64::abs).unwrap_or(f64::NAN);
    let children = match e {
        Expr::Const(_) | Expr::Var(_) => 0.0,
        Expr::Unary(_, a) | Expr::Pow(a, _) => magnitude(a, z, t),
        Expr::Binary(_, a, b) => magnitude(a, z, t).max(magnitude(b, z, t)),
    };
    if own.is_nan() || children.is_nan() {
        f64::NAN
    } else {
        own.max(children)
    }
}

/// A random expression with an evaluation point at least `0.1` inside its
/// domain and every subexpression bounded by `1e3` in magnitude, searched
/// for with fresh draws.
pub fn random_case<R: Rng>(rng: &mut R, n: usize, depth: u32) -> (Expr, Vec<f64>, f64) {
    loop {
        let e = random_expr(rng, n, depth);
        for _ in 0..20 {
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(0.0..1.0);
            let margin = domain_margin(&e, &z, t);
            if !(margin >= 0.1) {
                continue;
            }
            if magnitude(&e, &z, t) <= 1e3 {
                return (e, z, t);
            }
        }
    }
}

/// Central difference of `e` in `z_i`, refined by Richardson extrapolation
/// over a shrinking step sequence (Ridders' method). The initial step is
/// cut by 10 until every sample lies inside the domain.
pub fn central_difference(e: &Expr, z: &[f64], t: f64, i: usize) -> f64 {
    let f = |x: f64| {
        let mut shifted = z.to_vec();
        shifted[i] = x;
        eval_expr(e, &shifted, t).unwrap_or(f64::NAN)
    };
    // Oscillatory cases alias at large steps, so try several starting
    // steps and keep the estimate Ridders itself trusts most.
    let scale = 1.0 + z[i].abs();
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 1..=6 {
        let (d, err) = ridders(f, z[i], scale * 10f64.powi(-k));
        if d.is_finite() && err / (1.0 + d.abs()) < best.1 {
            best = (d, err / (1.0 + d.abs()));
        }
    }
    best.0
}

fn ridders(f: impl Fn(f64) -> f64, x: f64, h0: f64) -> (f64, f64) {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    let central = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let mut table = [[0.0f64; TABLE]; TABLE];
    let mut h = h0;
    table[0][0] = central(h);
    if table[0][0].is_nan() {
        return (f64::NAN, f64::INFINITY);
    }
    let mut best = table[0][0];
    let mut err = f64::INFINITY;
    for i in 1..TABLE {
        h /= SHRINK;
        table[0][i] = central(h);
        if table[0][i].is_nan() {
            return (f64::NAN, f64::INFINITY);
        }
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    (best, err)
}

/// `|a - b| / (1 + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + b.abs())
}

/// `PointEval` with the given first-order data, zero Hessians and the
/// active set `{ j : g_j ≤ eps_act }`.
pub fn synthetic_point(
    grad_phi: DVector<f64>,
    jac_h: DMatrix<f64>,
    g: DVector<f64>,
    jac_g: DMatrix<f64>,
    eps_act: f64,
) -> PointEval {
    let n = grad_phi.len();
    let (p, m) = (jac_h.nrows(), g.len());
    PointEval {
        t: 0.0,
        z: DVector::zeros(n),
        phi: 0.0,
        grad_phi,
        hess_phi: DMatrix::zeros(n, n),
        h: DVector::zeros(p),
        jac_h,
        hess_h: vec![DMatrix::zeros(n, n); p],
        active: (0..m).filter(|&j| g[j] <= eps_act).collect(),
        g,
        jac_g,
        hess_g: vec![DMatrix::zeros(n, n); m],
        eps_act,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    pub seed: u64,
    pub derivative_cases: usize,
    pub bound_cases: usize,
    pub direction_cases: usize,
    pub fault: Option<DerivativeFault>,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seed: 0,
            derivative_cases: 1000,
            bound_cases: 500,
            direction_cases: 200,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error (or bound ratio) in the sweep.
    pub worst: f64,
    pub tolerance: f64,
}

impl SweepResult {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

/// Gradients and Hessians against central differences. Hessian rows are
/// differenced from the symbolic gradient, which the first half of the
/// sweep checks against function values.
pub fn derivative_sweep(opts: &SelftestOptions) -> (SweepResult, SweepResult) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let tol = 1e-5;
    let (mut grad_fail, mut grad_worst) = (0, 0.0f64);
    let (mut hess_fail, mut hess_worst) = (0, 0.0f64);
    for _ in 0..opts.derivative_cases {
        let n = rng.random_range(1..=3);
        let depth = rng.random_range(1..=6);
        let (e, z, t) = random_case(&mut rng, n, depth);
        let grad: Vec<Expr> = (0..n)
            .map(|i| match opts.fault {
                Some(fault) => differentiate_with_fault(&e, Var::Z(i), fault),
                None => differentiate(&e, Var::Z(i)),
            })
            .collect();
        let mut bad = false;
        for (i, gi) in grad.iter().enumerate() {
            let sym = eval_expr(gi, &z, t).unwrap_or(f64::NAN);
            let err = relative_error(sym, central_difference(&e, &z, t, i));
            grad_worst = grad_worst.max(err);
            bad |= !(err <= tol);
        }
        grad_fail += usize::from(bad);

        let hess = hessian(&e, n);
        let mut bad = false;
        for i in 0..n {
            for j in 0..n {
                let sym = eval_expr(&hess[i][j], &z, t).unwrap_or(f64::NAN);
                let err = relative_error(sym, central_difference(&grad[j], &z, t, i));
                hess_worst = hess_worst.max(err);
                bad |= !(err <= tol) || hess[i][j] != hess[j][i];
            }
        }
        hess_fail += usize::from(bad);
    }
    (
        SweepResult {
            name: "gradient vs finite differences",
            cases: opts.derivative_cases,
            failures: grad_fail,
            worst: grad_worst,
            tolerance: tol,
        },
        SweepResult {
            name: "hessian vs finite differences, symmetry",
            cases: opts.derivative_cases,
            failures: hess_fail,
            worst: hess_worst,
            tolerance: tol,
        },
    )
}

/// Random square matrices with `|det A| ≥ K`, `‖A‖ ≤ L`; reports the
/// largest `‖A⁻¹‖ / (L^(p-1)/K)`.
pub fn inverse_bound_sweep(opts: &SelftestOptions) -> SweepResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0001);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..opts.bound_cases {
        let p = rng.random_range(1..=6);
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let sv = singular_values(&a);
        let det: f64 = sv.iter().product();
        if !(det > 0.0) {
            continue;
        }
        let k = det * rng.random_range(0.5..0.999);
        let l = sv[0] * rng.random_range(1.0..1.5);
        let inv_norm = 1.0 / sv[p - 1];
        let bound = inverse_norm_bound(k, l, p).unwrap_or(f64::NAN);
        let ratio = inv_norm / bound;
        worst = worst.max(ratio);
        failures += usize::from(!(ratio <= 1.0));
    }
    SweepResult {
        name: "inverse norm bound",
        cases: opts.bound_cases,
        failures,
        worst,
        tolerance: 1.0,
    }
}

/// A random point whose slack Jacobian has `det(ΥΥᵀ) ≥ 1e-6`, together
/// with an active inequality index.
pub fn random_regular_point<R: Rng>(rng: &mut R) -> (PointEval, usize) {
    loop {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(0..n);
        let active = rng.random_range(1..=n - p);
        let inactive = rng.random_range(0..=2);
        let m = active + inactive;
        let jac_h = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
        let jac_g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(m, |j, _| {
            if j < active {
                0.0
            } else {
                rng.random_range(0.1..2.0)
            }
        });
        let grad_phi = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let pe = synthetic_point(grad_phi, jac_h, g, jac_g, 1e-9);
        let Ok(ups) = build_upsilon(&pe, 0.0) else { continue };
        if gram_det(&ups).is_ok_and(|r| r.det >= 1e-6) {
            let k = rng.random_range(0..active);
            return (pe, k);
        }
    }
}

/// Largest violation of `∇h γ = 0`, `∇gⱼ γ = 0` (other active `j`) and
/// `∇g_k γ = 1`.
pub fn direction_violation(pe: &PointEval, k: usize, gamma: &DVector<f64>) -> f64 {
    let mut worst = (&pe.jac_h * gamma).amax();
    for &j in &pe.active {
        let target = if j == k { 1.0 } else { 0.0 };
        worst = worst.max((pe.jac_g.row(j).transpose().dot(gamma) - target).abs());
    }
    worst
}

pub fn direction_sweep(opts: &SelftestOptions) -> SweepResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_0002);
    let tol = 1e-9;
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..opts.direction_cases {
        let (pe, k) = random_regular_point(&mut rng);
        let v = match increase_direction(&pe, k, 0.0) {
            Ok(gamma) => direction_violation(&pe, k, &gamma),
            Err(_) => f64::INFINITY,
        };
        worst = worst.max(v);
        failures += usize::from(!(v <= tol));
    }
    SweepResult {
        name: "increase direction conditions",
        cases: opts.direction_cases,
        failures,
        worst,
        tolerance: tol,
    }
}

/// All sweeps in a fixed order.
pub fn run_selftest(opts: &SelftestOptions) -> Vec<SweepResult> {
    let (grad, hess) = derivative_sweep(opts);
    vec![grad, hess, inverse_bound_sweep(opts), direction_sweep(opts)]
}
