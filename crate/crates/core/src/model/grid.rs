use crate::expr::{eval_expr, Expr};

use super::{ModelError, Target};

/// Uniform time grid on `[0, T]` with composite trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `count` uniform nodes `t_k = kT/(N-1)` with weights `T/(N-1)·(½, 1, …, 1, ½)`.
pub fn build_grid(horizon: f64, count: usize) -> Result<TimeGrid, ModelError> {
    if count < 2 {
        return Err(ModelError::Grid(format!("need at least 2 nodes, got {count}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ModelError::Grid(format!("horizon must be positive, got {horizon}")));
    }
    let intervals = (count - 1) as f64;
    let step = horizon / intervals;
    let nodes = (0..count)
        .map(|k| {
            if k == count - 1 {
                horizon
            } else {
                horizon * k as f64 / intervals
            }
        })
        .collect();
    let weights = (0..count)
        .map(|k| if k == 0 || k == count - 1 { 0.5 * step } else { step })
        .collect();
    Ok(TimeGrid {
        horizon,
        nodes,
        weights,
    })
}

/// Trapezoid quadrature of node values, summed in index order.
pub fn integrate(grid: &TimeGrid, values: &[f64]) -> Result<f64, ModelError> {
    if values.len() != grid.len() {
        return Err(ModelError::Dimension(format!(
            "{} values for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Ok(grid
        .weights
        .iter()
        .zip(values)
        .fold(0.0, |acc, (w, v)| acc + w * v))
}

/// A candidate trajectory sampled on a grid: row `k` is `z(t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: Vec<Vec<f64>>,
    exprs: Option<Vec<Expr>>,
}

impl Trajectory {
    /// Numeric trajectory; one row of length `n` per grid node, no
    /// interpolation.
    pub fn from_values(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Trajectory, ModelError> {
        if values.len() != grid.len() {
            return Err(ModelError::Dimension(format!(
                "trajectory has {} rows for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(first) = values.first() {
            if values.iter().any(|row| row.len() != first.len()) {
                return Err(ModelError::Dimension("trajectory rows differ in length".into()));
            }
        }
        Ok(Trajectory {
            grid,
            values,
            exprs: None,
        })
    }

    /// The same state at every node.
    pub fn constant(grid: TimeGrid, z: &[f64]) -> Trajectory {
        let values = vec![z.to_vec(); grid.len()];
        Trajectory {
            grid,
            values,
            exprs: None,
        }
    }

    /// Samples expressions in `t` (one per state component) at the nodes.
    pub fn from_exprs(grid: TimeGrid, exprs: Vec<Expr>) -> Result<Trajectory, ModelError> {
        if let Some((k, _)) = exprs.iter().enumerate().find(|(_, e)| e.depends_on_state()) {
            return Err(ModelError::Invalid(format!(
                "candidate component {} must depend on t only",
                k + 1
            )));
        }
        let mut values = Vec::with_capacity(grid.len());
        for &t in grid.nodes() {
            let row = exprs
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    eval_expr(e, &[], t).map_err(|source| ModelError::Eval {
                        target: Target::Candidate(k),
                        t,
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            values.push(row);
        }
        Ok(Trajectory {
            grid,
            values,
            exprs: Some(exprs),
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    /// Defining expressions, when the trajectory was sampled from them.
    pub fn exprs(&self) -> Option<&[Expr]> {
        self.exprs.as_deref()
    }

    /// State dimension (0 for an empty trajectory).
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Node-wise `z + τ γ`.
    pub fn perturbed(&self, direction: &[Vec<f64>], step: f64) -> Trajectory {
        let values = self
            .values
            .iter()
            .zip(direction)
            .map(|(z, d)| z.iter().zip(d).map(|(a, b)| a + step * b).collect())
            .collect();
        Trajectory {
            grid: self.grid.clone(),
            values,
            exprs: None,
        }
    }

    /// `max_k ‖z(t_k)‖_∞`, the grid stand-in for the essential supremum.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    #[test]
    fn grid_examples() {
        let g = build_grid(1.0, 2).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0]);
        assert_eq!(g.weights(), &[0.5, 0.5]);

        let g = build_grid(1.0, 201).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g.nodes().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.nodes().last().unwrap(), 1.0);

        let g = build_grid(2.0, 3).unwrap();
        assert_eq!(g.nodes(), &[0.0, 1.0, 2.0]);
        assert_eq!(g.weights(), &[0.5, 1.0, 0.5]);

        assert!(build_grid(1.0, 1).is_err());
        assert!(build_grid(-1.0, 5).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = build_grid(1.0, 11).unwrap();
        assert_eq!(integrate(&g, &[0.0; 11]).unwrap(), 0.0);

        let g = build_grid(2.0, 7).unwrap();
        assert!((integrate(&g, &[3.0; 7]).unwrap() - 6.0).abs() < 1e-14);

        let g = build_grid(1.0, 2001).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|t| -2.0 * t * t).collect();
        assert!((integrate(&g, &vals).unwrap() + 2.0 / 3.0).abs() < 1e-6);

        assert!(integrate(&g, &[1.0]).is_err());
    }

    #[test]
    fn trapezoid_converges_at_second_order() {
        let err = |n: usize| {
            let g = build_grid(1.0, n).unwrap();
            let vals: Vec<f64> = g.nodes().iter().map(|t| -2.0 * t * t).collect();
            (integrate(&g, &vals).unwrap() + 2.0 / 3.0).abs()
        };
        // Exact error is T·h²·max|f''|/12 = 1/(3(N-1)²).
        let mut scaled = Vec::new();
        for n in [11, 21, 41, 81, 161] {
            scaled.push(err(n) * ((n - 1) as f64).powi(2));
        }
        for s in &scaled {
            assert!((s - 1.0 / 3.0).abs() < 1e-6, "{scaled:?}");
        }
    }

    #[test]
    fn trajectories() {
        let g = build_grid(1.0, 3).unwrap();
        let tr = Trajectory::from_exprs(g.clone(), vec![parse_expr("t", 0).unwrap(), parse_expr("2", 0).unwrap()])
            .unwrap();
        assert_eq!(tr.values(), &[vec![0.0, 2.0], vec![0.5, 2.0], vec![1.0, 2.0]]);
        assert!(Trajectory::from_values(g.clone(), vec![vec![0.0]; 2]).is_err());
        assert!(Trajectory::from_exprs(g.clone(), vec![parse_expr("log(t)", 0).unwrap()]).is_err());
        assert!(Trajectory::from_exprs(g, vec![parse_expr("z1", 1).unwrap()]).is_err());
    }
}
