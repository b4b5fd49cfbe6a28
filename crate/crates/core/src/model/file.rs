//! Problem files: a TOML subset.
//!
//! ```toml
//! [problem]
//! name = "example-1"
//! n = 2
//! T = 1.0
//! objective = "-z1^2 - z2^2"
//!
//! [[equality]]
//! expr = "z1 - z2"
//!
//! [[inequality]]
//! expr = "z1 + 0.5*z2^2"
//!
//! [candidate]          # optional
//! z = ["0", "0"]       # n expressions in t
//! ```

use std::fmt::Write as _;

use serde::Deserialize;
use toml::Spanned;

use crate::expr::{parse_expr, Expr};

use super::{ModelError, Problem};

/// Contents of a problem file.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub problem: Problem,
    /// Candidate trajectory components as expressions in `t`.
    pub candidate: Option<Vec<Expr>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    problem: RawProblem,
    #[serde(default)]
    equality: Vec<RawConstraint>,
    #[serde(default)]
    inequality: Vec<RawConstraint>,
    candidate: Option<RawCandidate>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    name: String,
    n: Spanned<i64>,
    #[serde(rename = "T")]
    horizon: Number,
    objective: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraint {
    expr: Spanned<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCandidate {
    z: Spanned<Vec<Spanned<String>>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_spanned(text: &str, s: &Spanned<String>, n: usize) -> Result<Expr, ModelError> {
    parse_expr(s.get_ref(), n).map_err(|source| ModelError::Expr {
        line: line_of(text, s.span().start),
        source,
    })
}

/// Parses a problem file. Errors carry 1-based line numbers.
pub fn load_problem(text: &str) -> Result<ProblemFile, ModelError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| ModelError::Format {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let n_line = line_of(text, raw.problem.n.span().start);
    let n = match *raw.problem.n.get_ref() {
        n if n >= 1 => n as usize,
        other => {
            return Err(ModelError::Format {
                line: n_line,
                message: format!("n must be a positive integer, got {other}"),
            })
        }
    };
    let horizon = match raw.problem.horizon {
        Number::Int(v) => v as f64,
        Number::Float(v) => v,
    };
    let objective = parse_spanned(text, &raw.problem.objective, n)?;
    let equalities = raw
        .equality
        .iter()
        .map(|c| parse_spanned(text, &c.expr, n))
        .collect::<Result<Vec<_>, _>>()?;
    let inequalities = raw
        .inequality
        .iter()
        .map(|c| parse_spanned(text, &c.expr, n))
        .collect::<Result<Vec<_>, _>>()?;
    let candidate = match &raw.candidate {
        None => None,
        Some(c) => {
            if c.z.get_ref().len() != n {
                return Err(ModelError::Dimension(format!(
                    "line {}: candidate has {} components, n = {n}",
                    line_of(text, c.z.span().start),
                    c.z.get_ref().len()
                )));
            }
            // Candidate components may reference t only.
            Some(
                c.z.get_ref()
                    .iter()
                    .map(|s| parse_spanned(text, s, 0))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        }
    };
    let problem = Problem::new(raw.problem.name, n, horizon, objective, equalities, inequalities)?;
    Ok(ProblemFile { problem, candidate })
}

fn quoted(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Writes a problem file that [`load_problem`] reads back to an equal value.
pub fn save_problem(file: &ProblemFile) -> String {
    let p = &file.problem;
    let mut out = String::new();
    let _ = writeln!(out, "[problem]");
    let _ = writeln!(out, "name = {}", quoted(p.name()));
    let _ = writeln!(out, "n = {}", p.n());
    let _ = writeln!(out, "T = {:?}", p.horizon());
    let _ = writeln!(out, "objective = {}", quoted(&p.objective().to_string()));
    for e in p.equalities() {
        let _ = writeln!(out, "\n[[equality]]\nexpr = {}", quoted(&e.to_string()));
    }
    for e in p.inequalities() {
        let _ = writeln!(out, "\n[[inequality]]\nexpr = {}", quoted(&e.to_string()));
    }
    if let Some(c) = &file.candidate {
        let items: Vec<String> = c.iter().map(|e| quoted(&e.to_string())).collect();
        let _ = writeln!(out, "\n[candidate]\nz = [{}]", items.join(", "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = r#"
[problem]
name = "example-1"
n = 2
T = 1.0
objective = "-z1^2 - z2^2"

[[equality]]
expr = "z1 - z2"

[[inequality]]
expr = "z1 + 0.5*z2^2"

[[inequality]]
expr = "z1*z2 + 1"

[candidate]
z = ["0", "0"]
"#;

    #[test]
    fn loads_example1() {
        let f = load_problem(EXAMPLE1).unwrap();
        let p = &f.problem;
        assert_eq!((p.n(), p.p(), p.m(), p.horizon()), (2, 1, 2, 1.0));
        assert_eq!(p.name(), "example-1");
        assert_eq!(f.candidate.unwrap().len(), 2);
    }

    #[test]
    fn integer_horizon_accepted() {
        let text = EXAMPLE1.replace("T = 1.0", "T = 1");
        assert_eq!(load_problem(&text).unwrap().problem.horizon(), 1.0);
    }

    #[test]
    fn out_of_range_variable_reports_line() {
        let text = EXAMPLE1.replace("expr = \"z1*z2 + 1\"", "expr = \"z1*z3 + 1\"");
        match load_problem(&text) {
            Err(ModelError::Expr { line, .. }) => assert_eq!(line, 15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_and_unknown_keys_rejected() {
        let text = EXAMPLE1.replace("n = 2", "n = 2\nn = 3");
        match load_problem(&text) {
            Err(ModelError::Format { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
        let text = EXAMPLE1.replace("n = 2", "n = 2\nm = 3");
        assert!(matches!(load_problem(&text), Err(ModelError::Format { .. })));
    }

    #[test]
    fn dimension_mismatches() {
        let text = EXAMPLE1.replace("z = [\"0\", \"0\"]", "z = [\"0\"]");
        assert!(matches!(load_problem(&text), Err(ModelError::Dimension(_))));
        let text = EXAMPLE1.replace("z = [\"0\", \"0\"]", "z = [\"z1\", \"0\"]");
        assert!(matches!(load_problem(&text), Err(ModelError::Expr { .. })));
        let text = EXAMPLE1.replace("n = 2", "n = 0");
        assert!(matches!(load_problem(&text), Err(ModelError::Format { line: 4, .. })));
    }

    #[test]
    fn save_then_load_is_identity() {
        let f = load_problem(EXAMPLE1).unwrap();
        let text = save_problem(&f);
        assert_eq!(load_problem(&text).unwrap(), f);
        assert!(text.contains("objective = \"-z1^2 - z2^2\""));
    }
}
