//! Built-in problems and the JSON problem format.

use serde::{Deserialize, Serialize};

use crate::battery::{OcpTable, Scenario};
use crate::error::{Error, Result};
use crate::model::{Constraint, OCProblem, ScalarField, SystemModel};

/// Horizon used for both Example 1 cases.
pub const EXAMPLE1_TF: f64 = 20.0;

pub const BUILTIN: [&str; 3] = ["example1a", "example1b", "spm"];

/// Example 1: `ẋ = diag(a) x + 1 u`, `x(0) = (0.5, 0.5)`, `u ∈ [0, 1]`,
/// `(x1 + x2) u ≤ 4`, minimize `-x1(t_f)`.
pub fn example1(a: [f64; 2], t_f: f64) -> OCProblem {
    OCProblem::new(
        "example1",
        SystemModel::linear_diagonal(a.to_vec()),
        vec![0.5, 0.5],
        t_f,
        (0.0, 1.0),
        ScalarField::linear(vec![-1.0, 0.0]),
    )
    .expect("example 1 data is valid")
    .with_constraint(Constraint::bilinear("s", vec![1.0, 1.0], vec![0.0, 0.0], -4.0))
}

pub fn example1a() -> OCProblem {
    let mut p = example1([0.0, -1.0], EXAMPLE1_TF);
    p.name = "example1a".into();
    p
}

pub fn example1b() -> OCProblem {
    let mut p = example1([-1.0, 0.0], EXAMPLE1_TF);
    p.name = "example1b".into();
    p
}

/// A problem together with its preferred simulation step.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub problem: OCProblem,
    pub dt: f64,
    /// Coarser step for oracle rollouts.
    pub oracle_dt: f64,
}

pub fn builtin(name: &str) -> Option<Loaded> {
    let problem = match name {
        "example1a" => example1a(),
        "example1b" => example1b(),
        "spm" => {
            let s = Scenario::default_charging();
            let problem = s.problem(&OcpTable::lionsimba()).ok()?;
            let dt = s.dt.unwrap_or(1e-3 * s.t_f);
            return Some(Loaded {
                problem,
                dt,
                oracle_dt: 0.5,
            });
        }
        _ => return None,
    };
    let dt = 1e-3 * problem.t_f;
    Some(Loaded {
        problem,
        dt,
        oracle_dt: 0.1,
    })
}

/// Bilinear constraint `(wᵀx) u + vᵀx + b ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearSpec {
    pub name: String,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub b: f64,
}

/// Linear-diagonal problem with a linear terminal objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub name: String,
    pub a: Vec<f64>,
    pub x0: Vec<f64>,
    pub u_min: f64,
    pub u_max: f64,
    pub t_f: f64,
    /// Weights `w` of `φ(x) = wᵀx`.
    pub objective: Vec<f64>,
    #[serde(default)]
    pub constraints: Vec<BilinearSpec>,
    #[serde(default)]
    pub dt: Option<f64>,
}

impl ProblemFile {
    pub fn build(&self) -> Result<Loaded> {
        let n = self.a.len();
        if self.objective.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.objective.len(),
            });
        }
        let mut p = OCProblem::new(
            self.name.clone(),
            SystemModel::linear_diagonal(self.a.clone()),
            self.x0.clone(),
            self.t_f,
            (self.u_min, self.u_max),
            ScalarField::linear(self.objective.clone()),
        )?;
        for c in &self.constraints {
            for len in [c.w.len(), c.v.len()] {
                if len != n {
                    return Err(Error::Dimension { expected: n, got: len });
                }
            }
            p = p.with_constraint(Constraint::bilinear(c.name.clone(), c.w.clone(), c.v.clone(), c.b));
        }
        let dt = self.dt.unwrap_or(1e-3 * self.t_f);
        Ok(Loaded {
            problem: p,
            dt,
            oracle_dt: dt.max(5e-3 * self.t_f),
        })
    }
}

/// Resolves a built-in name, or else reads a problem file.
pub fn resolve(spec: &str) -> Result<Loaded> {
    if let Some(l) = builtin(spec) {
        return Ok(l);
    }
    let path = std::path::Path::new(spec);
    if path.is_file() {
        let f: ProblemFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        return f.build();
    }
    Err(Error::InvalidArgument(format!(
        "unknown problem `{spec}` (expected one of {} or a problem file)",
        BUILTIN.join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        for name in BUILTIN {
            let l = resolve(name).unwrap();
            assert!(l.dt > 0.0 && l.dt <= 1e-3 * l.problem.t_f + 1e-12);
        }
        assert!(matches!(resolve("nope"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn problem_file_roundtrip() {
        let f = ProblemFile {
            name: "p".into(),
            a: vec![0.0, -1.0],
            x0: vec![0.5, 0.5],
            u_min: 0.0,
            u_max: 1.0,
            t_f: 20.0,
            objective: vec![-1.0, 0.0],
            constraints: vec![BilinearSpec {
                name: "s".into(),
                w: vec![1.0, 1.0],
                v: vec![0.0, 0.0],
                b: -4.0,
            }],
            dt: None,
        };
        let text = serde_json::to_string(&f).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, text).unwrap();
        let l = resolve(path.to_str().unwrap()).unwrap();
        assert_eq!(l.problem.constraints.len(), 3);
        assert_eq!(l.dt, 0.02);

        let mut bad = f.clone();
        bad.objective = vec![1.0];
        assert!(matches!(bad.build(), Err(Error::Dimension { .. })));
    }
}
