//! Conic program description and a solver contract.
//!
//! A program minimizes `c'x` subject to `E x = b` and memberships
//! `A_i x + b_i ∈ K_i` for nonnegative orthants, second-order cones,
//! exponential cones and PSD cones.

mod barrier;
mod cones;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use barrier::{BarrierSettings, BarrierSolver};
pub use cones::psd_index;

/// One affine expression `Σ coef·x[var] + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineRow {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineRow {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: usize) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: usize, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn plus(mut self, v: usize, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[*v]).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConeKind {
    /// Every row `>= 0`.
    Nonneg,
    /// `(t, u)` with `‖u‖₂ <= t`.
    SecondOrder,
    /// `(x, y, z)` with `y·exp(x/y) <= z`, `y > 0`.
    Exponential,
    /// Symmetric `n×n` matrix, rows hold the lower triangle column by column.
    Psd { n: usize },
}

impl ConeKind {
    pub fn expected_rows(&self, rows: usize) -> bool {
        match *self {
            ConeKind::Nonneg => rows >= 1,
            ConeKind::SecondOrder => rows >= 2,
            ConeKind::Exponential => rows == 3,
            ConeKind::Psd { n } => n >= 1 && rows == n * (n + 1) / 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub label: String,
    pub kind: ConeKind,
    pub rows: Vec<AffineRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EqualityConstraint {
    pub label: String,
    /// `row == 0`.
    pub row: AffineRow,
}

/// Minimize `objective'x` over the cone and equality constraints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub variables: Vec<String>,
    pub objective: Vec<f64>,
    pub equalities: Vec<EqualityConstraint>,
    pub cones: Vec<ConeConstraint>,
}

impl ConicProgram {
    pub fn add_variable(&mut self, name: impl Into<String>) -> usize {
        self.variables.push(name.into());
        self.objective.push(0.0);
        self.variables.len() - 1
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn add_cone(&mut self, label: impl Into<String>, kind: ConeKind, rows: Vec<AffineRow>) {
        self.cones.push(ConeConstraint {
            label: label.into(),
            kind,
            rows,
        });
    }

    pub fn add_equality(&mut self, label: impl Into<String>, row: AffineRow) {
        self.equalities.push(EqualityConstraint {
            label: label.into(),
            row,
        });
    }

    /// Barrier parameter: sum of the cone degrees.
    pub fn barrier_degree(&self) -> f64 {
        self.cones.iter().map(cones::degree).sum()
    }

    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.variables.len();
        if self.objective.len() != n {
            return Err(ConicError::Malformed(format!(
                "objective has {} entries for {n} variables",
                self.objective.len()
            )));
        }
        let rows = self
            .cones
            .iter()
            .flat_map(|c| c.rows.iter())
            .chain(self.equalities.iter().map(|e| &e.row));
        for row in rows {
            if let Some((v, _)) = row.terms.iter().find(|(v, _)| *v >= n) {
                return Err(ConicError::Malformed(format!("variable index {v} out of range")));
            }
            if !row.constant.is_finite() || row.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(ConicError::Malformed("non-finite coefficient".into()));
            }
        }
        for c in &self.cones {
            if !c.kind.expected_rows(c.rows.len()) {
                return Err(ConicError::Malformed(format!(
                    "cone {} ({:?}) has {} rows",
                    c.label,
                    c.kind,
                    c.rows.len()
                )));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest absolute equality residual at `x`.
    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .map(|e| e.row.eval(x).abs())
            .fold(0.0, f64::max)
    }

    /// True when `x` lies in the interior of every cone.
    pub fn strictly_inside(&self, x: &[f64]) -> bool {
        self.cones.iter().all(|c| {
            let s: Vec<f64> = c.rows.iter().map(|r| r.eval(x)).collect();
            cones::value(c.kind, &s).is_some()
        })
    }

    /// Self-describing dump: variables, cones, coefficient triplets and offsets.
    pub fn to_json(&self) -> serde_json::Value {
        let cone_json = |c: &ConeConstraint| {
            let triplets: Vec<(usize, usize, f64)> = c
                .rows
                .iter()
                .enumerate()
                .flat_map(|(i, r)| r.terms.iter().map(move |(v, a)| (i, *v, *a)))
                .collect();
            serde_json::json!({
                "label": c.label,
                "cone": c.kind,
                "rows": c.rows.len(),
                "triplets": triplets,
                "offsets": c.rows.iter().map(|r| r.constant).collect::<Vec<_>>(),
            })
        };
        serde_json::json!({
            "sense": "minimize",
            "variables": self.variables,
            "objective": self.objective,
            "equalities": self.equalities.iter().map(|e| serde_json::json!({
                "label": e.label,
                "triplets": e.row.terms,
                "offset": e.row.constant,
            })).collect::<Vec<_>>(),
            "cones": self.cones.iter().map(cone_json).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Stopped at the Newton-step cap with a usable but inaccurate point.
    AlmostOptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Upper bound on `objective - optimum`.
    pub gap_bound: f64,
    pub equality_residual: f64,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("start point is not strictly feasible: {0}")]
    NotInterior(String),
    #[error("numerical failure after {newton_steps} Newton steps: {reason}")]
    Numerical { reason: String, newton_steps: usize },
    #[error("iteration limit reached with gap bound {gap_bound:e}")]
    IterationLimit { gap_bound: f64 },
}

/// Anything that can solve a [`ConicProgram`] from a strictly feasible start.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, program: &ConicProgram, start: &[f64]) -> Result<ConicSolution, ConicError>;
}
