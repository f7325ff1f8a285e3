//! Primal log-barrier path-following method with damped Newton centering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cones;
use super::{ConeKind, ConicError, ConicProgram, ConicSolution, ConicSolver, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierSettings {
    /// Initial barrier weight on the objective.
    pub t0: f64,
    /// Multiplicative increase of `t` between centerings.
    pub mu: f64,
    /// Stop once `ν/t` falls below this.
    pub gap_tolerance: f64,
    /// Final centering stops when the squared Newton decrement is below this.
    pub centering_tolerance: f64,
    /// Looser decrement target for the intermediate centerings.
    pub path_tolerance: f64,
    pub max_newton_steps: usize,
    /// Newton steps allowed per centering before moving on.
    pub max_centering_steps: usize,
    /// Take a tangent step along the central path before each centering.
    pub predictor: bool,
    /// Largest equality residual accepted at the start point.
    pub start_equality_tolerance: f64,
}

impl Default for BarrierSettings {
    fn default() -> Self {
        Self {
            t0: 1.0,
            mu: 20.0,
            gap_tolerance: 1e-9,
            centering_tolerance: 1e-9,
            path_tolerance: 1e-2,
            max_newton_steps: 500,
            max_centering_steps: 40,
            predictor: true,
            start_equality_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BarrierSolver {
    pub settings: BarrierSettings,
}

impl BarrierSolver {
    pub fn new(settings: BarrierSettings) -> Self {
        Self { settings }
    }
}

struct CompiledCone {
    kind: ConeKind,
    vars: Vec<usize>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl CompiledCone {
    fn slack(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut s = self.b.clone();
        for (col, &v) in self.vars.iter().enumerate() {
            let xv = x[v];
            if xv != 0.0 {
                s.axpy(xv, &self.a.column(col), 1.0);
            }
        }
        s.as_slice().to_vec()
    }
}

struct Compiled {
    n: usize,
    c: DVector<f64>,
    cones: Vec<CompiledCone>,
    e: DMatrix<f64>,
    e_rhs: DVector<f64>,
    nu: f64,
}

fn compile(p: &ConicProgram) -> Compiled {
    let n = p.num_variables();
    let cones = p
        .cones
        .iter()
        .map(|cone| {
            let mut vars: Vec<usize> = cone
                .rows
                .iter()
                .flat_map(|r| r.terms.iter().map(|t| t.0))
                .collect();
            vars.sort_unstable();
            vars.dedup();
            let mut a = DMatrix::zeros(cone.rows.len(), vars.len());
            for (i, row) in cone.rows.iter().enumerate() {
                for &(v, coef) in &row.terms {
                    let col = vars.binary_search(&v).expect("collected above");
                    a[(i, col)] += coef;
                }
            }
            CompiledCone {
                kind: cone.kind,
                vars,
                a,
                b: DVector::from_iterator(cone.rows.len(), cone.rows.iter().map(|r| r.constant)),
            }
        })
        .collect();
    let me = p.equalities.len();
    let mut e = DMatrix::zeros(me, n);
    let mut e_rhs = DVector::zeros(me);
    for (i, eq) in p.equalities.iter().enumerate() {
        for &(v, coef) in &eq.row.terms {
            e[(i, v)] += coef;
        }
        e_rhs[i] = -eq.row.constant;
    }
    Compiled {
        n,
        c: DVector::from_column_slice(&p.objective),
        cones,
        e,
        e_rhs,
        nu: p.barrier_degree(),
    }
}

impl Compiled {
    /// `t·c'x + Φ(x)`, `None` outside the domain.
    fn merit(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut f = t * self.c.dot(x);
        for c in &self.cones {
            f += cones::value(c.kind, &c.slack(x))?;
        }
        Some(f)
    }

    fn in_domain(&self, x: &DVector<f64>) -> bool {
        self.cones
            .iter()
            .all(|c| cones::value(c.kind, &c.slack(x)).is_some())
    }

    /// Gradient and Hessian of `t·c'x + Φ(x)`.
    fn derivatives(&self, x: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = &self.c * t;
        let mut h = DMatrix::zeros(self.n, self.n);
        for cone in &self.cones {
            let m = cone.b.len();
            let s = cone.slack(x);
            let mut gs = vec![0.0; m];
            let mut hs = DMatrix::zeros(m, m);
            cones::derivatives(cone.kind, &s, &mut gs, &mut hs)?;
            let gl = cone.a.tr_mul(&DVector::from_vec(gs));
            let hl = cone.a.tr_mul(&(&hs * &cone.a));
            for (i, &vi) in cone.vars.iter().enumerate() {
                g[vi] += gl[i];
                for (j, &vj) in cone.vars.iter().enumerate() {
                    h[(vi, vj)] += hl[(i, j)];
                }
            }
        }
        Some((g, h))
    }

    /// Solves the equality-constrained Newton system.
    /// With `x` given, the step also removes the equality residual at `x`;
    /// without it the step stays in the null space of the equalities.
    fn direction(
        &self,
        g: &DVector<f64>,
        h: &DMatrix<f64>,
        x: Option<&DVector<f64>>,
    ) -> Option<DVector<f64>> {
        let scale = (0..self.n).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
        let mut chol = None;
        let mut delta = 0.0;
        for _ in 0..8 {
            let mut hr = h.clone();
            for i in 0..self.n {
                hr[(i, i)] += delta;
            }
            if let Some(c) = hr.cholesky() {
                chol = Some(c);
                break;
            }
            delta = if delta == 0.0 { 1e-14 * scale } else { delta * 100.0 };
        }
        let chol = chol?;
        let hinv_g = chol.solve(g);
        if self.e.nrows() == 0 {
            return Some(-hinv_g);
        }
        let re = match x {
            Some(x) => &self.e_rhs - &self.e * x,
            None => DVector::zeros(self.e.nrows()),
        };
        let y = chol.solve(&self.e.transpose());
        let s = &self.e * &y;
        let rhs = -(re + &self.e * &hinv_g);
        let w = match s.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => s.lu().solve(&rhs)?,
        };
        Some(-hinv_g - y * w)
    }
}

impl ConicSolver for BarrierSolver {
    fn solve(&self, program: &ConicProgram, start: &[f64]) -> Result<ConicSolution, ConicError> {
        program.validate()?;
        let st = &self.settings;
        let cp = compile(program);
        if start.len() != cp.n {
            return Err(ConicError::Malformed(format!(
                "start has {} entries for {} variables",
                start.len(),
                cp.n
            )));
        }
        let mut x = DVector::from_column_slice(start);
        if let Some(c) = program
            .cones
            .iter()
            .find(|c| cones::value(c.kind, &c.rows.iter().map(|r| r.eval(start)).collect::<Vec<_>>()).is_none())
        {
            return Err(ConicError::NotInterior(format!("cone {}", c.label)));
        }
        let res0 = program.equality_residual(start);
        if res0 > st.start_equality_tolerance {
            return Err(ConicError::NotInterior(format!("equality residual {res0:e}")));
        }

        let numerical = |reason: &str, steps: usize| ConicError::Numerical {
            reason: reason.to_string(),
            newton_steps: steps,
        };

        let mut t = st.t0;
        let mut steps = 0usize;
        let mut capped = false;
        let mut lambda = f64::INFINITY;
        'outer: loop {
            let last_outer = cp.nu / t <= st.gap_tolerance;
            let tolerance = if last_outer {
                st.centering_tolerance
            } else {
                st.path_tolerance
            };
            let mut last_h = None;
            for _ in 0..st.max_centering_steps {
                if steps >= st.max_newton_steps {
                    capped = true;
                    break 'outer;
                }
                let (g, h) = cp
                    .derivatives(&x, t)
                    .ok_or_else(|| numerical("iterate left the cone interior", steps))?;
                let dx = cp
                    .direction(&g, &h, Some(&x))
                    .ok_or_else(|| numerical("singular Newton system", steps))?;
                if dx.iter().any(|v| !v.is_finite()) {
                    return Err(numerical("non-finite Newton direction", steps));
                }
                let lambda2 = dx.dot(&(&h * &dx)).max(0.0);
                lambda = lambda2.sqrt();
                steps += 1;
                if lambda2 <= tolerance {
                    last_h = Some(h);
                    break;
                }
                // backtrack from the full step, never below the damped step,
                // which is always safe for self-concordant barriers
                let damped = 1.0 / (1.0 + lambda);
                let f0 = cp.merit(&x, t);
                let slope = g.dot(&dx);
                let mut alpha = 1.0;
                let mut trial = &x + &dx * alpha;
                while alpha > damped {
                    if let (Some(f1), Some(f0)) = (cp.merit(&trial, t), f0) {
                        if f1 <= f0 + 0.01 * alpha * slope {
                            break;
                        }
                    }
                    alpha = (alpha * 0.5).max(damped);
                    trial = &x + &dx * alpha;
                }
                let mut tries = 0;
                while !cp.in_domain(&trial) {
                    alpha *= 0.5;
                    tries += 1;
                    if tries > 60 {
                        return Err(numerical("line search could not stay interior", steps));
                    }
                    trial = &x + &dx * alpha;
                }
                let moved = (&trial - &x).amax();
                x = trial;
                if moved <= 1e-15 * (1.0 + x.amax()) {
                    // rounding floor: no further progress possible at this t
                    break;
                }
            }
            if last_outer {
                break;
            }
            let t_next = (t * st.mu).min(cp.nu / st.gap_tolerance);
            if st.predictor {
                // follow the central-path tangent dx/dt = -H⁻¹c towards t_next
                let h = last_h.or_else(|| cp.derivatives(&x, t).map(|(_, h)| h));
                if let Some(d) = h.and_then(|h| cp.direction(&cp.c, &h, None)) {
                    let mut alpha = t_next - t;
                    for _ in 0..40 {
                        let trial = &x + &d * alpha;
                        if cp.in_domain(&trial) {
                            x = trial;
                            break;
                        }
                        alpha *= 0.5;
                    }
                }
            }
            t = t_next;
        }

        let x = x.as_slice().to_vec();
        // suboptimality of an approximately centered point
        let gap_bound = if lambda < 1.0 {
            (cp.nu + lambda * cp.nu.sqrt()) / t
        } else {
            f64::INFINITY
        };
        if gap_bound > 1e3 * st.gap_tolerance {
            return Err(if capped {
                ConicError::IterationLimit { gap_bound }
            } else {
                numerical("final centering failed", steps)
            });
        }
        Ok(ConicSolution {
            objective: program.objective_value(&x),
            equality_residual: program.equality_residual(&x),
            status: if capped {
                SolveStatus::AlmostOptimal
            } else {
                SolveStatus::Optimal
            },
            gap_bound,
            newton_steps: steps,
            x,
        })
    }
}
