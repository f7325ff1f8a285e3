//! The bounding set `G` of achievable MWS rate vectors.
//!
//! Variables are the rates `r`, scheduling probabilities `p`, the cross
//! moments `y_k = E[x_k φ_k]` and the joint covariance `H` of the schedule
//! indicators and SNRs. Two encodings are available:
//!
//! * [`Formulation::Full`] keeps `y`, `H^xx`, `H^xφ` as variables with one
//!   `2K×2K` PSD cone, exactly as the constraints are stated.
//! * [`Formulation::Compact`] eliminates the PSD cone through its Schur
//!   complement. With `H^φφ = D = diag(v) ≻ 0`, `H ⪰ 0` holds iff
//!   `H^xx ⪰ C Cᵀ` where `C = H^xφ D^{-1/2}`. The remaining constraints on
//!   `H^xx` (its diagonal and its entry sum) are monotone in the PSD order,
//!   so `H^xx = C Cᵀ` can be substituted without changing the projection
//!   onto `r`. Only second-order and exponential cones remain.
//!
//! All programs are built in normalized rate units (`Δ₀·B = 1`); the scale is
//! applied to returned rates and objectives.

mod check;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conic::{
    psd_index, AffineRow, BarrierSolver, ConeKind, ConicProgram, ConicSolution, ConicSolver,
    SolveStatus,
};
use crate::error::{invalid, Error, Result};
use crate::mws::{RateVector, Weights};
use crate::stats::SnrStats;

pub use check::{constraint_residuals, residual_tolerance, ConstraintFamily};

const LN2: f64 = std::f64::consts::LN_2;
/// Rates at or below this (normalized) make the utility optimum degenerate.
const DEGENERATE_RATE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    #[default]
    Compact,
    Full,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    k: usize,
    r: usize,
    p: usize,
    /// Full only.
    y: Option<usize>,
    /// Full only: upper triangle of `H^xx`, row by row.
    hxx: Option<usize>,
    /// `H^xφ` (full) or `C` (compact), `K × phi_users.len()`, row-major.
    cross: usize,
    /// Users with positive SNR variance; the others have a degenerate `φ` row in `H`.
    phi_users: Vec<usize>,
}

impl Layout {
    fn r(&self, k: usize) -> usize {
        self.r + k
    }
    fn p(&self, k: usize) -> usize {
        self.p + k
    }
    fn kphi(&self) -> usize {
        self.phi_users.len()
    }
    fn cross(&self, i: usize, col: usize) -> usize {
        self.cross + i * self.kphi() + col
    }
    fn phi_col(&self, user: usize) -> Option<usize> {
        self.phi_users.iter().position(|&u| u == user)
    }
    fn hxx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row i of the upper triangle starts after rows 0..i
        self.hxx.expect("full layout") + i * self.k - i * i.saturating_sub(1) / 2 + (j - i)
    }
}

/// Compiled constraints of `G` for one set of statistics.
#[derive(Clone, Debug)]
pub struct RegionProblem {
    stats: SnrStats,
    delta0: f64,
    bandwidth: f64,
    formulation: Formulation,
    layout: Layout,
    constraints: ConicProgram,
}

/// Solution of one program over `G`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSolution {
    /// Rates including the `Δ₀·B` scale.
    pub rates: RateVector,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major `2K×2K` covariance witness `[[H^xx, H^xφ], [H^φx, H^φφ]]`.
    pub h: Vec<Vec<f64>>,
    /// `⟨w, r⟩` for rate estimation, `Σ ln r_k` for the utility optimum (scaled rates).
    pub objective_value: f64,
    pub solver_status: SolveStatus,
    /// Bound on the objective suboptimality, in the units of `objective_value`.
    pub gap_bound: f64,
    pub newton_steps: usize,
}

/// Compiles the statistics into `G` with the default formulation.
pub fn build_region(stats: &SnrStats, delta0: f64, bandwidth: f64) -> Result<RegionProblem> {
    RegionProblem::new(stats, delta0, bandwidth, Formulation::default())
}

impl RegionProblem {
    pub fn new(
        stats: &SnrStats,
        delta0: f64,
        bandwidth: f64,
        formulation: Formulation,
    ) -> Result<Self> {
        if !(delta0 > 0.0 && delta0.is_finite() && bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(invalid("delta0 and bandwidth must be positive and finite"));
        }
        let (layout, constraints) = match formulation {
            Formulation::Full => compile_full(stats),
            Formulation::Compact => compile_compact(stats),
        };
        Ok(Self {
            stats: stats.clone(),
            delta0,
            bandwidth,
            formulation,
            layout,
            constraints,
        })
    }

    pub fn num_users(&self) -> usize {
        self.layout.k
    }

    pub fn stats(&self) -> &SnrStats {
        &self.stats
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    /// `Δ₀·B`.
    pub fn scale(&self) -> f64 {
        self.delta0 * self.bandwidth
    }

    /// Constraint program (zero objective).
    pub fn constraints(&self) -> &ConicProgram {
        &self.constraints
    }

    /// Program maximizing `⟨w, r⟩`, posed as a minimization.
    pub fn rate_program(&self, w: &Weights) -> Result<ConicProgram> {
        if w.len() != self.layout.k {
            return Err(Error::DimensionMismatch {
                expected: self.layout.k,
                got: w.len(),
            });
        }
        let mut prog = self.constraints.clone();
        for (k, wk) in w.as_slice().iter().enumerate() {
            prog.objective[self.layout.r(k)] = -wk;
        }
        Ok(prog)
    }

    /// Program maximizing `Σ ln r_k` through epigraph variables `τ_k <= ln r_k`.
    pub fn utility_program(&self) -> ConicProgram {
        let mut prog = self.constraints.clone();
        for k in 0..self.layout.k {
            let tau = prog.add_variable(format!("tau[{k}]"));
            prog.objective[tau] = -1.0;
            prog.add_cone(
                format!("log_rate[{k}]"),
                ConeKind::Exponential,
                vec![
                    AffineRow::var(tau),
                    AffineRow::constant(1.0),
                    AffineRow::var(self.layout.r(k)),
                ],
            );
        }
        prog
    }

    /// Strictly feasible point of the constraint program.
    fn start(&self, with_tau: bool) -> Vec<f64> {
        let l = &self.layout;
        let k = l.k;
        let mut x = vec![0.0; self.constraints.num_variables()];
        let p0 = 0.5 / k as f64;
        for u in 0..k {
            let m = self.stats.means()[u];
            x[l.p(u)] = p0;
            x[l.r(u)] = 0.5 * p0 * (1.0 + m).log2();
            if let Some(y) = l.y {
                x[y + u] = p0 * m;
            }
        }
        if l.hxx.is_some() {
            let eps = 0.5 * (p0 - p0 * p0).min(0.25 / k as f64);
            for u in 0..k {
                x[l.hxx(u, u)] = eps;
            }
        }
        if with_tau {
            for u in 0..k {
                x.push(x[l.r(u)].ln() - 1.0);
            }
        }
        x
    }

    pub fn estimate_rates(&self, w: &Weights) -> Result<RegionSolution> {
        self.estimate_rates_with(&BarrierSolver::default(), w)
    }

    pub fn estimate_rates_with(
        &self,
        solver: &dyn ConicSolver,
        w: &Weights,
    ) -> Result<RegionSolution> {
        let prog = self.rate_program(w)?;
        let sol = solver.solve(&prog, &self.start(false))?;
        let scale = self.scale();
        let mut out = self.extract(&sol);
        out.objective_value = -sol.objective * scale;
        out.gap_bound = sol.gap_bound * scale;
        check::verify(&self.stats, &out, scale)?;
        Ok(out)
    }

    pub fn optimal_rates(&self) -> Result<RegionSolution> {
        self.optimal_rates_with(&BarrierSolver::default())
    }

    pub fn optimal_rates_with(&self, solver: &dyn ConicSolver) -> Result<RegionSolution> {
        let prog = self.utility_program();
        let sol = solver.solve(&prog, &self.start(true))?;
        let scale = self.scale();
        let mut out = self.extract(&sol);
        for (user, r) in out.rates.as_slice().iter().enumerate() {
            if *r <= DEGENERATE_RATE * scale {
                return Err(Error::DegenerateRegion { user, rate: *r });
            }
        }
        out.objective_value = out.rates.as_slice().iter().map(|r| r.ln()).sum();
        out.gap_bound = sol.gap_bound;
        check::verify(&self.stats, &out, scale)?;
        Ok(out)
    }

    /// Diameter bound `R̂` including the `Δ₀·B` scale.
    pub fn diameter_bound(&self) -> f64 {
        region_diameter_bound(&self.stats) * self.scale()
    }

    fn extract(&self, sol: &ConicSolution) -> RegionSolution {
        let l = &self.layout;
        let k = l.k;
        let x = &sol.x;
        let means = self.stats.means();
        let vars = self.stats.variances();
        let p: Vec<f64> = (0..k).map(|u| x[l.p(u)]).collect();
        let mut h = DMatrix::<f64>::zeros(2 * k, 2 * k);
        for u in 0..k {
            h[(k + u, k + u)] = vars[u];
        }
        let y: Vec<f64> = match self.formulation {
            Formulation::Full => {
                for i in 0..k {
                    for j in 0..k {
                        h[(i, j)] = x[l.hxx(i, j)];
                    }
                    for (col, &j) in l.phi_users.iter().enumerate() {
                        h[(i, k + j)] = x[l.cross(i, col)];
                        h[(k + j, i)] = x[l.cross(i, col)];
                    }
                }
                (0..k).map(|u| x[l.y.expect("full layout") + u]).collect()
            }
            Formulation::Compact => {
                let kp = l.kphi();
                let c = DMatrix::from_fn(k, kp, |i, col| x[l.cross(i, col)]);
                let hxx = &c * c.transpose();
                for i in 0..k {
                    for j in 0..k {
                        h[(i, j)] = hxx[(i, j)];
                    }
                    for (col, &j) in l.phi_users.iter().enumerate() {
                        let v = vars[j].sqrt() * c[(i, col)];
                        h[(i, k + j)] = v;
                        h[(k + j, i)] = v;
                    }
                }
                (0..k).map(|u| p[u] * means[u] + h[(u, k + u)]).collect()
            }
        };
        let scale = self.scale();
        RegionSolution {
            rates: RateVector::from_solver((0..k).map(|u| x[l.r(u)] * scale).collect()),
            p,
            y,
            h: (0..2 * k).map(|i| h.row(i).iter().copied().collect()).collect(),
            objective_value: 0.0,
            solver_status: sol.status,
            gap_bound: 0.0,
            newton_steps: sol.newton_steps,
        }
    }
}

/// Maximizes `⟨w, r⟩` over `G`.
pub fn estimate_rates(problem: &RegionProblem, w: &Weights) -> Result<RegionSolution> {
    problem.estimate_rates(w)
}

/// Maximizes `Σ ln r_k` over `G`.
pub fn optimal_rates(problem: &RegionProblem) -> Result<RegionSolution> {
    problem.optimal_rates()
}

/// Per-user rate bound `(1+α)log2(1+α) − α log2 α + log2(e)/e`, `α = √v + m`.
pub fn per_user_rate_bound(mean: f64, variance: f64) -> f64 {
    let a = variance.sqrt() + mean;
    let alog = if a > 0.0 { a * a.log2() } else { 0.0 };
    (1.0 + a) * (1.0 + a).log2() - alog + std::f64::consts::LOG2_E / std::f64::consts::E
}

/// `R̂`: ℓ2 norm of the per-user bounds, in normalized units (`Δ₀·B = 1`).
pub fn region_diameter_bound(stats: &SnrStats) -> f64 {
    stats
        .means()
        .iter()
        .zip(stats.variances())
        .map(|(m, v)| per_user_rate_bound(*m, *v).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn phi_users(stats: &SnrStats) -> Vec<usize> {
    (0..stats.num_users())
        .filter(|&u| stats.variances()[u] > 0.0)
        .collect()
}

/// Constraints shared by both encodings: nonnegative rates, the probability box and one user per slot.
fn add_box_constraints(prog: &mut ConicProgram, l: &Layout) {
    let k = l.k;
    prog.add_cone(
        "rates nonnegative",
        ConeKind::Nonneg,
        (0..k).map(|u| AffineRow::var(l.r(u))).collect(),
    );
    let mut probs: Vec<AffineRow> = (0..k).map(|u| AffineRow::var(l.p(u))).collect();
    probs.extend((0..k).map(|u| AffineRow::constant(1.0).plus(l.p(u), -1.0)));
    prog.add_cone("probability box", ConeKind::Nonneg, probs);
    let mut sum = AffineRow::constant(1.0);
    for u in 0..k {
        sum = sum.plus(l.p(u), -1.0);
    }
    prog.add_cone("one user per slot", ConeKind::Nonneg, vec![sum]);
}

/// `ln2·r ≤ p ln(z/p)` as `(ln2·r, p, z) ∈ K_exp`.
fn add_jensen_cone(prog: &mut ConicProgram, l: &Layout, u: usize, z: AffineRow) {
    prog.add_cone(
        format!("jensen[{u}]"),
        ConeKind::Exponential,
        vec![AffineRow::term(l.r(u), LN2), AffineRow::var(l.p(u)), z],
    );
}

/// `h + ‖g‖² ≤ a − a²` for affine `a`, optional affine `h` and affine entries `g`.
fn add_variance_cap(
    prog: &mut ConicProgram,
    label: String,
    a: &AffineRow,
    linear: Option<&AffineRow>,
    quadratic: Vec<AffineRow>,
) {
    // with u = a − h: ‖(2g, 2a, u − 1)‖ ≤ u + 1  ⇔  ‖g‖² + a² ≤ u
    let u = match linear {
        Some(h) => {
            let mut u = a.clone();
            for &(v, c) in &h.terms {
                u.terms.push((v, -c));
            }
            u.constant -= h.constant;
            u
        }
        None => a.clone(),
    };
    let mut rows = vec![u.clone().offset(1.0)];
    rows.extend(quadratic.into_iter().map(|g| g.scaled(2.0)));
    rows.push(a.clone().scaled(2.0));
    rows.push(u.offset(-1.0));
    prog.add_cone(label, ConeKind::SecondOrder, rows);
}

fn compile_full(stats: &SnrStats) -> (Layout, ConicProgram) {
    let k = stats.num_users();
    let phi = phi_users(stats);
    let kp = phi.len();
    let mut prog = ConicProgram::default();
    for u in 0..k {
        prog.add_variable(format!("r[{u}]"));
    }
    for u in 0..k {
        prog.add_variable(format!("p[{u}]"));
    }
    for u in 0..k {
        prog.add_variable(format!("y[{u}]"));
    }
    for i in 0..k {
        for j in i..k {
            prog.add_variable(format!("Hxx[{i},{j}]"));
        }
    }
    for i in 0..k {
        for &j in &phi {
            prog.add_variable(format!("Hxphi[{i},{j}]"));
        }
    }
    let l = Layout {
        k,
        r: 0,
        p: k,
        y: Some(2 * k),
        hxx: Some(3 * k),
        cross: 3 * k + k * (k + 1) / 2,
        phi_users: phi,
    };
    let means = stats.means();
    let vars = stats.variances();
    let y = |u: usize| 2 * k + u;

    add_box_constraints(&mut prog, &l);
    for u in 0..k {
        add_jensen_cone(&mut prog, &l, u, AffineRow::var(l.p(u)).plus(y(u), 1.0));
    }
    for (u, &mean) in means.iter().enumerate() {
        // H^xφ_kk = y_k − p_k m_k; a zero-variance user has H^xφ_kk = 0
        let mut row = AffineRow::var(y(u)).plus(l.p(u), -mean);
        if let Some(col) = l.phi_col(u) {
            row = row.plus(l.cross(u, col), -1.0);
        }
        prog.add_equality(format!("covariance[{u}]"), row);
    }
    for u in 0..k {
        let a = AffineRow::var(l.p(u));
        add_variance_cap(
            &mut prog,
            format!("indicator variance[{u}]"),
            &a,
            Some(&AffineRow::var(l.hxx(u, u))),
            Vec::new(),
        );
    }
    let mut s = AffineRow::default();
    let mut total = AffineRow::default();
    for u in 0..k {
        s = s.plus(l.p(u), 1.0);
    }
    for i in 0..k {
        for j in i..k {
            total = total.plus(l.hxx(i, j), if i == j { 1.0 } else { 2.0 });
        }
    }
    add_variance_cap(
        &mut prog,
        "aggregate variance".into(),
        &s,
        Some(&total),
        Vec::new(),
    );

    // H^φφ = diag(v) enters the PSD block as constants
    let n = k + kp;
    let mut rows = vec![AffineRow::default(); n * (n + 1) / 2];
    for j in 0..n {
        for i in j..n {
            let row = if i < k {
                AffineRow::var(l.hxx(i, j))
            } else if j < k {
                AffineRow::var(l.cross(j, i - k))
            } else if i == j {
                AffineRow::constant(vars[l.phi_users[i - k]])
            } else {
                AffineRow::constant(0.0)
            };
            rows[psd_index(n, i, j)] = row;
        }
    }
    prog.add_cone("joint covariance PSD", ConeKind::Psd { n }, rows);
    (l, prog)
}

fn compile_compact(stats: &SnrStats) -> (Layout, ConicProgram) {
    let k = stats.num_users();
    let phi = phi_users(stats);
    let kp = phi.len();
    let mut prog = ConicProgram::default();
    for u in 0..k {
        prog.add_variable(format!("r[{u}]"));
    }
    for u in 0..k {
        prog.add_variable(format!("p[{u}]"));
    }
    for i in 0..k {
        for &j in &phi {
            prog.add_variable(format!("C[{i},{j}]"));
        }
    }
    let l = Layout {
        k,
        r: 0,
        p: k,
        y: None,
        hxx: None,
        cross: 2 * k,
        phi_users: phi,
    };
    let means = stats.means();
    let vars = stats.variances();

    add_box_constraints(&mut prog, &l);
    for u in 0..k {
        // p + y with y = p m + √v C_kk
        let mut z = AffineRow::term(l.p(u), 1.0 + means[u]);
        if let Some(col) = l.phi_col(u) {
            z = z.plus(l.cross(u, col), vars[u].sqrt());
        }
        add_jensen_cone(&mut prog, &l, u, z);
    }
    for u in 0..k {
        add_variance_cap(
            &mut prog,
            format!("indicator variance[{u}]"),
            &AffineRow::var(l.p(u)),
            None,
            (0..kp).map(|col| AffineRow::var(l.cross(u, col))).collect(),
        );
    }
    let mut s = AffineRow::default();
    for u in 0..k {
        s = s.plus(l.p(u), 1.0);
    }
    let col_sums = (0..kp)
        .map(|col| {
            (0..k).fold(AffineRow::default(), |acc, i| acc.plus(l.cross(i, col), 1.0))
        })
        .collect();
    add_variance_cap(&mut prog, "aggregate variance".into(), &s, None, col_sums);
    (l, prog)
}
