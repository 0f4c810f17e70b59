//! Convex relaxations of the mode-selection problems and the solver they share.
//!
//! A [`ConvexProgram`] has box-bounded variables, linear rows, a separable
//! quadratic objective and optional epigraph constraints
//! `tau >= sum(a_k x_k) + c * q^2`. Programs without epigraphs are solved as a
//! single QP; epigraphs are handled with tangent cuts, each round an LP whose
//! value bounds the program from below.

pub mod cdmop;
pub mod ipm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use ipm::{IpmOptions, StdForm};

pub use cdmop::{approximate, build_cdmop, round_modes, CdmopOutcome, CdmopProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coefs: Vec<(usize, f64)>,
    pub kind: RowKind,
    pub rhs: f64,
}

/// `x[tau] >= sum(a_k x_k) + quad * x[quad_var]^2`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epigraph {
    pub tau: usize,
    pub linear: Vec<(usize, f64)>,
    pub quad_var: usize,
    pub quad: f64,
}

impl Epigraph {
    fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(k, a)| a * x[k]).sum();
        lin + self.quad * x[self.quad_var].powi(2)
    }

    fn violation(&self, x: &[f64]) -> f64 {
        self.value(x) - x[self.tau]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexProgram {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<f64>,
    /// objective coefficient of `x_j^2`
    pub quadratic: Vec<f64>,
    pub rows: Vec<LinearRow>,
    pub epigraphs: Vec<Epigraph>,
}

impl ConvexProgram {
    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: f64, hi: f64, cost: f64) -> usize {
        self.names.push(name.into());
        self.lower.push(lo);
        self.upper.push(hi);
        self.linear.push(cost);
        self.quadratic.push(0.0);
        self.lower.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push(LinearRow { coefs, kind, rhs });
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.num_vars()).map(|j| self.linear[j] * x[j] + self.quadratic[j] * x[j] * x[j]).sum()
    }

    /// Largest scaled violation of rows, bounds and epigraphs at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let lhs: f64 = row.coefs.iter().map(|&(j, a)| a * x[j]).sum();
            let scale = row.coefs.iter().fold(1.0f64, |m, &(_, a)| m.max(a.abs()));
            let v = match row.kind {
                RowKind::Eq => (lhs - row.rhs).abs(),
                RowKind::Le => (lhs - row.rhs).max(0.0),
                RowKind::Ge => (row.rhs - lhs).max(0.0),
            };
            worst = worst.max(v / scale);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for e in &self.epigraphs {
            worst = worst.max(e.violation(x) / (1.0 + x[e.tau].abs()));
        }
        worst
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.upper.len() != n || self.linear.len() != n || self.quadratic.len() != n {
            return Err(Error::invalid("program vectors have inconsistent lengths"));
        }
        for j in 0..n {
            if !self.lower[j].is_finite() {
                return Err(Error::invalid(format!("variable {} needs a finite lower bound", self.names[j])));
            }
            if self.quadratic[j] < 0.0 {
                return Err(Error::invalid("objective must be convex"));
            }
        }
        for row in &self.rows {
            if row.coefs.iter().any(|&(j, _)| j >= n) {
                return Err(Error::invalid("row references an unknown variable"));
            }
        }
        for e in &self.epigraphs {
            if e.quad < 0.0 || e.tau >= n || e.quad_var >= n || e.linear.iter().any(|&(j, _)| j >= n) {
                return Err(Error::invalid("malformed epigraph"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// scaled constraint violation accepted in the returned point
    pub feasibility: f64,
    /// relative gap between the returned objective and the certified lower bound
    pub optimality: f64,
    pub max_iter: usize,
    pub max_cut_rounds: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-6, optimality: 1e-4, max_iter: 200, max_cut_rounds: 80 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    /// dual bound on the program's optimum
    pub lower_bound: f64,
    pub residual: f64,
    pub iterations: usize,
    pub cut_rounds: usize,
}

/// Maps program variables onto standard-form columns.
struct Reduction {
    std: StdForm,
    col_of: Vec<Option<usize>>,
    offset: f64,
}

fn reduce(program: &ConvexProgram, cuts: &[(usize, f64)], tol: f64) -> Result<Reduction> {
    let n = program.num_vars();
    let mut std = StdForm::default();
    let mut col_of = vec![None; n];
    let mut offset = 0.0;
    let mut col_entries: Vec<Vec<(usize, f64)>> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (program.lower[j], program.upper[j]);
        if hi < lo - tol * (1.0 + lo.abs()) {
            return Err(Error::Infeasible);
        }
        let (c, q) = (program.linear[j], program.quadratic[j]);
        offset += c * lo + q * lo * lo;
        if hi - lo > 1e-12 * (1.0 + lo.abs()) {
            col_of[j] = Some(col_entries.len());
            col_entries.push(Vec::new());
            std.c.push(c + 2.0 * q * lo);
            std.h.push(2.0 * q);
            std.u.push(hi - lo);
        }
    }

    // rows: original rows, then cut rows
    let mut all_rows: Vec<(Vec<(usize, f64)>, RowKind, f64)> =
        program.rows.iter().map(|r| (r.coefs.clone(), r.kind, r.rhs)).collect();
    for &(e, at) in cuts {
        let ep = &program.epigraphs[e];
        let mut coefs = vec![(ep.tau, 1.0)];
        coefs.extend(ep.linear.iter().map(|&(k, a)| (k, -a)));
        coefs.push((ep.quad_var, -2.0 * ep.quad * at));
        all_rows.push((coefs, RowKind::Ge, -ep.quad * at * at));
    }

    let mut b = Vec::new();
    let mut slacks: Vec<(usize, f64)> = Vec::new();
    for (coefs, kind, rhs) in all_rows {
        let mut rhs = rhs;
        let mut live = Vec::new();
        let mut scale = 1.0f64;
        for (j, a) in coefs {
            if a == 0.0 {
                continue;
            }
            scale = scale.max(a.abs());
            rhs -= a * program.lower[j];
            if col_of[j].is_some() {
                live.push((j, a));
            }
        }
        if live.is_empty() {
            let bad = match kind {
                RowKind::Eq => rhs.abs() > tol * scale,
                RowKind::Le => rhs < -tol * scale,
                RowKind::Ge => rhs > tol * scale,
            };
            if bad {
                return Err(Error::Infeasible);
            }
            continue;
        }
        let i = b.len();
        b.push(rhs);
        for (j, a) in live {
            col_entries[col_of[j].unwrap()].push((i, a));
        }
        match kind {
            RowKind::Eq => {}
            RowKind::Le => slacks.push((i, 1.0)),
            RowKind::Ge => slacks.push((i, -1.0)),
        }
    }
    std.rows = b.len();
    std.b = b;
    std.cols = col_entries;
    for (i, sign) in slacks {
        std.push_col(vec![(i, sign)], 0.0, 0.0, f64::INFINITY);
    }
    for col in &mut std.cols {
        col.sort_by_key(|&(i, _)| i);
    }
    Ok(Reduction { std, col_of, offset })
}

fn expand(program: &ConvexProgram, red: &Reduction, xs: &[f64]) -> Vec<f64> {
    (0..program.num_vars())
        .map(|j| {
            let v = program.lower[j] + red.col_of[j].map_or(0.0, |c| xs[c]);
            v.clamp(program.lower[j], program.upper[j].max(program.lower[j]))
        })
        .collect()
}

/// Distinguishes an infeasible program from a numerical failure.
fn diagnose(std: &StdForm, opts: IpmOptions, last: &ipm::IpmResult) -> Error {
    let mut p1 = StdForm { rows: std.rows, b: std.b.clone(), ..Default::default() };
    for col in &std.cols {
        p1.push_col(col.clone(), 0.0, 0.0, f64::INFINITY);
    }
    for (j, u) in std.u.iter().enumerate() {
        p1.u[j] = *u;
    }
    for i in 0..std.rows {
        p1.push_col(vec![(i, 1.0)], 1.0, 0.0, f64::INFINITY);
        p1.push_col(vec![(i, -1.0)], 1.0, 0.0, f64::INFINITY);
    }
    let r = ipm::solve(&p1, opts);
    let bscale = 1.0 + std.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.converged && r.primal_obj > 1e-7 * bscale {
        Error::Infeasible
    } else {
        Error::IterationLimit {
            iterations: last.iterations,
            primal_residual: last.primal_res,
            dual_residual: last.dual_res,
        }
    }
}

fn initial_cut_points(program: &ConvexProgram, e: &Epigraph) -> Vec<f64> {
    let lo = program.lower[e.quad_var];
    let hi = program.upper[e.quad_var];
    let hi = if hi.is_finite() { hi } else { lo + 1.0 };
    (0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
}

/// Solves a convex program to the requested tolerances.
pub fn solve_convex(program: &ConvexProgram, tol: &Tolerances) -> Result<FractionalSolution> {
    program.validate()?;
    let opts = IpmOptions { tol: 1e-9, max_iter: tol.max_iter };
    let mut cuts: Vec<(usize, f64)> = Vec::new();
    for (e, ep) in program.epigraphs.iter().enumerate() {
        for at in initial_cut_points(program, ep) {
            cuts.push((e, at));
        }
    }
    let mut total_iter = 0;
    for round in 0..=tol.max_cut_rounds {
        let red = reduce(program, &cuts, tol.feasibility)?;
        let r = ipm::solve(&red.std, opts);
        total_iter += r.iterations;
        // a stalled iterate that already meets the caller's tolerances is kept
        let near = r.primal_res <= tol.feasibility
            && r.dual_res <= tol.feasibility
            && (r.primal_obj - r.dual_obj).abs() <= tol.optimality * (1.0 + r.primal_obj.abs());
        if !r.converged && !near {
            return Err(diagnose(&red.std, opts, &r));
        }
        let x = expand(program, &red, &r.x);
        let objective = program.objective(&x);
        let lower_bound = (r.dual_obj + red.offset).min(objective);
        let mut added = false;
        for (e, ep) in program.epigraphs.iter().enumerate() {
            let v = ep.violation(&x);
            if v > 0.1 * tol.feasibility * (1.0 + x[ep.tau].abs()) {
                cuts.push((e, x[ep.quad_var]));
                added = true;
            }
        }
        if !added || round == tol.max_cut_rounds {
            let residual = program.residual(&x);
            if residual > tol.feasibility {
                return Err(Error::IterationLimit {
                    iterations: total_iter,
                    primal_residual: residual,
                    dual_residual: r.dual_res,
                });
            }
            let gap = (objective - lower_bound) / objective.abs().max(1.0);
            if gap > tol.optimality {
                log::warn!("relaxation gap {gap:.3e} exceeds the requested {:.1e}", tol.optimality);
            }
            return Ok(FractionalSolution {
                values: x,
                objective,
                lower_bound,
                residual,
                iterations: total_iter,
                cut_rounds: round,
            });
        }
    }
    unreachable!("cut loop returns on its last round")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_lp_with_fixed_var() {
        let mut p = ConvexProgram::default();
        let a = p.add_var("a", 0.0, 3.0, -1.0);
        let b = p.add_var("b", 1.0, 1.0, 5.0);
        let c = p.add_var("c", 0.0, f64::INFINITY, 0.0);
        p.add_row(vec![(a, 1.0), (b, 1.0), (c, 1.0)], RowKind::Eq, 3.0);
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert!((s.values[a] - 2.0).abs() < 1e-6);
        assert!((s.objective - 3.0).abs() < 1e-6);
        assert!(s.lower_bound <= s.objective + 1e-9);
    }

    #[test]
    fn epigraph_cuts_converge() {
        // min tau s.t. tau >= q^2 + q, q >= 1.5
        let mut p = ConvexProgram::default();
        let q = p.add_var("q", 0.0, 4.0, 0.0);
        let tau = p.add_var("tau", 0.0, f64::INFINITY, 1.0);
        p.add_row(vec![(q, 1.0)], RowKind::Ge, 1.5);
        p.epigraphs.push(Epigraph { tau, linear: vec![(q, 1.0)], quad_var: q, quad: 1.0 });
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert!((s.objective - 3.75).abs() < 1e-5, "{}", s.objective);
        assert!(s.lower_bound <= 3.75 + 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut p = ConvexProgram::default();
        let a = p.add_var("a", 0.0, 1.0, 1.0);
        let b = p.add_var("b", 0.0, 1.0, 1.0);
        p.add_row(vec![(a, 1.0), (b, 1.0)], RowKind::Ge, 3.0);
        assert_eq!(solve_convex(&p, &Tolerances::default()).unwrap_err(), Error::Infeasible);
    }
}
