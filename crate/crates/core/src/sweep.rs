//! Fuel cost against initial SoC for several solvers, as CSV.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::dmop::{replay, solve_dmop_dp, ModeSchedule, SocGrid, TripInstance};
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::online::run_online;
use crate::relax::{approximate, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSolver {
    /// grid DP optimum
    Opt,
    /// relaxation plus rounding
    Apx,
    /// threshold online policy
    Online,
    /// charge-sustaining in every slot
    CsAlways,
}

impl SweepSolver {
    pub const ALL: [SweepSolver; 4] = [SweepSolver::Opt, SweepSolver::Apx, SweepSolver::Online, SweepSolver::CsAlways];

    pub fn name(self) -> &'static str {
        match self {
            SweepSolver::Opt => "opt",
            SweepSolver::Apx => "apx",
            SweepSolver::Online => "online",
            SweepSolver::CsAlways => "cs_always",
        }
    }

    pub fn run(self, instance: &TripInstance, grid_levels: usize, tol: &Tolerances) -> Result<ModeSchedule> {
        match self {
            SweepSolver::Opt => solve_dmop_dp(instance, &SocGrid::new(grid_levels, instance.bounds)?),
            SweepSolver::Apx => approximate(instance, tol).map(|o| o.schedule),
            SweepSolver::Online => run_online(instance, None).map(|(s, _)| s),
            SweepSolver::CsAlways => {
                let s = replay(instance, &vec![Mode::Cs; instance.horizon()])?;
                let short_fuel = s.total_fuel > instance.g0;
                let short_soc = instance.terminal_soc.is_some_and(|b| s.final_soc < b - instance.bounds.tol());
                if short_fuel || short_soc {
                    return Err(Error::Infeasible);
                }
                Ok(s)
            }
        }
    }
}

impl fmt::Display for SweepSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepSolver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepSolver::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown solver '{s}' (expected opt, apx, online or cs_always)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "B0")]
    pub b0: f64,
    pub solver: &'static str,
    pub fuel_cost: Option<f64>,
    pub ev_ratio: Option<f64>,
    pub ce_ratio: Option<f64>,
    pub cs_ratio: Option<f64>,
    pub ap_ratio: Option<f64>,
    pub status: String,
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn b0_values(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// One row per `(b0, solver)` in input order. Solver failures become a status
/// instead of aborting the sweep.
pub fn sweep(
    template: &TripInstance,
    b0s: &[f64],
    solvers: &[SweepSolver],
    grid_levels: usize,
    tol: &Tolerances,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>> {
    template.validate()?;
    for &b in b0s {
        template.with_b0(b).validate()?;
    }
    let jobs: Vec<(f64, SweepSolver)> = b0s.iter().flat_map(|&b| solvers.iter().map(move |&s| (b, s))).collect();
    let row = |&(b0, solver): &(f64, SweepSolver)| {
        let mut row = SweepRow {
            b0,
            solver: solver.name(),
            fuel_cost: None,
            ev_ratio: None,
            ce_ratio: None,
            cs_ratio: None,
            ap_ratio: None,
            status: "ok".into(),
        };
        match solver.run(&template.with_b0(b0), grid_levels, tol) {
            Ok(s) => {
                let [ev, ce, cs, ap] = s.mode_ratios();
                row.fuel_cost = Some(s.total_fuel);
                row.ev_ratio = Some(ev);
                row.ce_ratio = Some(ce);
                row.cs_ratio = Some(cs);
                row.ap_ratio = Some(ap);
            }
            Err(Error::Infeasible) => row.status = "INFEASIBLE".into(),
            Err(e) => row.status = e.to_string(),
        }
        row
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(row).collect()))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["B0", "solver", "fuel_cost", "ev_ratio", "ce_ratio", "cs_ratio", "ap_ratio", "status"])
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Runs the sweep and writes it as CSV.
pub fn emit_sweep<W: Write>(
    template: &TripInstance,
    b0s: &[f64],
    solvers: &[SweepSolver],
    grid_levels: usize,
    tol: &Tolerances,
    threads: Option<usize>,
    out: W,
) -> Result<Vec<SweepRow>> {
    let rows = sweep(template, b0s, solvers, grid_levels, tol, threads)?;
    write_sweep_csv(&rows, out)?;
    Ok(rows)
}
