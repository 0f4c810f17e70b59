//! Fractional drive-mode program and rounding back to a drivable schedule.
//!
//! Engine output is the gated-linear `Q = P+ - s + u`, which equals the
//! per-mode output at every integral mode assignment. Fuel is charged through
//! the convex envelope of the fuel map, split as `Q = q1 + q2` with `q1` below
//! the envelope knee (linear cost) and `q2` beyond it (quadratic cost).

use serde::{Deserialize, Serialize};

use super::{solve_convex, ConvexProgram, FractionalSolution, RowKind, Tolerances};
use crate::dmop::{schedule_from, ModeSchedule, TripInstance};
use crate::error::{Error, Result};
use crate::model::{step_mode, FuelCurve, Mode, VehicleState};

/// Mode order of the per-slot fraction arrays.
pub const FRACTION_ORDER: [Mode; 4] = [Mode::Ev, Mode::Ce, Mode::Cs, Mode::Ap];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotVars {
    /// EV, CE, CS, AP
    pub x: [usize; 4],
    pub r: usize,
    pub s: usize,
    pub u: usize,
    pub soc: usize,
    pub q_lin: usize,
    pub q_quad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdmopProgram {
    pub program: ConvexProgram,
    pub slots: Vec<SlotVars>,
    /// largest total of the mode tie-break costs over any feasible point
    pub tie_break_max: f64,
}

impl CdmopProgram {
    /// Fuel part of the objective (tie-break costs removed).
    pub fn fuel(&self, sol: &FractionalSolution) -> f64 {
        let p = &self.program;
        self.slots
            .iter()
            .map(|v| {
                p.linear[v.q_lin] * sol.values[v.q_lin]
                    + p.linear[v.q_quad] * sol.values[v.q_quad]
                    + p.quadratic[v.q_quad] * sol.values[v.q_quad].powi(2)
            })
            .sum()
    }

    /// Lower bound on the fuel-only relaxation.
    pub fn fuel_lower_bound(&self, sol: &FractionalSolution) -> f64 {
        (sol.lower_bound - self.tie_break_max).min(self.fuel(sol))
    }

    pub fn fractions(&self, sol: &FractionalSolution) -> Vec<[f64; 4]> {
        self.slots.iter().map(|v| v.x.map(|j| sol.values[j].clamp(0.0, 1.0))).collect()
    }
}

/// Envelope slope below the knee and the knee itself.
pub(crate) fn envelope_split(curve: &FuelCurve) -> (f64, f64) {
    let slope = curve.gamma1 + 2.0 * (curve.gamma2 * curve.gamma0).sqrt();
    let knee = if curve.gamma0 == 0.0 {
        0.0
    } else if curve.gamma2 == 0.0 {
        f64::INFINITY
    } else {
        (curve.gamma0 / curve.gamma2).sqrt()
    };
    (slope, knee)
}

/// Where the SoC chain of a trip block starts.
#[derive(Debug, Clone, Copy)]
pub(crate) enum SocStart {
    Fixed(f64),
    Var(usize),
}

/// Adds the per-slot variables and rows of one trip to `p`.
///
/// With `fuel_in_objective` the envelope cost of each slot goes straight into
/// the objective; otherwise the caller prices `q_lin`/`q_quad` itself.
pub(crate) fn add_trip_block(
    p: &mut ConvexProgram,
    trip: &TripInstance,
    start: SocStart,
    tie: f64,
    fuel_in_objective: bool,
    tag: &str,
) -> Vec<SlotVars> {
    let (slope, knee) = envelope_split(&trip.curve);
    let fuel_cost = if fuel_in_objective { slope } else { 0.0 };
    let bounds = trip.bounds;
    let mut slots = Vec::with_capacity(trip.horizon());
    let last = trip.horizon() - 1;
    let mut prev = start;
    for (t, slot) in trip.slots.iter().enumerate() {
        let c = &slot.coeffs;
        let x = FRACTION_ORDER.map(|m| {
            let hi = if trip.modes.contains(m) { 1.0 } else { 0.0 };
            p.add_var(format!("{tag}x_{}[{t}]", m.name().to_lowercase()), 0.0, hi, tie * m.rank() as f64)
        });
        let r = p.add_var(format!("{tag}r[{t}]"), 0.0, slot.p_neg, 0.0);
        let s = p.add_var(format!("{tag}s[{t}]"), 0.0, slot.p_pos, 0.0);
        let u = p.add_var(format!("{tag}u[{t}]"), 0.0, c.engine_charge_cap, 0.0);
        let soc_lo = match trip.terminal_soc {
            Some(b) if t == last => b.max(bounds.lo),
            _ => bounds.lo,
        };
        let soc = p.add_var(format!("{tag}B[{t}]"), soc_lo, bounds.hi, 0.0);
        let qmax = slot.max_engine_output();
        let q_lin = p.add_var(format!("{tag}q1[{t}]"), 0.0, knee.min(qmax), fuel_cost);
        let q_quad_hi = if knee.is_infinite() { 0.0 } else { qmax };
        let q_quad = p.add_var(format!("{tag}q2[{t}]"), 0.0, q_quad_hi, fuel_cost);
        if fuel_in_objective {
            p.quadratic[q_quad] = trip.curve.gamma2;
        }

        p.add_row(x.iter().map(|&j| (j, 1.0)).collect(), RowKind::Eq, 1.0);
        p.add_row(vec![(q_lin, 1.0), (q_quad, 1.0), (s, 1.0), (u, -1.0)], RowKind::Eq, slot.p_pos);
        let mut chain = vec![(soc, 1.0), (r, -c.eta_r), (u, -c.eta_e), (s, c.eta_d)];
        let rhs = match prev {
            SocStart::Var(b) => {
                chain.push((b, -1.0));
                0.0
            }
            SocStart::Fixed(b0) => b0,
        };
        p.add_row(chain, RowKind::Eq, rhs);
        p.add_row(vec![(x[0], slot.p_pos), (s, -1.0)], RowKind::Le, 0.0);
        p.add_row(vec![(s, 1.0), (x[0], -slot.p_pos), (x[3], -c.ap_split * slot.p_pos)], RowKind::Le, 0.0);
        p.add_row(vec![(u, 1.0), (x[2], -c.engine_charge_cap)], RowKind::Le, 0.0);

        prev = SocStart::Var(soc);
        slots.push(SlotVars { x, r, s, u, soc, q_lin, q_quad });
    }
    slots
}

/// Builds the relaxation.
///
/// Mode fractions carry a tiny cost increasing along EV, AP, CS, CE so that the
/// otherwise flat optimal face tilts towards battery-first vertices; rounding
/// then sees a meaningful argmax instead of an interior-point centre.
pub fn build_cdmop(instance: &TripInstance) -> Result<CdmopProgram> {
    instance.validate()?;
    let mut p = ConvexProgram::default();
    let fuel_scale =
        instance.slots.iter().map(|s| instance.curve.envelope(s.max_engine_output())).fold(0.0, f64::max).max(1e-6);
    let tie = 1e-7 * fuel_scale;
    let slots = add_trip_block(&mut p, instance, SocStart::Fixed(instance.b0), tie, true, "");
    let tie_break_max = 3.0 * tie * slots.len() as f64;
    Ok(CdmopProgram { program: p, slots, tie_break_max })
}

/// Rounds per-slot fractions to modes and simulates the trip forward.
///
/// At each slot modes are tried by decreasing fraction (fractions within 1e-6
/// count as ties, broken by the EV > AP > CS > CE priority); the first available
/// mode that is feasible at the realized SoC is taken.
pub fn round_modes(fractions: &[[f64; 4]], instance: &TripInstance) -> Result<ModeSchedule> {
    if fractions.len() != instance.horizon() {
        return Err(Error::invalid("fraction count does not match the horizon"));
    }
    let mut soc = instance.b0;
    let mut steps = Vec::with_capacity(fractions.len());
    for (t, (frac, slot)) in fractions.iter().zip(&instance.slots).enumerate() {
        let mut order: Vec<(i64, Mode)> =
            FRACTION_ORDER.iter().zip(frac).map(|(&m, &v)| ((v * 1e6).round() as i64, m)).collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.rank().cmp(&b.1.rank())));
        let state = VehicleState { soc, fuel: f64::INFINITY };
        let tr = order
            .iter()
            .filter(|(_, m)| instance.modes.contains(*m))
            .find_map(|&(_, m)| step_mode(state, m, slot, instance.bounds, &instance.curve).ok())
            .ok_or(Error::NoFeasibleMode { slot: t })?;
        soc = tr.next_soc;
        steps.push(tr);
    }
    let schedule = schedule_from(instance.b0, steps);
    if schedule.total_fuel > instance.g0 + 1e-12 * instance.g0.max(1.0) {
        return Err(Error::Infeasible);
    }
    if let Some(b) = instance.terminal_soc {
        if schedule.final_soc < b - instance.bounds.tol() {
            return Err(Error::Infeasible);
        }
    }
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdmopOutcome {
    /// fuel value of the relaxed optimum
    pub value: f64,
    pub lower_bound: f64,
    pub relaxation: FractionalSolution,
    pub fractions: Vec<[f64; 4]>,
    pub schedule: ModeSchedule,
}

/// Solve the relaxation and round it.
pub fn approximate(instance: &TripInstance, tol: &Tolerances) -> Result<CdmopOutcome> {
    let program = build_cdmop(instance)?;
    let relaxation = solve_convex(&program.program, tol)?;
    let value = program.fuel(&relaxation);
    let lower_bound = program.fuel_lower_bound(&relaxation);
    if lower_bound > instance.g0 + tol.feasibility * instance.g0.max(1.0) {
        return Err(Error::Infeasible);
    }
    let fractions = program.fractions(&relaxation);
    let schedule = round_modes(&fractions, instance).map_err(|e| match e {
        Error::NoFeasibleMode { .. } => Error::Infeasible,
        other => other,
    })?;
    Ok(CdmopOutcome { value, lower_bound, relaxation, fractions, schedule })
}
