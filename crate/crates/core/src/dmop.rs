//! Exact drive-mode optimization: per-slot subproblem, grid dynamic program and
//! an exhaustive oracle for short horizons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{step_mode, FuelCurve, Mode, ModeSet, SlotInput, SocBounds, Transition, VehicleState};

pub const DEFAULT_GRID: usize = 201;
pub const BRUTE_FORCE_MAX_HORIZON: usize = 10;

/// A trip: per-slot loads and coefficients plus the vehicle's energy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripInstance {
    pub slots: Vec<SlotInput>,
    pub curve: FuelCurve,
    pub bounds: SocBounds,
    pub b0: f64,
    pub g0: f64,
    pub modes: ModeSet,
    #[serde(default)]
    pub terminal_soc: Option<f64>,
}

impl TripInstance {
    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.slots.is_empty() {
            return Err(Error::invalid("T must be >= 1"));
        }
        self.curve.validate()?;
        SocBounds::new(self.bounds.lo, self.bounds.hi)?;
        self.modes.validate()?;
        if !(self.b0 >= self.bounds.lo && self.b0 <= self.bounds.hi) {
            return Err(Error::invalid(format!("B0 = {} outside [{}, {}]", self.b0, self.bounds.lo, self.bounds.hi)));
        }
        if !(self.g0 >= 0.0) {
            return Err(Error::invalid("G0 must be >= 0"));
        }
        if let Some(b) = self.terminal_soc {
            if !(b >= self.bounds.lo && b <= self.bounds.hi) {
                return Err(Error::invalid(format!("B_terminal = {b} outside the SoC bounds")));
            }
        }
        for (t, slot) in self.slots.iter().enumerate() {
            slot.validate().map_err(|e| Error::invalid(format!("slot {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn with_b0(&self, b0: f64) -> Self {
        TripInstance { b0, ..self.clone() }
    }

    pub fn with_modes(&self, modes: ModeSet) -> Self {
        TripInstance { modes, ..self.clone() }
    }

    fn terminal_ok(&self, soc: f64) -> bool {
        match self.terminal_soc {
            Some(b) => soc >= b - self.bounds.tol(),
            None => true,
        }
    }

    fn fuel_ok(&self, total: f64) -> bool {
        total <= self.g0 + 1e-12 * self.g0.max(1.0)
    }
}

/// Uniform SoC levels spanning the bounds.
///
/// A SoC value belongs to the level at or below it, so a label sitting at a level
/// never overstates the charge actually held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocGrid {
    pub levels: usize,
    pub lo: f64,
    pub hi: f64,
}

impl SocGrid {
    pub fn new(levels: usize, bounds: SocBounds) -> Result<Self> {
        if levels < 2 {
            return Err(Error::invalid("grid needs at least 2 levels"));
        }
        Ok(SocGrid { levels, lo: bounds.lo, hi: bounds.hi })
    }

    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / (self.levels - 1) as f64
    }

    pub fn level(&self, i: usize) -> f64 {
        if i + 1 >= self.levels {
            self.hi
        } else {
            self.lo + i as f64 * self.delta()
        }
    }

    pub fn bucket(&self, soc: f64) -> usize {
        let x = ((soc - self.lo) / self.delta() + 1e-9).floor();
        if x <= 0.0 {
            0
        } else {
            (x as usize).min(self.levels - 1)
        }
    }

    pub fn levels_iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.levels).map(|i| self.level(i))
    }
}

/// Realized per-slot decisions of a trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub steps: Vec<Transition>,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub total_fuel: f64,
}

impl ModeSchedule {
    pub fn modes(&self) -> Vec<Mode> {
        self.steps.iter().map(|s| s.mode).collect()
    }

    /// Share of slots spent in each mode, in the order EV, CE, CS, AP.
    pub fn mode_ratios(&self) -> [f64; 4] {
        let mut counts = [0usize; 4];
        for s in &self.steps {
            let k = match s.mode {
                Mode::Ev => 0,
                Mode::Ce => 1,
                Mode::Cs => 2,
                Mode::Ap => 3,
            };
            counts[k] += 1;
        }
        let n = self.steps.len().max(1) as f64;
        counts.map(|c| c as f64 / n)
    }
}

/// Applies a fixed mode sequence from the instance's initial state.
pub fn replay(instance: &TripInstance, modes: &[Mode]) -> Result<ModeSchedule> {
    if modes.len() != instance.horizon() {
        return Err(Error::invalid(format!(
            "mode sequence has {} entries, instance has T = {}",
            modes.len(),
            instance.horizon()
        )));
    }
    let mut state = VehicleState { soc: instance.b0, fuel: instance.g0 };
    let mut steps = Vec::with_capacity(modes.len());
    for (t, (&mode, slot)) in modes.iter().zip(&instance.slots).enumerate() {
        if !instance.modes.contains(mode) {
            return Err(Error::ModeUnavailable(mode));
        }
        let tr = step_mode(state, mode, slot, instance.bounds, &instance.curve).map_err(|e| match e {
            Error::EvInfeasible { .. } => Error::NoFeasibleMode { slot: t },
            other => other,
        })?;
        state = VehicleState { soc: tr.next_soc, fuel: state.fuel - tr.fuel_used };
        steps.push(tr);
    }
    Ok(schedule_from(instance.b0, steps))
}

pub(crate) fn schedule_from(initial_soc: f64, steps: Vec<Transition>) -> ModeSchedule {
    let total_fuel = steps.iter().map(|s| s.fuel_used).sum();
    let final_soc = steps.last().map_or(initial_soc, |s| s.next_soc);
    ModeSchedule { steps, initial_soc, final_soc, total_fuel }
}

fn unlimited(soc: f64) -> VehicleState {
    VehicleState { soc, fuel: f64::INFINITY }
}

/// Cheapest available mode moving `b_prev` into the grid cell of `b_target`.
///
/// `None` means the subproblem is infeasible.
pub fn solve_step(
    b_prev: f64,
    b_target: f64,
    slot: &SlotInput,
    modes: &ModeSet,
    bounds: SocBounds,
    curve: &FuelCurve,
    grid: &SocGrid,
) -> Option<Transition> {
    let target = grid.bucket(b_target);
    let mut best: Option<Transition> = None;
    for mode in modes.iter() {
        let Ok(tr) = step_mode(unlimited(b_prev), mode, slot, bounds, curve) else {
            continue;
        };
        if grid.bucket(tr.next_soc) != target {
            continue;
        }
        if best.is_none_or(|b| tr.fuel_used < b.fuel_used) {
            best = Some(tr);
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Label {
    cost: f64,
    soc: f64,
    mode: Mode,
    parent: u32,
}

impl Label {
    fn beats(&self, other: &Label) -> bool {
        if self.cost != other.cost {
            return self.cost < other.cost;
        }
        if self.soc != other.soc {
            return self.soc > other.soc;
        }
        self.mode.rank() < other.mode.rank()
    }
}

/// Forward labels of the grid DP, one best label per SoC cell and slot.
pub(crate) struct DpTable {
    layers: Vec<Vec<Option<Label>>>,
    b0: f64,
}

impl DpTable {
    pub(crate) fn run(instance: &TripInstance, grid: &SocGrid) -> DpTable {
        let n = grid.levels;
        let mut layers: Vec<Vec<Option<Label>>> = Vec::with_capacity(instance.horizon());
        let start = [Label { cost: 0.0, soc: instance.b0, mode: Mode::Ev, parent: 0 }];
        for slot in &instance.slots {
            let mut next: Vec<Option<Label>> = vec![None; n];
            let prev: Vec<(usize, Label)> = match layers.last() {
                None => vec![(0, start[0])],
                Some(layer) => layer.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).collect(),
            };
            for (pi, label) in prev {
                for mode in instance.modes.iter() {
                    let Ok(tr) = step_mode(unlimited(label.soc), mode, slot, instance.bounds, &instance.curve) else {
                        continue;
                    };
                    let cell = grid.bucket(tr.next_soc);
                    let cand = Label { cost: label.cost + tr.fuel_used, soc: tr.next_soc, mode, parent: pi as u32 };
                    let cell = &mut next[cell];
                    if cell.is_none_or(|c| cand.beats(&c)) {
                        *cell = Some(cand);
                    }
                }
            }
            layers.push(next);
        }
        DpTable { layers, b0: instance.b0 }
    }

    /// Best label in the final layer among cells accepted by `keep`.
    pub(crate) fn best_final(&self, mut keep: impl FnMut(usize, f64) -> bool) -> Option<(usize, f64)> {
        let last = self.layers.last()?;
        let mut best: Option<(usize, Label)> = None;
        for (i, l) in last.iter().enumerate() {
            let Some(l) = l else { continue };
            if !keep(i, l.soc) {
                continue;
            }
            if best.is_none_or(|(_, b)| l.beats(&b)) {
                best = Some((i, *l));
            }
        }
        best.map(|(i, l)| (i, l.cost))
    }

    pub(crate) fn modes_to(&self, cell: usize) -> Vec<Mode> {
        let mut modes = Vec::with_capacity(self.layers.len());
        let mut i = cell;
        for layer in self.layers.iter().rev() {
            let l = layer[i].expect("reachable label");
            modes.push(l.mode);
            i = l.parent as usize;
        }
        modes.reverse();
        modes
    }

    pub(crate) fn schedule_to(&self, instance: &TripInstance, cell: usize) -> ModeSchedule {
        let modes = self.modes_to(cell);
        let mut soc = self.b0;
        let mut steps = Vec::with_capacity(modes.len());
        for (mode, slot) in modes.into_iter().zip(&instance.slots) {
            let tr =
                step_mode(unlimited(soc), mode, slot, instance.bounds, &instance.curve).expect("DP transition replays");
            soc = tr.next_soc;
            steps.push(tr);
        }
        schedule_from(self.b0, steps)
    }
}

/// Minimum-fuel schedule over grid-quantized SoC trajectories.
pub fn solve_dmop_dp(instance: &TripInstance, grid: &SocGrid) -> Result<ModeSchedule> {
    instance.validate()?;
    let table = DpTable::run(instance, grid);
    let (cell, cost) = table.best_final(|_, soc| instance.terminal_ok(soc)).ok_or(Error::Infeasible)?;
    if !instance.fuel_ok(cost) {
        return Err(Error::Infeasible);
    }
    Ok(table.schedule_to(instance, cell))
}

/// Exact optimum by enumerating every sequence of available modes.
pub fn brute_force_dmop(instance: &TripInstance) -> Result<ModeSchedule> {
    instance.validate()?;
    let horizon = instance.horizon();
    if horizon > BRUTE_FORCE_MAX_HORIZON {
        return Err(Error::HorizonTooLarge { horizon, limit: BRUTE_FORCE_MAX_HORIZON });
    }
    let modes: Vec<Mode> = instance.modes.iter().collect();
    let mut path: Vec<Transition> = Vec::with_capacity(horizon);
    let mut best: Option<(f64, f64, Vec<Transition>)> = None;
    enumerate(instance, &modes, instance.b0, 0.0, &mut path, &mut best);
    match best {
        Some((cost, _, steps)) if instance.fuel_ok(cost) => Ok(schedule_from(instance.b0, steps)),
        _ => Err(Error::Infeasible),
    }
}

fn enumerate(
    instance: &TripInstance,
    modes: &[Mode],
    soc: f64,
    cost: f64,
    path: &mut Vec<Transition>,
    best: &mut Option<(f64, f64, Vec<Transition>)>,
) {
    let t = path.len();
    if t == instance.horizon() {
        if !instance.terminal_ok(soc) {
            return;
        }
        let better = match best {
            None => true,
            Some((c, s, _)) => cost < *c || (cost == *c && soc > *s),
        };
        if better {
            *best = Some((cost, soc, path.clone()));
        }
        return;
    }
    for &mode in modes {
        let Ok(tr) = step_mode(unlimited(soc), mode, &instance.slots[t], instance.bounds, &instance.curve) else {
            continue;
        };
        path.push(tr);
        enumerate(instance, modes, tr.next_soc, cost + tr.fuel_used, path, best);
        path.pop();
    }
}
