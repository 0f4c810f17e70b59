//! Route choice with refuelling, charging and drive modes.
//!
//! Every road node is expanded into one node per SoC grid level. An edge of the
//! expanded graph carries the minimum fuel of driving the road edge between two
//! levels, so route, SoC trajectory and modes are chosen together by shortest
//! paths (uniform prices) or by the gas-station recurrence (priced stops).

mod brute;
mod cppdm;
mod gas;
mod graph;
mod plan;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmop::{replay, DpTable, ModeSchedule, SocGrid, TripInstance, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::model::{FuelCurve, Mode, ModeSet, SlotInput, SocBounds};

pub use brute::{brute_force_ppdm, BRUTE_FORCE_MAX_LEVELS, BRUTE_FORCE_MAX_PATHS, BRUTE_FORCE_MAX_STOPS};
pub use cppdm::{build_cppdm, solve_cppdm, CppdmOutcome, CppdmProgram};
pub use gas::{gas_levels, solve_ppdm_dp};
pub use graph::{build_augmented_graph, AugEdge, AugmentedGraph, Distances};
pub use plan::{NodeVisit, PlanLeg, TripPlan};

pub const DEFAULT_LEVELS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    /// price per unit of fuel
    pub fuel_price: f64,
    /// price per unit of SoC
    pub charge_price: f64,
    /// most SoC that can be added on one visit
    pub charge_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub from: usize,
    pub to: usize,
    pub slots: Vec<SlotInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: Vec<Station>,
    pub edges: Vec<RoadEdge>,
    pub source: usize,
    pub dest: usize,
    pub tank_capacity: f64,
    /// refuelling stops allowed; defaults to the node count
    pub stop_budget: Option<usize>,
    pub g0: f64,
    pub b0: f64,
    pub curve: FuelCurve,
    pub bounds: SocBounds,
    pub modes: ModeSet,
}

impl RoadNetwork {
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::invalid("network has no nodes"));
        }
        if self.source >= n || self.dest >= n {
            return Err(Error::invalid("source or dest is not a node"));
        }
        if !(self.tank_capacity > 0.0) {
            return Err(Error::invalid("G_cap must be > 0"));
        }
        if !(self.g0 >= 0.0 && self.g0 <= self.tank_capacity) {
            return Err(Error::invalid(format!("G0 = {} outside [0, G_cap]", self.g0)));
        }
        if self.stop_budget == Some(0) {
            return Err(Error::invalid("delta must be >= 1"));
        }
        self.curve.validate()?;
        self.modes.validate()?;
        if !self.bounds.contains(self.b0) {
            return Err(Error::invalid(format!("B0 = {} outside the SoC bounds", self.b0)));
        }
        for s in &self.nodes {
            if !(s.fuel_price >= 0.0 && s.charge_price >= 0.0 && s.charge_cap >= 0.0) {
                return Err(Error::invalid(format!("node '{}': prices and charge cap must be >= 0", s.id)));
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(Error::invalid(format!("edge {k} references an unknown node")));
            }
            if e.slots.is_empty() {
                return Err(Error::invalid(format!("edge {k} has no slots")));
            }
            for (t, s) in e.slots.iter().enumerate() {
                s.validate().map_err(|err| Error::invalid(format!("edge {k} slot {t}: {err}")))?;
            }
        }
        if !self.reachable(self.source)[self.dest] {
            return Err(Error::invalid("dest is not reachable from source"));
        }
        Ok(())
    }

    pub fn stop_budget(&self) -> usize {
        self.stop_budget.unwrap_or(self.nodes.len())
    }

    /// Charging is free everywhere, so it may happen without a refuelling stop.
    pub fn free_charging(&self) -> bool {
        self.nodes.iter().all(|s| s.charge_price == 0.0)
    }

    pub fn uniform_prices(&self) -> bool {
        let g = self.nodes[0].fuel_price;
        self.free_charging() && self.nodes.iter().all(|s| s.fuel_price == g)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|s| s.id == id)
    }

    /// The edge as a stand-alone trip from `b0` with an unlimited tank.
    pub fn edge_trip(&self, edge: usize, b0: f64) -> TripInstance {
        TripInstance {
            slots: self.edges[edge].slots.clone(),
            curve: self.curve,
            bounds: self.bounds,
            b0,
            g0: f64::INFINITY,
            modes: self.modes,
            terminal_soc: None,
        }
    }

    pub(crate) fn reachable(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for e in self.edges.iter().filter(|e| e.from == u) {
                if !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// SoC levels per road node
    pub levels: usize,
    /// SoC levels of the per-edge drive-mode DP
    pub edge_grid: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { levels: DEFAULT_LEVELS, edge_grid: DEFAULT_GRID }
    }
}

impl PlanOptions {
    pub fn node_grid(&self, bounds: SocBounds) -> Result<SocGrid> {
        SocGrid::new(self.levels, bounds)
    }

    pub fn edge_grid(&self, bounds: SocBounds) -> Result<SocGrid> {
        SocGrid::new(self.edge_grid, bounds)
    }
}

/// Minimum fuel of one road edge between every pair of node SoC levels.
///
/// `z(i, j)` is the least fuel to drive the edge from level `i` and arrive with
/// at least level `j`; `INFINITY` when no schedule gets there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCostTable {
    pub levels: usize,
    z: Vec<f64>,
    modes: Vec<Option<Vec<Mode>>>,
}

impl EdgeCostTable {
    pub fn z(&self, from: usize, to: usize) -> f64 {
        if from >= self.levels || to >= self.levels {
            return f64::INFINITY;
        }
        self.z[from * self.levels + to]
    }

    pub fn modes(&self, from: usize, to: usize) -> Option<&[Mode]> {
        self.modes.get(from * self.levels + to)?.as_deref()
    }
}

pub fn edge_cost_table(trip: &TripInstance, levels: &SocGrid, edge_grid: &SocGrid) -> EdgeCostTable {
    let n = levels.levels;
    let mut z = vec![f64::INFINITY; n * n];
    let mut modes = vec![None; n * n];
    let tol = trip.bounds.tol();
    for i in 0..n {
        let inst = trip.with_b0(levels.level(i));
        let table = DpTable::run(&inst, edge_grid);
        for j in 0..n {
            let need = levels.level(j) - tol;
            if let Some((cell, cost)) = table.best_final(|_, soc| soc >= need) {
                z[i * n + j] = cost;
                modes[i * n + j] = Some(table.modes_to(cell));
            }
        }
    }
    EdgeCostTable { levels: n, z, modes }
}

/// Tables for every edge, computed in parallel.
pub fn edge_cost_tables(network: &RoadNetwork, opts: &PlanOptions) -> Result<Vec<EdgeCostTable>> {
    let levels = opts.node_grid(network.bounds)?;
    let fine = opts.edge_grid(network.bounds)?;
    Ok((0..network.edges.len())
        .into_par_iter()
        .map(|e| edge_cost_table(&network.edge_trip(e, network.bounds.lo), &levels, &fine))
        .collect())
}

/// Grid steps a node can charge on one visit.
pub(crate) fn charge_steps(cap: f64, grid: &SocGrid) -> usize {
    let steps = (cap / grid.delta() + 1e-9).floor();
    if steps <= 0.0 {
        0
    } else {
        (steps as usize).min(grid.levels - 1)
    }
}

/// Replays the table schedule of one edge between two levels.
pub(crate) fn table_schedule(
    network: &RoadNetwork,
    table: &EdgeCostTable,
    grid: &SocGrid,
    edge: usize,
    from: usize,
    to: usize,
) -> Result<ModeSchedule> {
    let modes = table.modes(from, to).ok_or(Error::Infeasible)?;
    replay(&network.edge_trip(edge, grid.level(from)), modes)
}

/// Prepared inputs shared by the solvers.
pub(crate) struct Prepared {
    pub grid: SocGrid,
    pub tables: Vec<EdgeCostTable>,
}

pub(crate) fn prepare(network: &RoadNetwork, opts: &PlanOptions) -> Result<Prepared> {
    network.validate()?;
    Ok(Prepared { grid: opts.node_grid(network.bounds)?, tables: edge_cost_tables(network, opts)? })
}

/// Uniform-price planning as one shortest path in the expanded graph.
pub fn solve_uppdm(network: &RoadNetwork, opts: &PlanOptions) -> Result<TripPlan> {
    let prep = prepare(network, opts)?;
    if !network.uniform_prices() {
        return Err(Error::invalid("uniform planning needs equal fuel prices and free charging"));
    }
    let graph = build_augmented_graph(network, &prep.grid, &prep.tables, true);
    let (dist, pred) = graph.dijkstra(graph.source());
    if !dist[graph.sink()].is_finite() {
        return Err(Error::Infeasible);
    }
    let walk = graph.walk(&pred, graph.sink());
    let legs = plan::legs_from_walk(network, &prep, &graph, &walk)?;
    let fuel: Vec<f64> = legs.iter().map(|l| l.fuel).collect();
    let refills = plan::greedy_refuel(network, &plan::leg_nodes(network, &legs), &fuel, &[])?;
    plan::assemble(network, &prep.grid, legs, &refills, &[])
}
