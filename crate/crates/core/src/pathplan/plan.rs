use serde::{Deserialize, Serialize};

use super::graph::AugmentedGraph;
use super::{table_schedule, Prepared, RoadNetwork};
use crate::dmop::{ModeSchedule, SocGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVisit {
    pub node: String,
    pub soc_arrive: f64,
    pub charge: f64,
    pub soc_depart: f64,
    pub fuel_arrive: f64,
    pub refill: f64,
    pub fuel_depart: f64,
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLeg {
    pub edge: usize,
    pub from: String,
    pub to: String,
    pub fuel_used: f64,
    pub schedule: ModeSchedule,
}

/// A route with its refuelling and charging stops and per-edge schedules.
///
/// Node SoC values are grid levels; when a leg ends above a level the surplus
/// is not credited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripPlan {
    pub visits: Vec<NodeVisit>,
    pub legs: Vec<PlanLeg>,
    pub total_cost: f64,
    pub total_fuel: f64,
    pub stop_count: usize,
}

impl TripPlan {
    pub fn route(&self) -> Vec<String> {
        self.visits.iter().map(|v| v.node.clone()).collect()
    }

    /// Checks resource and accounting invariants against the network.
    pub fn check(&self, network: &RoadNetwork, enforce_budget: bool) -> Result<()> {
        let cap = network.tank_capacity;
        let ftol = 1e-9 * cap.max(1.0);
        let b = network.bounds;
        let fail = |msg: String| Err(Error::invalid(msg));
        if self.visits.len() != self.legs.len() + 1 {
            return fail("visit and leg counts disagree".into());
        }
        let free = network.free_charging();
        let mut cost = 0.0;
        let mut stops = 0;
        for (k, v) in self.visits.iter().enumerate() {
            let Some(node) = network.node_index(&v.node) else {
                return fail(format!("unknown node '{}'", v.node));
            };
            let st = &network.nodes[node];
            for x in [v.fuel_arrive, v.fuel_depart] {
                if x < -ftol || x > cap + ftol {
                    return fail(format!("fuel {x} outside [0, {cap}] at visit {k}"));
                }
            }
            for x in [v.soc_arrive, v.soc_depart] {
                if !b.contains(x) {
                    return fail(format!("SoC {x} outside bounds at visit {k}"));
                }
            }
            if v.refill < -ftol || v.charge < -b.tol() || v.charge > st.charge_cap + b.tol() {
                return fail(format!("refill {} or charge {} out of range at visit {k}", v.refill, v.charge));
            }
            if (v.fuel_arrive + v.refill - v.fuel_depart).abs() > ftol
                || (v.soc_arrive + v.charge - v.soc_depart).abs() > b.tol()
            {
                return fail(format!("visit {k} does not balance"));
            }
            if !v.stop && (v.refill > ftol || (!free && v.charge > b.tol())) {
                return fail(format!("visit {k} buys energy without stopping"));
            }
            stops += v.stop as usize;
            cost += st.fuel_price * v.refill + st.charge_price * v.charge;
        }
        for (k, leg) in self.legs.iter().enumerate() {
            let (a, z) = (&self.visits[k], &self.visits[k + 1]);
            let e = &network.edges[leg.edge];
            if network.nodes[e.from].id != a.node || network.nodes[e.to].id != z.node {
                return fail(format!("leg {k} does not join its visits"));
            }
            if (leg.schedule.initial_soc - a.soc_depart).abs() > b.tol() {
                return fail(format!("leg {k} starts from the wrong SoC"));
            }
            if leg.schedule.final_soc < z.soc_arrive - b.tol() {
                return fail(format!("leg {k} arrives below the credited SoC"));
            }
            if (a.fuel_depart - leg.fuel_used - z.fuel_arrive).abs() > ftol
                || (leg.fuel_used - leg.schedule.total_fuel).abs() > ftol
            {
                return fail(format!("leg {k} fuel does not balance"));
            }
        }
        if stops != self.stop_count {
            return fail("stop count mismatch".into());
        }
        if enforce_budget && stops > network.stop_budget() {
            return fail(format!("{stops} stops exceed the budget {}", network.stop_budget()));
        }
        if (cost - self.total_cost).abs() > 1e-9 * cost.abs().max(1.0) {
            return fail(format!("cost {} does not match purchases {cost}", self.total_cost));
        }
        Ok(())
    }
}

/// One driven edge with its node levels.
#[derive(Debug, Clone)]
pub(crate) struct LegSpec {
    pub edge: usize,
    pub dep: usize,
    /// level credited on arrival
    pub credit: usize,
    /// level after charging at the head on arrival
    pub arrive: usize,
    pub fuel: f64,
    pub schedule: ModeSchedule,
}

pub(crate) fn legs_from_walk(
    network: &RoadNetwork,
    prep: &Prepared,
    graph: &AugmentedGraph,
    walk: &[usize],
) -> Result<Vec<LegSpec>> {
    walk.iter()
        .filter_map(|&k| {
            let e = graph.edges[k];
            let road = e.road_edge?;
            let (_, dep) = graph.decode(e.from)?;
            let (_, arrive) = graph.decode(e.to)?;
            Some((road, dep, e.credit, arrive, e.weight))
        })
        .map(|(edge, dep, credit, arrive, fuel)| {
            let schedule = table_schedule(network, &prep.tables[edge], &prep.grid, edge, dep, credit)?;
            Ok(LegSpec { edge, dep, credit, arrive, fuel, schedule })
        })
        .collect()
}

/// Road nodes visited by consecutive legs.
pub(crate) fn leg_nodes(network: &RoadNetwork, legs: &[LegSpec]) -> Vec<usize> {
    let mut out = vec![legs.first().map_or(network.source, |l| network.edges[l.edge].from)];
    out.extend(legs.iter().map(|l| network.edges[l.edge].to));
    out
}

/// Refill amounts per visit for a fixed route, buying only where `stations`
/// is set (everywhere when empty).
///
/// At each station: if the destination or a station no dearer than this one is
/// within one tank, buy just enough to reach the first such node; otherwise
/// fill up.
pub(crate) fn greedy_refuel(
    network: &RoadNetwork,
    nodes: &[usize],
    leg_fuel: &[f64],
    stations: &[bool],
) -> Result<Vec<f64>> {
    let cap = network.tank_capacity;
    let tiny = 1e-12 * cap.max(1.0);
    let k = leg_fuel.len();
    let open = |i: usize| stations.get(i).copied().unwrap_or(stations.is_empty());
    let mut refills = vec![0.0; k + 1];
    let mut fuel = network.g0;
    for i in 0..k {
        if leg_fuel[i] > cap + tiny {
            return Err(Error::Infeasible);
        }
        if open(i) {
            let price = network.nodes[nodes[i]].fuel_price;
            let mut need = 0.0;
            let mut target = None;
            for j in i + 1..=k {
                need += leg_fuel[j - 1];
                if need > cap + tiny {
                    break;
                }
                if j == k || (open(j) && network.nodes[nodes[j]].fuel_price <= price) {
                    target = Some(need);
                    break;
                }
            }
            let buy = match target {
                Some(need) => (need - fuel).max(0.0),
                None => cap - fuel,
            };
            let buy = if buy <= tiny { 0.0 } else { buy };
            refills[i] = buy;
            fuel += buy;
        }
        if fuel < leg_fuel[i] - tiny {
            return Err(Error::Infeasible);
        }
        fuel = (fuel - leg_fuel[i]).max(0.0);
    }
    Ok(refills)
}

/// Cheapest greedy refuelling that buys at no more than `budget` nodes,
/// trying every small station set when the unrestricted greedy overruns.
pub(crate) fn budget_refuel(
    network: &RoadNetwork,
    nodes: &[usize],
    leg_fuel: &[f64],
    budget: usize,
) -> Result<Vec<f64>> {
    const MAX_SETS: usize = 1 << 16;
    let buys = |r: &[f64]| r.iter().filter(|&&x| x > 0.0).count();
    let first = greedy_refuel(network, nodes, leg_fuel, &[])?;
    if buys(&first) <= budget {
        return Ok(first);
    }
    let k = leg_fuel.len();
    let mut sets = 0usize;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut mask = vec![false; k + 1];
    fn visit(pos: usize, left: usize, mask: &mut Vec<bool>, sets: &mut usize, f: &mut dyn FnMut(&[bool])) {
        if *sets >= MAX_SETS {
            return;
        }
        if pos + 1 == mask.len() {
            *sets += 1;
            f(mask);
            return;
        }
        visit(pos + 1, left, mask, sets, f);
        if left > 0 {
            mask[pos] = true;
            visit(pos + 1, left - 1, mask, sets, f);
            mask[pos] = false;
        }
    }
    visit(0, budget, &mut mask, &mut sets, &mut |m: &[bool]| {
        if let Ok(r) = greedy_refuel(network, nodes, leg_fuel, m) {
            let cost: f64 = r.iter().zip(nodes).map(|(x, &v)| x * network.nodes[v].fuel_price).sum();
            if best.as_ref().is_none_or(|b| cost < b.0) {
                best = Some((cost, r));
            }
        }
    });
    best.map(|b| b.1).ok_or(Error::Infeasible)
}

/// Builds the plan record. `stops` marks stopping visits; when empty, a visit
/// stops exactly when it buys something.
pub(crate) fn assemble(
    network: &RoadNetwork,
    grid: &SocGrid,
    legs: Vec<LegSpec>,
    refills: &[f64],
    stops: &[bool],
) -> Result<TripPlan> {
    let nodes = leg_nodes(network, &legs);
    let cap = network.tank_capacity;
    let free = network.free_charging();
    let mut visits = Vec::with_capacity(nodes.len());
    let mut fuel = network.g0;
    let mut soc_level = grid.bucket(network.b0);
    let mut cost = 0.0;
    for (k, &node) in nodes.iter().enumerate() {
        let st = &network.nodes[node];
        let dep_level = match (legs.get(k), k.checked_sub(1).map(|p| &legs[p])) {
            (Some(next), _) => next.dep,
            (None, Some(prev)) => prev.arrive,
            (None, None) => soc_level,
        };
        let soc_arrive = grid.level(soc_level);
        let soc_depart = grid.level(dep_level);
        let charge = soc_depart - soc_arrive;
        let refill = refills.get(k).copied().unwrap_or(0.0);
        let fuel_depart = fuel + refill;
        let stop = match stops.get(k) {
            Some(&s) => s,
            None => refill > 0.0 || (!free && charge > 0.0),
        };
        cost += st.fuel_price * refill + st.charge_price * charge;
        visits.push(NodeVisit {
            node: st.id.clone(),
            soc_arrive,
            charge,
            soc_depart,
            fuel_arrive: fuel,
            refill,
            fuel_depart,
            stop,
        });
        if let Some(leg) = legs.get(k) {
            fuel = fuel_depart - leg.fuel;
            if fuel.abs() <= 1e-9 * cap.max(1.0) {
                fuel = fuel.max(0.0);
            }
            soc_level = leg.credit;
        }
    }
    let total_fuel = legs.iter().map(|l| l.fuel).sum();
    let stop_count = visits.iter().filter(|v| v.stop).count();
    let legs = legs
        .into_iter()
        .map(|l| PlanLeg {
            edge: l.edge,
            from: network.nodes[network.edges[l.edge].from].id.clone(),
            to: network.nodes[network.edges[l.edge].to].id.clone(),
            fuel_used: l.fuel,
            schedule: l.schedule,
        })
        .collect();
    Ok(TripPlan { visits, legs, total_cost: cost, total_fuel, stop_count })
}
