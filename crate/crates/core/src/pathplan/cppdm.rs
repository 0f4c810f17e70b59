//! Fractional route-and-mode program and rounding to a concrete plan.
//!
//! Every usable edge gets a selection weight `y`, a copy of the per-slot mode
//! block and start/end fuel and SoC. Products of `y` with fuel and SoC are
//! replaced by McCormick envelopes, and fuel burn is bounded below by the
//! convex envelope of the fuel map through epigraph variables.

use serde::{Deserialize, Serialize};

use super::plan::{assemble, budget_refuel, LegSpec};
use super::{charge_steps, prepare, table_schedule, EdgeCostTable, PlanOptions, Prepared, RoadNetwork, TripPlan};
use crate::dmop::SocGrid;
use crate::error::{Error, Result};
use crate::relax::cdmop::{add_trip_block, envelope_split, SocStart};
use crate::relax::{approximate, solve_convex, ConvexProgram, Epigraph, FractionalSolution, RowKind, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeVars {
    pub y: usize,
    pub soc_start: usize,
    pub soc_end: usize,
    pub fuel_start: usize,
    pub fuel_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppdmProgram {
    pub program: ConvexProgram,
    /// `None` for edges no optimal route can use
    pub edges: Vec<Option<EdgeVars>>,
    /// objective terms of the initial fuel and SoC at the source
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CppdmOutcome {
    /// bound on the optimal plan cost
    pub lower_bound: f64,
    /// objective at the returned relaxed point
    pub value: f64,
    pub y: Vec<f64>,
    pub relaxation: FractionalSolution,
    pub plan: TripPlan,
}

fn usable(network: &RoadNetwork, table: &EdgeCostTable, edge: usize) -> bool {
    let e = &network.edges[edge];
    if e.from == network.dest || e.to == network.source {
        return false;
    }
    let n = table.levels;
    (0..n).any(|i| (0..n).any(|j| table.z(i, j) <= network.tank_capacity))
}

pub fn build_cppdm(network: &RoadNetwork, tables: &[EdgeCostTable]) -> Result<CppdmProgram> {
    network.validate()?;
    let mut p = ConvexProgram::default();
    let cap = network.tank_capacity;
    let (lo, hi) = (network.bounds.lo, network.bounds.hi);
    let (slope, _) = envelope_split(&network.curve);
    let gamma2 = network.curve.gamma2;
    let mut edges = Vec::with_capacity(network.edges.len());
    let mut lam0 = vec![None; network.edges.len()];
    let mut lam_t = vec![None; network.edges.len()];
    let mut mu0 = vec![None; network.edges.len()];
    let mut mu_t = vec![None; network.edges.len()];
    for (k, table) in tables.iter().enumerate() {
        if !usable(network, table, k) {
            edges.push(None);
            continue;
        }
        let tag = format!("e{k}.");
        let trip = network.edge_trip(k, lo);
        let y = p.add_var(format!("{tag}y"), 0.0, 1.0, 0.0);
        let soc_start = p.add_var(format!("{tag}B0"), lo, hi, 0.0);
        let slots = add_trip_block(&mut p, &trip, SocStart::Var(soc_start), 0.0, false, &tag);
        let soc_end = slots.last().expect("edge has slots").soc;
        let fuel_start = p.add_var(format!("{tag}G0"), 0.0, cap, 0.0);
        let fuel_end = p.add_var(format!("{tag}GT"), 0.0, cap, 0.0);
        let mut burn = vec![(fuel_end, 1.0), (fuel_start, -1.0)];
        for (t, v) in slots.iter().enumerate() {
            let phi = p.add_var(format!("{tag}phi[{t}]"), 0.0, f64::INFINITY, 0.0);
            p.epigraphs.push(Epigraph {
                tau: phi,
                linear: vec![(v.q_lin, slope), (v.q_quad, slope)],
                quad_var: v.q_quad,
                quad: gamma2,
            });
            burn.push((phi, 1.0));
        }
        p.add_row(burn, RowKind::Le, 0.0);

        // lambda = y * G over G in [0, cap]
        for (store, g, name) in [(&mut lam0, fuel_start, "lam0"), (&mut lam_t, fuel_end, "lamT")] {
            let l = p.add_var(format!("{tag}{name}"), 0.0, cap, 0.0);
            p.add_row(vec![(l, 1.0), (y, -cap)], RowKind::Le, 0.0);
            p.add_row(vec![(l, 1.0), (g, -1.0), (y, -cap)], RowKind::Ge, -cap);
            p.add_row(vec![(l, 1.0), (g, -1.0)], RowKind::Le, 0.0);
            store[k] = Some(l);
        }
        // mu = y * B over B in [lo, hi]
        for (store, b, name) in [(&mut mu0, soc_start, "mu0"), (&mut mu_t, soc_end, "muT")] {
            let m = p.add_var(format!("{tag}{name}"), lo.min(0.0), hi.max(0.0), 0.0);
            p.add_row(vec![(m, 1.0), (y, -lo)], RowKind::Ge, 0.0);
            p.add_row(vec![(m, 1.0), (y, -hi)], RowKind::Le, 0.0);
            p.add_row(vec![(m, 1.0), (b, -1.0), (y, -hi)], RowKind::Ge, -hi);
            p.add_row(vec![(m, 1.0), (b, -1.0), (y, -lo)], RowKind::Le, -lo);
            store[k] = Some(m);
        }
        edges.push(Some(EdgeVars { y, soc_start, soc_end, fuel_start, fuel_end }));
    }

    let mut constant = 0.0;
    for (u, st) in network.nodes.iter().enumerate() {
        let out: Vec<usize> = (0..edges.len()).filter(|&k| edges[k].is_some() && network.edges[k].from == u).collect();
        let inc: Vec<usize> = (0..edges.len()).filter(|&k| edges[k].is_some() && network.edges[k].to == u).collect();
        let flow = if network.source == network.dest {
            0.0
        } else if u == network.source {
            1.0
        } else if u == network.dest {
            -1.0
        } else {
            0.0
        };
        // the destination's row is implied by the others
        if u != network.dest || network.source == network.dest {
            let mut row: Vec<(usize, f64)> = out.iter().map(|&k| (edges[k].unwrap().y, 1.0)).collect();
            row.extend(inc.iter().map(|&k| (edges[k].unwrap().y, -1.0)));
            p.add_row(row, RowKind::Eq, flow);
        }

        let balance = |a: &[Option<usize>], b: &[Option<usize>]| -> Vec<(usize, f64)> {
            let mut r: Vec<(usize, f64)> = out.iter().map(|&k| (a[k].unwrap(), 1.0)).collect();
            r.extend(inc.iter().map(|&k| (b[k].unwrap(), -1.0)));
            r
        };
        let is_src = u == network.source;
        p.add_row(balance(&mu0, &mu_t), RowKind::Le, st.charge_cap + if is_src { network.b0 } else { 0.0 });
        if u == network.dest {
            continue;
        }
        p.add_row(balance(&mu0, &mu_t), RowKind::Ge, if is_src { network.b0 } else { 0.0 });
        p.add_row(balance(&lam0, &lam_t), RowKind::Ge, if is_src { network.g0 } else { 0.0 });
        for (j, a) in balance(&lam0, &lam_t) {
            p.linear[j] += st.fuel_price * a;
        }
        for (j, a) in balance(&mu0, &mu_t) {
            p.linear[j] += st.charge_price * a;
        }
        if is_src {
            constant -= st.fuel_price * network.g0 + st.charge_price * network.b0;
        }
    }
    Ok(CppdmProgram { program: p, edges, constant })
}

/// Relax, round the route by `1 - y` shortest path, then schedule each edge by
/// drive-mode rounding and buy fuel greedily within the stop budget.
pub fn solve_cppdm(network: &RoadNetwork, opts: &PlanOptions, tol: &Tolerances) -> Result<CppdmOutcome> {
    let prep = prepare(network, opts)?;
    let prog = build_cppdm(network, &prep.tables)?;
    if network.source != network.dest && prog.edges.iter().all(Option::is_none) {
        return Err(Error::Infeasible);
    }
    let relaxation = solve_convex(&prog.program, tol)?;
    let y: Vec<f64> = prog.edges.iter().map(|v| v.map_or(0.0, |v| relaxation.values[v.y].clamp(0.0, 1.0))).collect();
    let route = round_route(network, &prog, &y).ok_or(Error::Infeasible)?;
    let targets: Vec<f64> =
        route.iter().map(|&k| relaxation.values[prog.edges[k].expect("usable").soc_start]).collect();
    let plan = plan_route(network, &prep, &route, &targets, tol)?;
    // plan costs are never negative
    let bound = relaxation.lower_bound + prog.constant;
    Ok(CppdmOutcome {
        lower_bound: if bound <= 0.0 { 0.0 } else { bound },
        value: relaxation.objective + prog.constant,
        y,
        relaxation,
        plan,
    })
}

/// Shortest route under weights `1 - y` clipped to `[1e-6, 1]`.
fn round_route(network: &RoadNetwork, prog: &CppdmProgram, y: &[f64]) -> Option<Vec<usize>> {
    let n = network.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut done = vec![false; n];
    dist[network.source] = 0.0;
    loop {
        let u = (0..n).filter(|&v| !done[v] && dist[v].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]))?;
        if u == network.dest {
            break;
        }
        done[u] = true;
        for (k, e) in network.edges.iter().enumerate() {
            if e.from != u || prog.edges[k].is_none() {
                continue;
            }
            let w = (1.0 - y[k]).clamp(1e-6, 1.0);
            if dist[u] + w < dist[e.to] {
                dist[e.to] = dist[u] + w;
                pred[e.to] = Some(k);
            }
        }
    }
    let mut route = Vec::new();
    let mut v = network.dest;
    while let Some(k) = pred[v] {
        route.push(k);
        v = network.edges[k].from;
    }
    route.reverse();
    Some(route)
}

fn ceil_level(grid: &SocGrid, soc: f64) -> usize {
    let x = ((soc - grid.lo) / grid.delta() - 1e-9).ceil();
    if x <= 0.0 {
        0
    } else {
        (x as usize).min(grid.levels - 1)
    }
}

/// Legs along `route`, charging toward `targets` where `allowed`.
fn route_legs(
    network: &RoadNetwork,
    prep: &Prepared,
    route: &[usize],
    targets: &[f64],
    allowed: &[bool],
    tol: &Tolerances,
) -> Result<Vec<LegSpec>> {
    let grid = &prep.grid;
    let top = grid.levels - 1;
    let free = network.free_charging();
    let mut level = grid.bucket(network.b0);
    let mut legs = Vec::with_capacity(route.len());
    for (i, &k) in route.iter().enumerate() {
        let tail = &network.nodes[network.edges[k].from];
        let reach = (level + charge_steps(tail.charge_cap, grid)).min(top);
        let dep = if free {
            if i == 0 {
                reach
            } else {
                level
            }
        } else if allowed[i] {
            ceil_level(grid, targets[i]).clamp(level, reach)
        } else {
            level
        };
        let table = &prep.tables[k];
        let rounded = approximate(&network.edge_trip(k, grid.level(dep)), tol).ok().map(|o| o.schedule);
        let (credit, schedule) = match rounded {
            Some(s) => {
                let j = grid.bucket(s.final_soc);
                if table.z(dep, j) < s.total_fuel {
                    (j, table_schedule(network, table, grid, k, dep, j)?)
                } else {
                    (j, s)
                }
            }
            None => {
                let j = (0..grid.levels)
                    .rev()
                    .min_by(|&a, &b| table.z(dep, a).total_cmp(&table.z(dep, b)))
                    .filter(|&j| table.z(dep, j).is_finite())
                    .ok_or(Error::Infeasible)?;
                (j, table_schedule(network, table, grid, k, dep, j)?)
            }
        };
        let head = &network.nodes[network.edges[k].to];
        let arrive = if free { (credit + charge_steps(head.charge_cap, grid)).min(top) } else { credit };
        legs.push(LegSpec { edge: k, dep, credit, arrive, fuel: schedule.total_fuel, schedule });
        level = arrive;
    }
    Ok(legs)
}

/// Priced charging is only allowed where fuel is bought, so a charge at a node
/// the greedy refuelling skips is dropped and the route re-planned.
fn plan_route(
    network: &RoadNetwork,
    prep: &Prepared,
    route: &[usize],
    targets: &[f64],
    tol: &Tolerances,
) -> Result<TripPlan> {
    let mut nodes = vec![network.source];
    nodes.extend(route.iter().map(|&k| network.edges[k].to));
    let mut allowed = vec![true; route.len()];
    loop {
        let legs = route_legs(network, prep, route, targets, &allowed, tol)?;
        let fuel: Vec<f64> = legs.iter().map(|l| l.fuel).collect();
        let refills = budget_refuel(network, &nodes, &fuel, network.stop_budget())?;
        let idle = (0..route.len()).find(|&i| {
            let charged =
                if i == 0 { legs[0].dep > prep.grid.bucket(network.b0) } else { legs[i].dep > legs[i - 1].arrive };
            allowed[i] && charged && refills[i] <= 0.0 && !network.free_charging()
        });
        if let Some(i) = idle {
            allowed[i] = false;
            continue;
        }
        let plan = assemble(network, &prep.grid, legs, &refills, &[])?;
        if plan.stop_count > network.stop_budget() {
            return Err(Error::Infeasible);
        }
        return Ok(plan);
    }
}
