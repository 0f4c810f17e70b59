//! Priced stops: the gas-station recurrence over the expanded graph.
//!
//! `C[q][a][g]` is the least cost of reaching `t` from expanded node `a` with
//! fuel `g` using exactly `q` stops, `a` included. Between consecutive stops the
//! vehicle either arrives empty (next stop no dearer) or leaves with a full
//! tank (next stop dearer), so only a few fuel levels per node matter.

use super::graph::{build_augmented_graph, AugmentedGraph, Distances};
use super::plan::{assemble, legs_from_walk, LegSpec};
use super::{charge_steps, prepare, PlanOptions, Prepared, RoadNetwork, TripPlan};
use crate::dmop::SocGrid;
use crate::error::{Error, Result};

/// Fuel levels worth tracking at a node priced `price`, given `(price, distance)`
/// of every possible previous stop.
pub fn gas_levels(preds: &[(f64, f64)], price: f64, tank: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(preds.iter().filter(|&&(p, w)| p < price && w < tank).map(|&(_, w)| tank - w));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy)]
enum Next {
    Sink,
    Empty(usize),
    Fill(usize, usize),
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    dep: usize,
    next: Next,
}

struct GasDp<'a> {
    network: &'a RoadNetwork,
    grid: &'a SocGrid,
    graph: &'a AugmentedGraph,
    dist: &'a Distances,
    free: bool,
    stops: Vec<usize>,
    levels: Vec<Vec<f64>>,
}

impl<'a> GasDp<'a> {
    fn new(network: &'a RoadNetwork, grid: &'a SocGrid, graph: &'a AugmentedGraph, dist: &'a Distances) -> Self {
        let mut stops: Vec<usize> = (0..graph.source()).collect();
        stops.push(graph.source());
        let mut dp = GasDp { network, grid, graph, dist, free: network.free_charging(), stops, levels: Vec::new() };
        let cap = network.tank_capacity;
        dp.levels = (0..graph.num_nodes())
            .map(|b| match graph.decode(b) {
                Some(_) => {
                    let preds: Vec<(f64, f64)> = dp.stops.iter().map(|&a| (dp.price(a), dist.get(a, b))).collect();
                    gas_levels(&preds, dp.price(b), cap)
                }
                None => vec![0.0],
            })
            .collect();
        dp
    }

    fn price(&self, a: usize) -> f64 {
        self.graph.decode(a).map_or(0.0, |(v, _)| self.network.nodes[v].fuel_price)
    }

    fn level_index(&self, b: usize, g: f64) -> Option<usize> {
        self.levels[b].binary_search_by(|x| x.total_cmp(&g)).ok()
    }

    /// Departure nodes reachable by charging at `a`, with the charging cost.
    fn departures(&self, a: usize) -> Vec<(usize, f64)> {
        let Some((v, b)) = self.graph.decode(a) else { return vec![(a, 0.0)] };
        if self.free {
            return vec![(a, 0.0)];
        }
        let st = &self.network.nodes[v];
        let top = (b + charge_steps(st.charge_cap, self.grid)).min(self.grid.levels - 1);
        (b..=top)
            .map(|bb| (self.graph.node(v, bb), st.charge_price * (self.grid.level(bb) - self.grid.level(b))))
            .collect()
    }

    fn solve(&self, max_stops: usize) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<Option<Choice>>>>) {
        let n = self.graph.num_nodes();
        let cap = self.network.tank_capacity;
        let t = self.graph.sink();
        let mut cost: Vec<Vec<Vec<f64>>> = Vec::with_capacity(max_stops + 1);
        let mut choice: Vec<Vec<Vec<Option<Choice>>>> = Vec::with_capacity(max_stops + 1);
        cost.push(Vec::new());
        choice.push(Vec::new());
        for q in 1..=max_stops {
            let mut cq = vec![Vec::new(); n];
            let mut chq = vec![Vec::new(); n];
            for &a in &self.stops {
                let pa = self.price(a);
                let road_a = self.graph.decode(a).map(|x| x.0);
                // (w, cost before subtracting g * pa, choice) for "buy up to w" moves
                let mut partial: Vec<(f64, f64, Choice)> = Vec::new();
                let mut fill: Option<(f64, Choice)> = None;
                for (dep, charge_cost) in self.departures(a) {
                    if q == 1 {
                        let w = self.dist.get(dep, t);
                        if w <= cap {
                            partial.push((w, w * pa + charge_cost, Choice { dep, next: Next::Sink }));
                        }
                        continue;
                    }
                    for &b in &self.stops[..self.stops.len() - 1] {
                        let road_b = self.graph.decode(b).map(|x| x.0);
                        if road_b == road_a {
                            continue;
                        }
                        let w = self.dist.get(dep, b);
                        if !(w <= cap) {
                            continue;
                        }
                        let prev = &cost[q - 1][b];
                        if self.price(b) <= pa {
                            let c = prev[0];
                            if c.is_finite() {
                                partial.push((w, c + w * pa + charge_cost, Choice { dep, next: Next::Empty(b) }));
                            }
                        } else {
                            let gi = self.level_index(b, cap - w).expect("arrival level is tracked");
                            let c = prev[gi] + cap * pa + charge_cost;
                            if c.is_finite() && fill.is_none_or(|(f, _)| c < f) {
                                fill = Some((c, Choice { dep, next: Next::Fill(b, gi) }));
                            }
                        }
                    }
                }
                partial.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut suffix: Vec<(f64, Choice)> = Vec::with_capacity(partial.len());
                for &(_, c, ch) in partial.iter().rev() {
                    let best = match suffix.last() {
                        Some(&(b, bch)) if b <= c => (b, bch),
                        _ => (c, ch),
                    };
                    suffix.push(best);
                }
                suffix.reverse();
                let gs = &self.levels[a];
                let mut row = vec![f64::INFINITY; gs.len()];
                let mut chrow = vec![None; gs.len()];
                for (gi, &g) in gs.iter().enumerate() {
                    let first = partial.partition_point(|x| x.0 < g);
                    let mut best = fill;
                    if let Some(&(c, ch)) = suffix.get(first) {
                        if best.is_none_or(|(f, _)| c < f) {
                            best = Some((c, ch));
                        }
                    }
                    if let Some((c, ch)) = best {
                        row[gi] = c - g * pa;
                        chrow[gi] = Some(ch);
                    }
                }
                cq[a] = row;
                chq[a] = chrow;
            }
            cost.push(cq);
            choice.push(chq);
        }
        (cost, choice)
    }
}

/// Exact planning with priced refuelling and charging stops.
///
/// Charging happens only at refuelling stops unless every node charges for
/// free, in which case it is allowed on every arrival.
pub fn solve_ppdm_dp(network: &RoadNetwork, opts: &PlanOptions) -> Result<TripPlan> {
    let prep = prepare(network, opts)?;
    let free = network.free_charging();
    let graph = build_augmented_graph(network, &prep.grid, &prep.tables, free);
    let dist = graph.all_pairs();
    let dp = GasDp::new(network, &prep.grid, &graph, &dist);
    let max_q = network.stop_budget() + 1;
    let (cost, choice) = dp.solve(max_q);
    let s = graph.source();
    let mut best: Option<(usize, f64)> = None;
    for q in 1..=max_q {
        let c = cost[q][s][0];
        if c.is_finite() && best.is_none_or(|(_, b)| c < b) {
            best = Some((q, c));
        }
    }
    let (q, _) = best.ok_or(Error::Infeasible)?;
    reconstruct(network, &prep, &graph, &dp, &choice, q)
}

fn reconstruct(
    network: &RoadNetwork,
    prep: &Prepared,
    graph: &AugmentedGraph,
    dp: &GasDp,
    choice: &[Vec<Vec<Option<Choice>>>],
    q: usize,
) -> Result<TripPlan> {
    let cap = network.tank_capacity;
    let mut legs: Vec<LegSpec> = Vec::new();
    let mut stop_at: Vec<(usize, f64)> = Vec::new();
    let (mut a, mut q, mut gi) = (graph.source(), q, 0usize);
    loop {
        let g = dp.levels[a][gi];
        let ch = choice[q][a][gi].expect("finite entry has a choice");
        let target = match ch.next {
            Next::Sink => graph.sink(),
            Next::Empty(b) | Next::Fill(b, _) => b,
        };
        let w = dp.dist.get(ch.dep, target);
        if graph.decode(a).is_some() {
            let refill = match ch.next {
                Next::Fill(..) => cap - g,
                _ => w - g,
            };
            stop_at.push((legs.len(), refill.max(0.0)));
        }
        let walk = dp.dist.walk(graph, ch.dep, target);
        legs.extend(legs_from_walk(network, prep, graph, &walk)?);
        match ch.next {
            Next::Sink => break,
            Next::Empty(b) => (a, gi) = (b, 0),
            Next::Fill(b, i) => (a, gi) = (b, i),
        }
        q -= 1;
    }
    let mut refills = vec![0.0; legs.len() + 1];
    let mut stops = vec![false; legs.len() + 1];
    for (k, r) in stop_at {
        refills[k] += r;
        stops[k] = true;
    }
    assemble(network, &prep.grid, legs, &refills, &stops)
}
