//! Exhaustive planner for tiny networks: every simple route, every stop set
//! and every node SoC level, with refills following the arrive-empty /
//! leave-full rule between consecutive stops.

use super::plan::{assemble, LegSpec};
use super::{charge_steps, prepare, table_schedule, PlanOptions, Prepared, RoadNetwork, TripPlan};
use crate::error::{Error, Result};

pub const BRUTE_FORCE_MAX_PATHS: usize = 10;
pub const BRUTE_FORCE_MAX_STOPS: usize = 4;
pub const BRUTE_FORCE_MAX_LEVELS: usize = 5;

/// Min-fuel level sequences along one route from a fixed start.
struct Chain {
    start: usize,
    /// `cost[pos - start][level]` with the back-pointer `(previous level, credit)`
    cost: Vec<Vec<(f64, Option<(usize, usize)>)>>,
}

impl Chain {
    fn get(&self, pos: usize, level: usize) -> f64 {
        self.cost[pos - self.start][level].0
    }
}

struct Route<'a> {
    network: &'a RoadNetwork,
    prep: &'a Prepared,
    edges: Vec<usize>,
    nodes: Vec<usize>,
    free: bool,
}

impl Route<'_> {
    fn levels(&self) -> usize {
        self.prep.grid.levels
    }

    fn chain(&self, start: usize, dep: usize) -> Chain {
        let n = self.levels();
        let cap = self.network.tank_capacity;
        let mut cost = vec![vec![(f64::INFINITY, None); n]];
        cost[0][dep].0 = 0.0;
        for pos in start..self.edges.len() {
            let e = self.edges[pos];
            let head = self.nodes[pos + 1];
            let k = if self.free { charge_steps(self.network.nodes[head].charge_cap, &self.prep.grid) } else { 0 };
            let mut next = vec![(f64::INFINITY, None); n];
            for (l, &(c, _)) in cost[pos - start].iter().enumerate() {
                if !c.is_finite() {
                    continue;
                }
                for j in 0..n {
                    let z = self.prep.tables[e].z(l, j);
                    if !(z <= cap) {
                        continue;
                    }
                    let arrive = (j + k).min(n - 1);
                    if c + z < next[arrive].0 {
                        next[arrive] = (c + z, Some((l, j)));
                    }
                }
            }
            cost.push(next);
        }
        Chain { start, cost }
    }

    /// Legs from `(chain.start, dep)` to `(end, level)`.
    fn legs(&self, chain: &Chain, end: usize, level: usize) -> Result<Vec<LegSpec>> {
        let mut out = Vec::new();
        let mut l = level;
        for pos in (chain.start + 1..=end).rev() {
            let (prev, credit) = chain.cost[pos - chain.start][l].1.expect("finite chain entry");
            let edge = self.edges[pos - 1];
            let fuel = self.prep.tables[edge].z(prev, credit);
            let schedule = table_schedule(self.network, &self.prep.tables[edge], &self.prep.grid, edge, prev, credit)?;
            out.push(LegSpec { edge, dep: prev, credit, arrive: l, fuel, schedule });
            l = prev;
        }
        out.reverse();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Stop {
    pos: usize,
    arrive: usize,
    dep: usize,
    refill: f64,
}

struct Search<'a, 'b> {
    route: &'b Route<'a>,
    chains: Vec<Vec<Chain>>,
    /// departure levels reachable from the virtual start and their chains
    start_deps: Vec<usize>,
    budget: usize,
    best: Option<(f64, Vec<Stop>, usize)>,
}

impl Search<'_, '_> {
    /// Distance from the current stop (or the virtual start) to `(pos, level)`.
    fn leg(&self, from: Option<&Stop>, pos: usize, level: usize) -> f64 {
        match from {
            Some(s) => self.chains[s.pos][s.dep].get(pos, level),
            None => {
                let net = self.route.network;
                let d = self
                    .start_deps
                    .iter()
                    .map(|&dep| self.chains[0][dep].get(pos, level))
                    .fold(f64::INFINITY, f64::min);
                d + (net.tank_capacity - net.g0)
            }
        }
    }

    fn run(&mut self, stops: &mut Vec<Stop>, fuel: f64, cost: f64) {
        let route = self.route;
        let net = route.network;
        let cap = net.tank_capacity;
        let n = route.levels();
        let k = route.edges.len();
        let cur = stops.last().copied();
        let price = cur.map_or(0.0, |s| net.nodes[route.nodes[s.pos]].fuel_price);

        for level in 0..n {
            let w = self.leg(cur.as_ref(), k, level);
            if w <= cap && fuel <= w {
                let total = cost + (w - fuel) * price;
                if self.best.as_ref().is_none_or(|b| total < b.0) {
                    let mut snap = stops.clone();
                    if let Some(s) = snap.last_mut() {
                        s.refill = w - fuel;
                    }
                    self.best = Some((total, snap, level));
                }
            }
        }
        if stops.len() >= self.budget {
            return;
        }
        let first = cur.map_or(0, |s| s.pos + 1);
        for pos in first..k {
            let st = &net.nodes[route.nodes[pos]];
            for arrive in 0..n {
                let w = self.leg(cur.as_ref(), pos, arrive);
                if !(w <= cap) {
                    continue;
                }
                let (next_fuel, spent, refill) = if st.fuel_price <= price {
                    if fuel > w {
                        continue;
                    }
                    (0.0, (w - fuel) * price, w - fuel)
                } else {
                    (cap - w, (cap - fuel) * price, cap - fuel)
                };
                if let Some(s) = stops.last_mut() {
                    s.refill = refill;
                }
                let top = if route.free {
                    arrive
                } else {
                    (arrive + charge_steps(st.charge_cap, &route.prep.grid)).min(n - 1)
                };
                for dep in arrive..=top {
                    let charge = st.charge_price * (route.prep.grid.level(dep) - route.prep.grid.level(arrive));
                    stops.push(Stop { pos, arrive, dep, refill: 0.0 });
                    self.run(stops, next_fuel, cost + spent + charge);
                    stops.pop();
                }
            }
        }
    }
}

fn simple_paths(network: &RoadNetwork) -> Result<Vec<Vec<usize>>> {
    fn dfs(net: &RoadNetwork, u: usize, seen: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) -> bool {
        if u == net.dest {
            out.push(cur.clone());
            return out.len() <= BRUTE_FORCE_MAX_PATHS;
        }
        for (k, e) in net.edges.iter().enumerate() {
            if e.from != u || seen[e.to] {
                continue;
            }
            seen[e.to] = true;
            cur.push(k);
            let ok = dfs(net, e.to, seen, cur, out);
            cur.pop();
            seen[e.to] = false;
            if !ok {
                return false;
            }
        }
        true
    }
    let mut seen = vec![false; network.nodes.len()];
    seen[network.source] = true;
    let mut out = Vec::new();
    if !dfs(network, network.source, &mut seen, &mut Vec::new(), &mut out) {
        return Err(Error::InstanceTooLarge(format!("more than {BRUTE_FORCE_MAX_PATHS} simple paths")));
    }
    Ok(out)
}

/// Exhaustive optimum over simple routes; for cross-checking the DP.
pub fn brute_force_ppdm(network: &RoadNetwork, opts: &PlanOptions) -> Result<TripPlan> {
    network.validate()?;
    if opts.levels > BRUTE_FORCE_MAX_LEVELS {
        return Err(Error::InstanceTooLarge(format!("{} SoC levels (limit {BRUTE_FORCE_MAX_LEVELS})", opts.levels)));
    }
    let paths = simple_paths(network)?;
    let longest = paths.iter().map(Vec::len).max().unwrap_or(0);
    let budget = network.stop_budget().min(longest.max(1));
    if budget > BRUTE_FORCE_MAX_STOPS {
        return Err(Error::InstanceTooLarge(format!("{budget} stops (limit {BRUTE_FORCE_MAX_STOPS})")));
    }
    let prep = prepare(network, opts)?;
    let free = network.free_charging();
    let b0 = prep.grid.bucket(network.b0);
    let top = prep.grid.levels - 1;

    let mut best: Option<(f64, TripPlan)> = None;
    for path in paths {
        let mut nodes = vec![network.source];
        nodes.extend(path.iter().map(|&e| network.edges[e].to));
        let route = Route { network, prep: &prep, edges: path, nodes, free };
        let k = route.edges.len();
        let chains: Vec<Vec<Chain>> =
            (0..=k).map(|p| (0..route.levels()).map(|d| route.chain(p, d)).collect()).collect();
        let start_top =
            if free { (b0 + charge_steps(network.nodes[network.source].charge_cap, &prep.grid)).min(top) } else { b0 };
        let mut search = Search { route: &route, chains, start_deps: (b0..=start_top).collect(), budget, best: None };
        search.run(&mut Vec::new(), 0.0, 0.0);
        let Some((cost, stops, final_level)) = search.best.take() else { continue };
        if best.as_ref().is_some_and(|b| b.0 <= cost) {
            continue;
        }
        let plan = rebuild(&route, &search, &stops, final_level)?;
        best = Some((cost, plan));
    }
    best.map(|b| b.1).ok_or(Error::Infeasible)
}

fn rebuild(route: &Route, search: &Search, stops: &[Stop], final_level: usize) -> Result<TripPlan> {
    let k = route.edges.len();
    let mut legs = Vec::new();
    let mut ends: Vec<(usize, usize)> = stops.iter().map(|s| (s.pos, s.arrive)).collect();
    ends.push((k, final_level));
    // virtual start: pick the departure level the distance came from
    let (pos0, lvl0) = ends[0];
    let dep0 = *search
        .start_deps
        .iter()
        .min_by(|&&a, &&b| search.chains[0][a].get(pos0, lvl0).total_cmp(&search.chains[0][b].get(pos0, lvl0)))
        .expect("start level");
    legs.extend(route.legs(&search.chains[0][dep0], pos0, lvl0)?);
    for (i, s) in stops.iter().enumerate() {
        let (pos, lvl) = ends[i + 1];
        legs.extend(route.legs(&search.chains[s.pos][s.dep], pos, lvl)?);
    }
    let mut refills = vec![0.0; k + 1];
    let mut flags = vec![false; k + 1];
    for s in stops {
        refills[s.pos] = s.refill.max(0.0);
        flags[s.pos] = true;
    }
    assemble(route.network, &route.prep.grid, legs, &refills, &flags)
}
