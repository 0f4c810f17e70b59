#![allow(dead_code, clippy::needless_range_loop)]

use phevplan_core::dmop::TripInstance;
use phevplan_core::model::{FuelCurve, ModeSet, SlotCoeffs, SlotInput, SocBounds};
use phevplan_core::pathplan::{edge_cost_tables, PlanOptions, RoadEdge, RoadNetwork, Station, TripPlan};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_coeffs(rng: &mut impl Rng) -> SlotCoeffs {
    SlotCoeffs {
        eta_r: rng.random_range(0.7..=1.0),
        eta_d: rng.random_range(1.0..=1.4),
        eta_e: rng.random_range(0.6..=1.0),
        engine_charge_cap: rng.random_range(0.0..=4.0),
        ap_split: rng.random_range(0.0..=1.0),
    }
}

pub fn random_curve(rng: &mut impl Rng) -> FuelCurve {
    FuelCurve::new(rng.random_range(0.005..=0.05), rng.random_range(0.05..=0.3), rng.random_range(0.0..=0.2)).unwrap()
}

/// Random trip with mixed traction and braking slots.
pub fn random_trip(rng: &mut impl Rng, horizon: usize) -> TripInstance {
    let lo = rng.random_range(0.0..=2.0);
    let hi = lo + 10.0;
    let slots = (0..horizon)
        .map(|_| {
            let coeffs = random_coeffs(rng);
            if rng.random_bool(0.25) {
                SlotInput::new(0.0, rng.random_range(0.0..=4.0), coeffs)
            } else {
                SlotInput::new(rng.random_range(0.0..=5.0), 0.0, coeffs)
            }
        })
        .collect();
    TripInstance {
        slots,
        curve: random_curve(rng),
        bounds: SocBounds::new(lo, hi).unwrap(),
        b0: rng.random_range(lo..=hi),
        g0: 1e3,
        modes: ModeSet::all(),
        terminal_soc: None,
    }
}

/// Steepest slope of the fuel curve over every engine output the trip can request.
pub fn max_slope(inst: &TripInstance) -> f64 {
    let qmax = inst.slots.iter().map(|s| s.p_pos + s.coeffs.engine_charge_cap).fold(0.0, f64::max);
    2.0 * inst.curve.gamma2 * qmax + inst.curve.gamma1
}

pub fn station(id: &str, g: f64, h: f64, e: f64) -> Station {
    Station { id: id.into(), fuel_price: g, charge_price: h, charge_cap: e }
}

pub fn random_slots(rng: &mut impl Rng, max_slots: usize) -> Vec<SlotInput> {
    let n = rng.random_range(1..=max_slots);
    (0..n)
        .map(|_| {
            let coeffs = random_coeffs(rng);
            if rng.random_bool(0.2) {
                SlotInput::new(0.0, rng.random_range(0.0..=3.0), coeffs)
            } else {
                SlotInput::new(rng.random_range(0.0..=4.0), 0.0, coeffs)
            }
        })
        .collect()
}

/// Random DAG on `n` nodes with a guaranteed chain from first to last.
pub fn random_network(rng: &mut impl Rng, n: usize, uniform: bool) -> RoadNetwork {
    let free = uniform || rng.random_bool(0.3);
    let nodes = (0..n)
        .map(|i| {
            let g = if uniform { 1.0 } else { rng.random_range(1..=4) as f64 };
            let h = if free { 0.0 } else { rng.random_range(0.0..=0.5) };
            let e = if rng.random_bool(0.6) { rng.random_range(0.0..=6.0) } else { 0.0 };
            station(&format!("n{i}"), g, h, e)
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.random_bool(0.4) {
                edges.push(RoadEdge { from: i, to: j, slots: random_slots(rng, 3) });
            }
        }
    }
    let cap = rng.random_range(4.0..=14.0);
    RoadNetwork {
        nodes,
        edges,
        source: 0,
        dest: n - 1,
        tank_capacity: cap,
        stop_budget: Some(rng.random_range(1..=4)),
        g0: rng.random_range(0.0..=cap),
        b0: rng.random_range(0.0..=10.0),
        curve: random_curve(rng),
        bounds: SocBounds::new(0.0, 10.0).unwrap(),
        modes: ModeSet::all(),
    }
}

/// Simple source-destination paths as edge lists.
pub fn simple_paths(net: &RoadNetwork) -> Vec<Vec<usize>> {
    fn go(net: &RoadNetwork, u: usize, seen: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if u == net.dest {
            out.push(cur.clone());
            return;
        }
        for (k, e) in net.edges.iter().enumerate() {
            if e.from == u && !seen[e.to] {
                seen[e.to] = true;
                cur.push(k);
                go(net, e.to, seen, cur, out);
                cur.pop();
                seen[e.to] = false;
            }
        }
    }
    let mut seen = vec![false; net.nodes.len()];
    seen[net.source] = true;
    let mut out = Vec::new();
    go(net, net.source, &mut seen, &mut Vec::new(), &mut out);
    out
}

/// Arrival fuel between consecutive stops follows the arrive-empty /
/// leave-full rule; returns the first violation.
pub fn stop_structure_violation(net: &RoadNetwork, plan: &TripPlan) -> Option<String> {
    let tol = 1e-9 * net.tank_capacity.max(1.0);
    let price = |v: &phevplan_core::pathplan::NodeVisit| net.nodes[net.node_index(&v.node).unwrap()].fuel_price;
    let stops: Vec<usize> = (0..plan.visits.len()).filter(|&k| plan.visits[k].stop).collect();
    for w in stops.windows(2) {
        let (a, b) = (&plan.visits[w[0]], &plan.visits[w[1]]);
        if price(b) <= price(a) {
            if b.fuel_arrive.abs() > tol {
                return Some(format!("expected empty arrival at {}", b.node));
            }
        } else if (a.fuel_depart - net.tank_capacity).abs() > tol {
            return Some(format!("expected full tank leaving {}", a.node));
        }
    }
    None
}

pub fn assert_stop_structure(net: &RoadNetwork, plan: &TripPlan) {
    if let Some(v) = stop_structure_violation(net, plan) {
        panic!("{v}: {plan:?}");
    }
}

/// Min over simple paths of the per-path level DP with free charging.
pub fn path_enumeration(net: &RoadNetwork, o: &PlanOptions) -> f64 {
    let grid = o.node_grid(net.bounds).unwrap();
    let tables = edge_cost_tables(net, o).unwrap();
    let n = grid.levels;
    let steps = |v: usize| ((net.nodes[v].charge_cap / grid.delta()) + 1e-9).floor() as usize;
    let b0 = grid.bucket(net.b0);
    let mut best = f64::INFINITY;
    for path in simple_paths(net) {
        let mut cost = vec![f64::INFINITY; n];
        for l in b0..=(b0 + steps(net.source)).min(n - 1) {
            cost[l] = 0.0;
        }
        for &e in &path {
            let mut next = vec![f64::INFINITY; n];
            let k = steps(net.edges[e].to);
            for i in 0..n {
                for j in 0..n {
                    let z = tables[e].z(i, j);
                    if z <= net.tank_capacity {
                        let a = (j + k).min(n - 1);
                        next[a] = next[a].min(cost[i] + z);
                    }
                }
            }
            cost = next;
        }
        best = best.min(cost.into_iter().fold(f64::INFINITY, f64::min));
    }
    best
}
