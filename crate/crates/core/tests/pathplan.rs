mod common;

use common::*;
use phevplan_core::dmop::SocGrid;
use phevplan_core::model::{FuelCurve, Mode, ModeSet, SlotCoeffs, SlotInput, SocBounds};
use phevplan_core::pathplan::*;
use phevplan_core::relax::Tolerances;
use phevplan_core::Error;

fn ce_slot(p: f64) -> SlotInput {
    SlotInput::new(p, 0.0, SlotCoeffs::ideal())
}

/// Engine-only network: fuel of an edge is the sum of its loads.
fn line_network(stations: Vec<Station>, edges: Vec<(usize, usize, Vec<f64>)>, cap: f64, g0: f64) -> RoadNetwork {
    let dest = stations.len() - 1;
    RoadNetwork {
        nodes: stations,
        edges: edges
            .into_iter()
            .map(|(from, to, loads)| RoadEdge { from, to, slots: loads.into_iter().map(ce_slot).collect() })
            .collect(),
        source: 0,
        dest,
        tank_capacity: cap,
        stop_budget: None,
        g0,
        b0: 0.0,
        curve: FuelCurve::new(0.0, 1.0, 0.0).unwrap(),
        bounds: SocBounds::new(0.0, 10.0).unwrap(),
        modes: ModeSet::only(Mode::Ce),
    }
}

fn opts(levels: usize) -> PlanOptions {
    PlanOptions { levels, edge_grid: 101 }
}

#[test]
fn zero_load_edge_costs_nothing() {
    let net = line_network(
        vec![station("a", 1.0, 0.0, 0.0), station("b", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![0.0, 0.0])],
        5.0,
        5.0,
    );
    let grid = SocGrid::new(5, net.bounds).unwrap();
    let table = edge_cost_table(&net.edge_trip(0, 0.0), &grid, &SocGrid::new(101, net.bounds).unwrap());
    for b in 0..5 {
        assert_eq!(table.z(b, b), 0.0);
    }
}

#[test]
fn engine_charge_edge_and_soc_cap() {
    let coeffs = SlotCoeffs { engine_charge_cap: 2.0, ..SlotCoeffs::ideal() };
    let mut net = line_network(vec![station("a", 1.0, 0.0, 0.0), station("b", 1.0, 0.0, 0.0)], vec![], 50.0, 50.0);
    net.edges.push(RoadEdge { from: 0, to: 1, slots: vec![SlotInput::new(1.5, 0.0, coeffs)] });
    net.modes = ModeSet::all();
    let grid = SocGrid::new(6, net.bounds).unwrap();
    let table = edge_cost_table(&net.edge_trip(0, 0.0), &grid, &SocGrid::new(101, net.bounds).unwrap());
    // levels are 2 apart, so one level up is exactly the CS charge
    assert!((table.z(1, 2) - net.curve.fuel(1.5 + 2.0)).abs() < 1e-9);
    assert_eq!(table.z(5, 6), f64::INFINITY);
}

#[test]
fn augmented_graph_counts() {
    let mut net = line_network(vec![station("a", 1.0, 0.0, 0.0)], vec![], 5.0, 5.0);
    net.dest = 0;
    let grid = SocGrid::new(3, net.bounds).unwrap();
    let g = build_augmented_graph(&net, &grid, &[], false);
    assert_eq!(g.num_nodes(), 5);
}

#[test]
fn free_charging_links_only_top_level() {
    let net = {
        let mut n = line_network(
            vec![station("a", 1.0, 0.0, 10.0), station("b", 1.0, 0.0, 10.0)],
            vec![(0, 1, vec![1.0])],
            5.0,
            5.0,
        );
        n.modes = ModeSet::all();
        n
    };
    let grid = SocGrid::new(3, net.bounds).unwrap();
    let tables = edge_cost_tables(&net, &opts(3)).unwrap();
    let g = build_augmented_graph(&net, &grid, &tables, true);
    let road: Vec<&AugEdge> = g.edges.iter().filter(|e| e.road_edge.is_some()).collect();
    assert!(!road.is_empty());
    assert!(road.iter().all(|e| g.decode(e.to).unwrap().1 == 2));
    let pairs = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&(i, j)| tables[0].z(i, j) <= 5.0).count();
    assert_eq!(road.len(), pairs);
}

#[test]
fn over_tank_edge_has_no_augmented_edges() {
    let net =
        line_network(vec![station("a", 1.0, 0.0, 0.0), station("b", 1.0, 0.0, 0.0)], vec![(0, 1, vec![6.0])], 5.0, 5.0);
    let grid = SocGrid::new(3, net.bounds).unwrap();
    let tables = edge_cost_tables(&net, &opts(3)).unwrap();
    let g = build_augmented_graph(&net, &grid, &tables, true);
    assert!(g.edges.iter().all(|e| e.road_edge.is_none()));
    assert!(matches!(solve_uppdm(&net, &opts(3)), Err(Error::Infeasible)));
}

#[test]
fn uppdm_picks_cheaper_parallel_route() {
    let net = line_network(
        vec![
            station("s", 1.0, 0.0, 0.0),
            station("x", 1.0, 0.0, 0.0),
            station("y", 1.0, 0.0, 0.0),
            station("d", 1.0, 0.0, 0.0),
        ],
        vec![(0, 1, vec![2.0]), (1, 3, vec![1.0]), (0, 2, vec![4.0]), (2, 3, vec![1.0])],
        10.0,
        10.0,
    );
    let plan = solve_uppdm(&net, &opts(3)).unwrap();
    assert_eq!(plan.route(), vec!["s", "x", "d"]);
    assert!((plan.total_fuel - 3.0).abs() < 1e-12);
    plan.check(&net, true).unwrap();
}

#[test]
fn single_edge_priced_stop() {
    let net = line_network(
        vec![station("s", 2.0, 0.0, 0.0), station("t", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![5.0])],
        10.0,
        0.0,
    );
    let plan = solve_ppdm_dp(&net, &opts(3)).unwrap();
    assert!((plan.total_cost - 10.0).abs() < 1e-12);
    assert_eq!(plan.stop_count, 1);
    let brute = brute_force_ppdm(&net, &opts(3)).unwrap();
    assert!((brute.total_cost - 10.0).abs() < 1e-12);
    plan.check(&net, true).unwrap();
}

#[test]
fn cheap_station_ahead_gets_the_fuel() {
    // s is dear, m is cheap: buy only enough at s to reach m
    let net = line_network(
        vec![station("s", 3.0, 0.0, 0.0), station("m", 1.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![2.0]), (1, 2, vec![6.0])],
        8.0,
        0.0,
    );
    let plan = solve_ppdm_dp(&net, &opts(3)).unwrap();
    assert!((plan.total_cost - (2.0 * 3.0 + 6.0)).abs() < 1e-12, "{plan:?}");
    assert_stop_structure(&net, &plan);
    let brute = brute_force_ppdm(&net, &opts(3)).unwrap();
    assert!((brute.total_cost - plan.total_cost).abs() < 1e-12);
}

#[test]
fn dear_station_ahead_means_fill_up() {
    let net = line_network(
        vec![station("s", 1.0, 0.0, 0.0), station("m", 3.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![2.0]), (1, 2, vec![8.0])],
        8.0,
        0.0,
    );
    let plan = solve_ppdm_dp(&net, &opts(3)).unwrap();
    // 8 at s, then 2 more at m
    assert!((plan.total_cost - (8.0 + 2.0 * 3.0)).abs() < 1e-12, "{plan:?}");
    assert_stop_structure(&net, &plan);
    plan.check(&net, true).unwrap();
}

#[test]
fn stop_budget_binds() {
    let mut net = line_network(
        vec![station("s", 3.0, 0.0, 0.0), station("m", 1.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![2.0]), (1, 2, vec![4.0])],
        8.0,
        0.0,
    );
    net.stop_budget = Some(1);
    let plan = solve_ppdm_dp(&net, &opts(3)).unwrap();
    assert!((plan.total_cost - 18.0).abs() < 1e-12, "{plan:?}");
    assert_eq!(plan.stop_count, 1);
    let brute = brute_force_ppdm(&net, &opts(3)).unwrap();
    assert!((brute.total_cost - 18.0).abs() < 1e-12);
}

#[test]
fn brute_force_limits() {
    let mut net =
        line_network(vec![station("s", 1.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)], vec![(0, 1, vec![1.0])], 5.0, 5.0);
    assert!(matches!(brute_force_ppdm(&net, &opts(6)), Err(Error::InstanceTooLarge(_))));
    net.edges = (0..11).map(|_| RoadEdge { from: 0, to: 1, slots: vec![ce_slot(1.0)] }).collect();
    assert!(matches!(brute_force_ppdm(&net, &opts(3)), Err(Error::InstanceTooLarge(_))));
}

#[test]
fn dp_matches_brute_force_on_random_networks() {
    let mut r = rng(0x9a7d);
    let mut solved = 0;
    for case in 0..40 {
        let n = 3 + case % 3;
        let net = random_network(&mut r, n, false);
        let o = opts(3 + case % 3);
        let dp = solve_ppdm_dp(&net, &o);
        let bf = brute_force_ppdm(&net, &o);
        match (dp, bf) {
            (Ok(a), Ok(b)) => {
                assert!(
                    (a.total_cost - b.total_cost).abs() <= 1e-9,
                    "case {case}: dp {} brute {}",
                    a.total_cost,
                    b.total_cost
                );
                a.check(&net, true).unwrap();
                b.check(&net, true).unwrap();
                assert_stop_structure(&net, &a);
                solved += 1;
            }
            (Err(Error::Infeasible), Err(Error::Infeasible)) => {}
            (a, b) => panic!("case {case}: dp {a:?} brute {b:?}"),
        }
    }
    assert!(solved >= 20, "only {solved} feasible cases");
}

#[test]
fn uppdm_matches_path_enumeration() {
    let mut r = rng(0x51);
    for case in 0..25 {
        let net = random_network(&mut r, 3 + case % 3, true);
        let o = opts(5 + 2 * (case % 3));
        let want = path_enumeration(&net, &o);
        match solve_uppdm(&net, &o) {
            Ok(plan) => {
                assert!((plan.total_fuel - want).abs() <= 1e-9, "case {case}: {} vs {want}", plan.total_fuel);
                plan.check(&net, false).unwrap();
            }
            Err(Error::Infeasible) => assert!(want.is_infinite(), "case {case}"),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn uniform_prices_dp_agrees_with_uppdm() {
    let mut r = rng(0x77);
    let mut checked = 0;
    for case in 0..25 {
        let mut net = random_network(&mut r, 3 + case % 3, true);
        net.stop_budget = None;
        let o = opts(5);
        let (Ok(u), Ok(d)) = (solve_uppdm(&net, &o), solve_ppdm_dp(&net, &o)) else { continue };
        // the shortest path pays G_cap - G0 up front; the plan buys only what it burns
        let purchased = (u.total_fuel - net.g0).max(0.0);
        if u.legs.iter().all(|l| l.fuel_used <= net.tank_capacity) {
            assert!(d.total_cost <= purchased + 1e-9, "case {case}: {} vs {purchased}", d.total_cost);
        }
        assert!(d.total_cost + 1e-9 >= purchased.min(d.total_fuel - net.g0).max(0.0));
        checked += 1;
    }
    assert!(checked > 10);
}

/// Largest amount a continuous edge schedule can undercut the edge table: one
/// fine-grid step of SoC per slot, priced at the steepest fuel slope.
fn edge_grid_slack(net: &RoadNetwork, o: &PlanOptions) -> f64 {
    let step = net.bounds.span() / (o.edge_grid - 1) as f64;
    let qmax = net.edges.iter().flat_map(|e| &e.slots).map(|s| s.max_engine_output()).fold(0.0, f64::max);
    let slope = 2.0 * net.curve.gamma2 * qmax + net.curve.gamma1;
    let price = net.nodes.iter().map(|s| s.fuel_price).fold(0.0, f64::max);
    let slots: usize = net.edges.iter().map(|e| e.slots.len()).sum();
    slots as f64 * step * slope * price
}

#[test]
fn cppdm_sandwich_on_random_networks() {
    let mut r = rng(0xc0de);
    let tol = Tolerances::default();
    let mut checked = 0;
    for case in 0..30 {
        let mut net = random_network(&mut r, 3 + case % 2, false);
        net.g0 = 0.1 * net.tank_capacity;
        net.b0 = 1.0;
        let o = opts(5);
        let Ok(dp) = solve_ppdm_dp(&net, &o) else { continue };
        let out = match solve_cppdm(&net, &o, &tol) {
            Ok(out) => out,
            Err(Error::Infeasible) => continue,
            Err(e) => panic!("case {case}: {e}"),
        };
        let slack = 1e-6 * dp.total_cost.abs().max(1.0);
        assert!(
            out.lower_bound <= dp.total_cost + slack,
            "case {case}: bound {} dp {}",
            out.lower_bound,
            dp.total_cost
        );
        assert!(
            out.plan.total_cost + slack + edge_grid_slack(&net, &o) >= dp.total_cost,
            "case {case}: rounded {} dp {}",
            out.plan.total_cost,
            dp.total_cost
        );
        out.plan.check(&net, true).unwrap();
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} cases");
}

#[test]
fn cppdm_single_path_rounds_to_it() {
    let net = line_network(
        vec![station("s", 2.0, 0.0, 0.0), station("m", 1.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![2.0]), (1, 2, vec![3.0])],
        8.0,
        1.0,
    );
    let out = solve_cppdm(&net, &opts(3), &Tolerances::default()).unwrap();
    assert_eq!(out.plan.route(), vec!["s", "m", "d"]);
    assert!(out.plan.total_cost + 1e-6 >= out.lower_bound);
}

#[test]
fn cppdm_disconnected_destination() {
    let mut net = line_network(
        vec![station("s", 1.0, 0.0, 0.0), station("m", 1.0, 0.0, 0.0), station("d", 1.0, 0.0, 0.0)],
        vec![(0, 1, vec![1.0]), (1, 2, vec![20.0])],
        8.0,
        8.0,
    );
    assert!(matches!(solve_cppdm(&net, &opts(3), &Tolerances::default()), Err(Error::Infeasible)));
    net.edges.pop();
    assert!(matches!(solve_cppdm(&net, &opts(3), &Tolerances::default()), Err(Error::InvalidInput(_))));
}
