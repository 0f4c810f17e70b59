//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{max_slope, path_enumeration, random_network, random_trip, rng, stop_structure_violation};
use phevplan_core::calibrate::{calibrate, features, ObdRecord, ObdTrace};
use phevplan_core::dmop::{brute_force_dmop, solve_dmop_dp, SocGrid, TripInstance};
use phevplan_core::io::{load_instance, load_network};
use phevplan_core::model::{
    drivetrain_power, FuelCurve, ModeSet, ProfileStep, SlotCoeffs, SlotInput, SocBounds, VehicleParams,
};
use phevplan_core::online::{compute_thresholds, instance_thresholds, run_online};
use phevplan_core::pathplan::{brute_force_ppdm, solve_ppdm_dp, solve_uppdm, PlanOptions};
use phevplan_core::relax::{approximate, Tolerances};
use phevplan_core::sweep::{sweep, SweepSolver};
use phevplan_core::Error;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn data(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// 1. DP against exhaustive search, with the grid error bound and runtime.
fn dmop_oracle() -> Outcome {
    const GRIDS: [usize; 3] = [11, 101, 1001];
    let mut r = rng(1);
    let mut bound_violations = 0;
    let mut monotone_violations = 0;
    let mut worst = 0.0f64;
    let mut dp_time = Duration::ZERO;
    let mut max_gap = [0.0f64; 3];
    for _ in 0..200 {
        let t = r.random_range(2..=6);
        let inst = random_trip(&mut r, t);
        let Ok(bf) = brute_force_dmop(&inst) else {
            bound_violations += 1;
            continue;
        };
        let mut gaps = [0.0; 3];
        for (k, &n) in GRIDS.iter().enumerate() {
            let grid = SocGrid::new(n, inst.bounds).unwrap();
            let start = Instant::now();
            let dp = solve_dmop_dp(&inst, &grid);
            if n == 1001 {
                dp_time += start.elapsed();
            }
            gaps[k] = match dp {
                Ok(s) => s.total_fuel - bf.total_fuel,
                Err(_) => f64::INFINITY,
            };
        }
        for k in 0..3 {
            max_gap[k] = max_gap[k].max(gaps[k]);
        }
        let grid = SocGrid::new(1001, inst.bounds).unwrap();
        let tol = 2.0 * grid.delta() * max_slope(&inst);
        worst = worst.max(gaps[2].abs() / tol);
        if gaps[2].abs() > tol {
            bound_violations += 1;
        }
        if gaps[1] > gaps[0] + 1e-12 || gaps[2] > gaps[1] + 1e-12 {
            monotone_violations += 1;
        }
    }
    let pass = bound_violations == 0 && monotone_violations == 0 && dp_time < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "200 instances, bound violations {bound_violations}, gap increases {monotone_violations}, \
             max gap at N=11/101/1001 {:.2e}/{:.2e}/{:.2e}, worst |gap|/(2 delta slope) {worst:.3}, \
             DP time at N=1001 {dp_time:.2?}",
            max_gap[0], max_gap[1], max_gap[2]
        ),
    )
}

/// 2. Relaxation value <= optimum <= rounded cost.
fn cdmop_sandwich() -> Outcome {
    let mut r = rng(2);
    let tol = Tolerances { optimality: 1e-9, ..Tolerances::default() };
    let mut violations = 0;
    let mut failures = 0;
    let mut worst_low = f64::NEG_INFINITY;
    for _ in 0..100 {
        let t = r.random_range(1..=5);
        let inst = random_trip(&mut r, t);
        let bf = brute_force_dmop(&inst).unwrap().total_fuel;
        match approximate(&inst, &tol) {
            Ok(o) => {
                let slack = 1e-6 * bf.abs().max(1.0);
                worst_low = worst_low.max(o.value - bf);
                if o.value > bf + slack || bf > o.schedule.total_fuel + slack {
                    violations += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        violations == 0 && failures == 0,
        format!("100 instances, violations {violations}, solver failures {failures}, max(value - opt) {worst_low:.2e}"),
    )
}

/// Instance of the competitive-ratio family: a near-idle slot, two light
/// slots and a heavy one, engine cost dominated by the quadratic term.
fn ratio_family(scale: f64, gamma1: f64) -> TripInstance {
    let coeffs = SlotCoeffs { eta_r: 1.0, eta_d: 1.0, eta_e: 1.0, engine_charge_cap: 5.0 * scale, ap_split: 0.5 };
    let hi = 4.0 * scale;
    TripInstance {
        slots: [0.05, 1.5, 1.5, 4.0].iter().map(|&p| SlotInput::new(p * scale, 0.0, coeffs)).collect(),
        curve: FuelCurve::new(1.0, gamma1, 0.0).unwrap(),
        bounds: SocBounds::new(0.0, hi).unwrap(),
        b0: 0.0,
        g0: 1e6,
        modes: ModeSet { ev: true, ce: false, cs: true, ap: false },
        terminal_soc: Some(hi),
    }
}

/// 3. Online cost within the competitive ratio of the optimum.
fn competitive_ratio() -> Outcome {
    let mut r = rng(3);
    let mut checked = 0;
    let mut violations = 0;
    let mut max_ratio = 0.0f64;
    while checked < 500 {
        let t = r.random_range(1..=6);
        let hi = r.random_range(1.0..=6.0);
        let slots = (0..t)
            .map(|_| {
                let coeffs = SlotCoeffs {
                    eta_r: 1.0,
                    eta_d: r.random_range(1.0..=1.4),
                    eta_e: r.random_range(0.6..=1.0),
                    engine_charge_cap: r.random_range(0.5..=6.0),
                    ap_split: r.random_range(0.0..=1.0),
                };
                SlotInput::new(r.random_range(0.0..=5.0), 0.0, coeffs)
            })
            .collect();
        let mut modes = ModeSet::all();
        modes.ap = r.random_bool(0.5);
        modes.ce = r.random_bool(0.7);
        let inst = TripInstance {
            slots,
            curve: FuelCurve::new(r.random_range(0.005..=1.0), r.random_range(0.0001..=0.3), 0.0).unwrap(),
            bounds: SocBounds::new(0.0, hi).unwrap(),
            b0: 0.0,
            g0: 1e6,
            modes,
            terminal_soc: Some(hi),
        };
        let Ok(opt) = brute_force_dmop(&inst) else { continue };
        let Ok(report) = instance_thresholds(&inst) else { continue };
        checked += 1;
        match run_online(&inst, Some(report.thresholds)) {
            Ok((on, _)) => {
                if on.total_fuel > report.competitive_ratio * opt.total_fuel + 1e-9 {
                    violations += 1;
                }
                if opt.total_fuel > 0.0 {
                    max_ratio = max_ratio.max(on.total_fuel / opt.total_fuel);
                }
            }
            Err(_) => violations += 1,
        }
    }
    let mut family_min = f64::INFINITY;
    let mut family_ok = true;
    for scale in [0.5, 1.0, 2.0] {
        for gamma1 in [0.0001, 0.01, 0.05] {
            let inst = ratio_family(scale, gamma1);
            let opt = brute_force_dmop(&inst).unwrap();
            let report = instance_thresholds(&inst).unwrap();
            let (on, _) = run_online(&inst, Some(report.thresholds)).unwrap();
            let reaches_top = on.final_soc >= inst.bounds.hi - 1e-9;
            family_ok &= reaches_top && on.total_fuel <= report.competitive_ratio * opt.total_fuel + 1e-9;
            family_min = family_min.min(on.total_fuel / opt.total_fuel);
        }
    }
    outcome(
        violations == 0 && family_ok && family_min > 1.1,
        format!(
            "500 random instances, violations {violations}, max random ratio {max_ratio:.3}; \
             family of 9 ends full with min ratio {family_min:.3}"
        ),
    )
}

/// 4. Thresholds against a log-domain re-derivation and two case identities.
fn threshold_formulas() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let f_min = r.random_range(0.05..=1.0);
        let f_max = f_min * r.random_range(1.0..=5.0);
        let eta_d = r.random_range(1.0..=1.5);
        let eta_e_min = r.random_range(0.5..=1.0);
        let eta_e_max = r.random_range(eta_e_min..=1.0);
        let got = compute_thresholds(f_min, f_max, eta_d, eta_e_min, eta_e_max).unwrap();
        let kappa = if eta_e_max * eta_d >= 1.0 { 1.0 } else { 1.0 / (eta_e_max * eta_d) };
        let theta_cs = (0.5 * (f_max.ln() + f_min.ln() - kappa.ln() - eta_d.ln() - eta_e_max.ln())).exp();
        let theta_ap = (theta_cs.ln() + eta_d.ln() + eta_e_min.ln()).exp();
        // worst case of running CS at a slot where the optimum pays the AP threshold
        let cr_cs = f_max / theta_ap;
        // worst case of running EV on engine charge bought at the CS threshold
        let cr_ev = theta_cs * kappa * eta_e_max / (f_min * eta_e_min);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        for e in [
            rel(got.kappa, kappa),
            rel(got.thresholds.theta_cs, theta_cs),
            rel(got.thresholds.theta_ap, theta_ap),
            rel(got.competitive_ratio, cr_cs),
            rel(got.competitive_ratio, cr_ev),
        ] {
            worst = worst.max(e);
        }
    }
    outcome(worst <= 1e-12, format!("20 draws, worst relative error {worst:.2e}"))
}

/// 5. Route DP against exhaustive search, with the stop structure.
fn ppdm_exactness() -> Outcome {
    let mut r = rng(5);
    let mut compared = 0;
    let mut mismatches = 0;
    let mut structure = 0;
    let mut feasible = 0;
    let mut drawn = 0;
    while compared < 50 && drawn < 1000 {
        drawn += 1;
        let n = r.random_range(3..=5);
        let net = random_network(&mut r, n, false);
        let o = PlanOptions { levels: r.random_range(3..=5), edge_grid: 101 };
        let bf = match brute_force_ppdm(&net, &o) {
            Err(Error::InstanceTooLarge(_)) => continue,
            other => other,
        };
        compared += 1;
        match (solve_ppdm_dp(&net, &o), bf) {
            (Ok(a), Ok(b)) => {
                feasible += 1;
                if (a.total_cost - b.total_cost).abs() > 1e-9 {
                    mismatches += 1;
                }
                if stop_structure_violation(&net, &a).is_some() || a.check(&net, true).is_err() {
                    structure += 1;
                }
            }
            (Err(Error::Infeasible), Err(Error::Infeasible)) => {}
            _ => mismatches += 1,
        }
    }
    outcome(
        compared == 50 && mismatches == 0 && structure == 0,
        format!(
            "{compared} networks ({feasible} feasible), cost mismatches {mismatches}, structure violations {structure}"
        ),
    )
}

/// 6. Uniform-price shortest path against per-path enumeration.
fn uppdm_reduction() -> Outcome {
    let mut r = rng(6);
    let mut mismatches = 0;
    let mut feasible = 0;
    for case in 0..50 {
        let net = random_network(&mut r, 3 + case % 4, true);
        let o = PlanOptions { levels: 5 + 2 * (case % 3), edge_grid: 101 };
        let want = path_enumeration(&net, &o);
        match solve_uppdm(&net, &o) {
            Ok(plan) => {
                feasible += 1;
                if (plan.total_fuel - want).abs() > 1e-9 {
                    mismatches += 1;
                }
            }
            Err(Error::Infeasible) if want.is_infinite() => {}
            Err(_) => mismatches += 1,
        }
    }
    outcome(mismatches == 0, format!("50 networks ({feasible} feasible), mismatches {mismatches}"))
}

/// 7. Noiseless traces give back the generating coefficients; road-load oracle.
fn calibration_recovery() -> Outcome {
    let params = VehicleParams::volt();
    let lambda = [2e-5, 1e-3, 0.01, 0.02, 0.004, 0.006, 1.05];
    let mu = [-1e-5, 2e-3, 0.0, 0.0, -0.01, 0.03, 0.6];
    let nu = [1e-5, -5e-4, 0.002, 0.01, 0.001, 0.004, 0.8];
    let gamma = (2e-9, 6e-5, 0.15);
    let dot = |c: &[f64; 7], s: &ProfileStep| features(s).iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
    let mut r = rng(7);
    let mut records = Vec::new();
    let mut prev = 15.0f64;
    for k in 0..600 {
        let v = (prev + r.random_range(-3.0..=2.5)).clamp(3.0, 35.0);
        let step = ProfileStep { speed_m_s: v, grade_rad: 0.0, prev_speed_m_s: if k == 0 { v } else { prev } };
        let load = drivetrain_power(&step, &params).unwrap().power;
        let (mut batt, mut q, mut charge) = (0.0, 0.0, 0.0);
        if load > 0.0 {
            batt = dot(&lambda, &step) * load;
            if r.random_bool(0.5) {
                let u = r.random_range(500.0..=8000.0);
                q = load + u;
                charge = dot(&nu, &step) * u;
            }
        } else if load < 0.0 {
            batt = dot(&mu, &step) * load;
        }
        let fuel = if q > 0.0 { gamma.0 * q * q + gamma.1 * q + gamma.2 } else { 0.0 };
        records.push(ObdRecord {
            t: k as f64,
            speed: v,
            batt_power: batt,
            engine_charge_power: charge,
            engine_output: q,
            fuel_rate: fuel,
        });
        prev = v;
    }
    let report = calibrate(&ObdTrace { records }, &params).unwrap();
    let mut worst = 0.0f64;
    let mut compare = |got: &[f64], want: &[f64]| {
        for (g, w) in got.iter().zip(want) {
            let e = if *w == 0.0 { g.abs() } else { (g - w).abs() / w.abs() };
            worst = worst.max(e);
        }
    };
    let fits = [(&report.discharge, lambda), (&report.regen, mu), (&report.engine_charge, nu)];
    for (fit, want) in fits {
        match fit {
            Ok(f) => compare(&f.coeffs, &want),
            Err(e) => return outcome(false, format!("fit failed: {e}")),
        }
    }
    match &report.fuel_curve {
        Ok(c) => compare(&[c.gamma2, c.gamma1, c.gamma0], &[gamma.0, gamma.1, gamma.2]),
        Err(e) => return outcome(false, format!("fuel fit failed: {e}")),
    }
    let step = ProfileStep { speed_m_s: 20.0, grade_rad: 0.0, prev_speed_m_s: 20.0 };
    let watts = drivetrain_power(&step, &params).unwrap().power;
    outcome(
        worst <= 1e-6 && (watts - 6400.2).abs() <= 0.1,
        format!("worst relative coefficient error {worst:.2e}; road load at 20 m/s {watts:.3} W"),
    )
}

/// 8. Sweep trends and the highway/city route switch.
fn trends() -> Outcome {
    let trip = load_instance(data("sample_trip.json")).unwrap();
    let b0s: Vec<f64> = (0..=10).map(f64::from).collect();
    let rows =
        sweep(&trip, &b0s, &[SweepSolver::Opt, SweepSolver::CsAlways], 1001, &Tolerances::default(), None).unwrap();
    let cost = |name: &str| -> Vec<f64> {
        rows.iter().filter(|r| r.solver == name).map(|r| r.fuel_cost.unwrap_or(f64::NAN)).collect()
    };
    let (opt, cs) = (cost("opt"), cost("cs_always"));
    let nonincreasing = opt.windows(2).all(|w| w[1] <= w[0]);
    let benchmark_above = opt.iter().zip(&cs).all(|(o, c)| c >= o);

    let net = load_network(data("highway_city.json")).unwrap();
    let o = PlanOptions { levels: 11, edge_grid: 201 };
    let routes: Vec<Vec<String>> = b0s
        .iter()
        .map(|&b| {
            let mut n = net.clone();
            n.b0 = b;
            solve_ppdm_dp(&n, &o).map(|p| p.route()).unwrap_or_default()
        })
        .collect();
    let highway = |r: &Vec<String>| r.iter().any(|v| v == "hw");
    let city = |r: &Vec<String>| r.iter().any(|v| v == "city");
    let switches = routes.windows(2).filter(|w| w[0] != w[1]).count();
    let switch_at = routes.iter().position(&city).map(|k| b0s[k]);
    let route_ok = highway(&routes[0]) && city(&routes[10]) && switches == 1;
    outcome(
        nonincreasing && benchmark_above && route_ok,
        format!(
            "opt nonincreasing {nonincreasing}, CS-always >= opt {benchmark_above}, \
             route switches to city at B0 = {switch_at:?} ({switches} switch)"
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("drive-mode DP matches exhaustive search", dmop_oracle),
        ("relaxation sandwich", cdmop_sandwich),
        ("online competitive ratio", competitive_ratio),
        ("threshold formulas", threshold_formulas),
        ("route DP matches exhaustive search", ppdm_exactness),
        ("uniform-price shortest path", uppdm_reduction),
        ("calibration recovery", calibration_recovery),
        ("fuel and route trends", trends),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| outcome(false, "panicked"));
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {} [{:.2?}]",
            k + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
