use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use phevplan_core::dmop::{solve_dmop_dp, ModeSchedule, SocGrid};
use phevplan_core::io::load_instance;
use phevplan_core::online::{run_online, OnlineDecision};
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phevplan")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the sample trip with `edit` applied to a temp file.
fn edited_trip(dir: &tempfile::TempDir, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(data("sample_trip.json")).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.path().join("trip.json");
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

#[test]
fn optimize_sample_instance() {
    let out = run(&["optimize", data("sample_trip.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["status"], "ok");
    assert!(v["total_fuel"].as_f64().unwrap() > 0.0);
    assert_eq!(v["schedule"]["steps"].as_array().unwrap().len(), 10);
    let err = stderr(&out);
    assert!(err.contains("total fuel") && err.contains("mode ratios"), "{err}");
}

#[test]
fn unreachable_demand_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited_trip(&dir, |v| {
        v["G0"] = 0.0.into();
        v["B0"] = 0.0.into();
    });
    let out = run(&["optimize", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("INFEASIBLE"));
}

#[test]
fn input_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = edited_trip(&dir, |v| v["eta_d"] = serde_json::json!([1.1, 1.1]));
    let out = run(&["optimize", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("eta_d"), "{}", stderr(&out));

    let p = edited_trip(&dir, |v| {
        v.as_object_mut().unwrap().remove("B_hi");
    });
    let out = run(&["optimize", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("B_hi"), "{}", stderr(&out));

    let out = run(&["optimize", "/nonexistent/trip.json"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["--grid", "1", "optimize", data("sample_trip.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--grid"), "{}", stderr(&out));
}

#[test]
fn approx_plan_costs_at_least_exact() {
    let net = data("tiny_network.json");
    let exact = run(&["plan-exact", net.to_str().unwrap()]);
    let approx = run(&["plan-approx", net.to_str().unwrap()]);
    assert_eq!(exact.status.code(), Some(0), "{}", stderr(&exact));
    assert_eq!(approx.status.code(), Some(0), "{}", stderr(&approx));
    let e = stdout_json(&exact)["total_cost"].as_f64().unwrap();
    let a = stdout_json(&approx)["total_cost"].as_f64().unwrap();
    assert!(a >= e - 1e-9, "approx {a} exact {e}");
    assert!(stderr(&exact).contains("route: s ->"));
}

#[test]
fn stop_budget_flag_overrides_network() {
    let net = data("tiny_network.json");
    let out = run(&["--delta", "0", "plan-exact", net.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("delta"));
    let free = stdout_json(&run(&["plan-exact", net.to_str().unwrap()]));
    let one = run(&["--delta", "1", "plan-exact", net.to_str().unwrap()]);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let one = stdout_json(&one);
    assert_eq!(one["stop_count"], 1);
    assert!(one["total_cost"].as_f64().unwrap() >= free["total_cost"].as_f64().unwrap());
}

#[test]
fn terminal_soc_flag_applies() {
    let p = data("sample_trip.json");
    let out = run(&["--terminal-soc", "8", "optimize", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout_json(&out)["final_soc"].as_f64().unwrap() >= 8.0 - 1e-9);
}

#[test]
fn result_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.json");
    let trip = data("sample_trip.json");
    let out = run(&["--grid", "201", "--out", path.to_str().unwrap(), "optimize", trip.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let read: ModeSchedule = serde_json::from_value(v["schedule"].clone()).unwrap();
    let inst = load_instance(&trip).unwrap();
    let direct = solve_dmop_dp(&inst, &SocGrid::new(201, inst.bounds).unwrap()).unwrap();
    assert_eq!(read.total_fuel.to_bits(), direct.total_fuel.to_bits());
    for (a, b) in read.steps.iter().zip(&direct.steps) {
        assert_eq!(a.mode, b.mode);
        for (x, y) in [(a.next_soc, b.next_soc), (a.fuel_used, b.fuel_used), (a.engine_output, b.engine_output)] {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    assert_eq!(serde_json::to_string(&read).unwrap(), serde_json::to_string(&direct).unwrap());
}

#[test]
fn streaming_online_matches_batch() {
    let trip = data("sample_trip.json");
    let inst = load_instance(&trip).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_phevplan"))
        .args(["online", "--stream", trip.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        for s in &inst.slots {
            let c = &s.coeffs;
            let line = serde_json::json!({
                "P_plus": s.p_pos, "P_minus": s.p_neg, "eta_r": c.eta_r, "eta_d": c.eta_d,
                "eta_e": c.eta_e, "C": c.engine_charge_cap, "beta": c.ap_split,
            });
            writeln!(stdin, "{line}").unwrap();
        }
    }
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let streamed: Vec<OnlineDecision> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let (_, batch) = run_online(&inst, None).unwrap();
    assert_eq!(streamed, batch);
}

#[test]
fn stream_parse_errors_name_the_line() {
    let trip = data("sample_trip.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_phevplan"))
        .args(["online", "--stream", trip.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"{\"P_plus\": 1.0}\n{\"P_pluss\": 1.0}\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 2") && err.contains("P_pluss"), "{err}");
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}

#[test]
fn sweep_writes_one_row_per_level_and_solver() {
    let out = Command::new(env!("CARGO_BIN_EXE_phevplan"))
        .args(["--grid", "101", "sweep", data("sample_trip.json").to_str().unwrap()])
        .args(["--b0-min", "0", "--b0-max", "10", "--count", "3", "--solvers", "opt,cs_always"])
        .env("PHEVPLAN_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["B0", "solver", "fuel_cost", "ev_ratio", "ce_ratio", "cs_ratio", "ap_ratio", "status"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let cost =
        |solver: &str| -> Vec<f64> { rows.iter().filter(|r| &r[1] == solver).map(|r| r[2].parse().unwrap()).collect() };
    let (opt, cs) = (cost("opt"), cost("cs_always"));
    assert!(opt.windows(2).all(|w| w[1] <= w[0]), "{opt:?}");
    assert!(opt.iter().zip(&cs).all(|(o, c)| c >= o), "{opt:?} {cs:?}");
}

#[test]
fn bad_thread_count_is_an_input_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_phevplan"))
        .args(["sweep", data("sample_trip.json").to_str().unwrap(), "--count", "2"])
        .env("PHEVPLAN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("PHEVPLAN_THREADS"));
}

#[test]
fn csv_schedule_output() {
    let out = run(&["--format", "csv", "simulate", data("sample_trip.json").to_str().unwrap(), "--modes", "CS"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("slot,mode,soc_before,next_soc,engine_output,fuel_used"));
    assert!(lines.all(|l| l.split(',').nth(1) == Some("CS")));
}

#[test]
fn uniform_network_plan_uses_shortest_path() {
    let out = run(&["--levels", "11", "plan", data("highway_city.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = stdout_json(&out);
    assert_eq!(v["solver"], "uniform-shortest-path");
    assert_eq!(v["route"], serde_json::json!(["s", "hw", "d"]));
}

#[test]
fn calibrate_recovers_fuel_curve() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let mut text = String::from("t,speed,batt_power,engine_charge_power,engine_output,fuel_rate\n");
    for k in 0..40 {
        let v = 10.0 + (k % 7) as f64;
        let q = if k % 3 == 0 { 0.0 } else { 2000.0 + 900.0 * (k % 11) as f64 };
        let fuel = if q > 0.0 { 1e-9 * q * q + 2e-4 * q + 0.3 } else { 0.0 };
        text.push_str(&format!("{k},{v},{},0,{q},{fuel}\n", 500.0 + 10.0 * k as f64));
    }
    std::fs::write(&path, text).unwrap();
    let out = run(&["calibrate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let curve = &stdout_json(&out)["fuel_curve"]["Ok"];
    assert!((curve["gamma2"].as_f64().unwrap() - 1e-9).abs() < 1e-15, "{curve}");
    assert!((curve["gamma1"].as_f64().unwrap() - 2e-4).abs() < 1e-10);
    assert!((curve["gamma0"].as_f64().unwrap() - 0.3).abs() < 1e-8);
}
