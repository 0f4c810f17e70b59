use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use phevplan_core::calibrate::{calibrate, load_trace};
use phevplan_core::dmop::{replay, solve_dmop_dp, ModeSchedule, SocGrid, TripInstance};
use phevplan_core::io::{load_instance, load_network};
use phevplan_core::model::{Mode, SlotCoeffs, SlotInput, VehicleParams};
use phevplan_core::online::{run_online, OnlineRunner};
use phevplan_core::pathplan::{solve_cppdm, solve_ppdm_dp, solve_uppdm, PlanOptions, RoadNetwork, TripPlan};
use phevplan_core::relax::{approximate, Tolerances};
use phevplan_core::sweep::{b0_values, sweep, write_sweep_csv, SweepSolver};
use phevplan_core::Error;

#[derive(Parser)]
#[command(name = "phevplan", version, about = "Drive-mode optimization and route planning for plug-in hybrids")]
struct Cli {
    /// SoC grid size of the drive-mode DP
    #[arg(long, global = true, default_value_t = 1001, value_parser = grid_size)]
    grid: usize,
    /// feasibility tolerance of the convex solver
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// output format (json, or csv for sweep)
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// write the result here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// refuelling stop budget, overriding the network file
    #[arg(long, global = true)]
    delta: Option<usize>,
    /// minimum final SoC, overriding the instance file
    #[arg(long = "terminal-soc", global = true)]
    terminal_soc: Option<f64>,
    /// SoC levels per road node for planning
    #[arg(long, global = true, default_value_t = PlanOptions::default().levels, value_parser = grid_size)]
    levels: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a fixed mode sequence
    Simulate {
        instance: PathBuf,
        /// comma separated modes (EV, CE, CS, AP); a single mode is used for every slot
        #[arg(long, default_value = "CS")]
        modes: String,
    },
    /// Optimal mode schedule by dynamic programming
    Optimize { instance: PathBuf },
    /// Convex relaxation plus rounding
    Approx { instance: PathBuf },
    /// Threshold online policy
    Online {
        instance: PathBuf,
        /// read one slot per line from stdin and print one decision per line
        #[arg(long)]
        stream: bool,
    },
    /// Route plan: shortest path for uniform prices, exact DP otherwise
    Plan { network: PathBuf },
    /// Exact route plan by dynamic programming
    PlanExact { network: PathBuf },
    /// Route plan from the convex relaxation
    PlanApprox { network: PathBuf },
    /// Fit efficiencies and the fuel curve from a drive trace CSV
    Calibrate {
        trace: PathBuf,
        /// vehicle parameters JSON (defaults to the built-in sedan)
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Fuel cost over a range of initial SoC values (CSV by default)
    Sweep {
        instance: PathBuf,
        /// lowest initial SoC [default: B_lo]
        #[arg(long = "b0-min")]
        b0_min: Option<f64>,
        /// highest initial SoC [default: B_hi]
        #[arg(long = "b0-max")]
        b0_max: Option<f64>,
        /// number of evenly spaced initial SoC values
        #[arg(long, default_value_t = 11)]
        count: usize,
        /// comma separated: opt, apx, online, cs_always
        #[arg(long, default_value = "opt,apx,online,cs_always")]
        solvers: String,
    },
}

fn grid_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        Ok(_) => Err("must be at least 2".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Serialize)]
struct ModeRatios {
    ev: f64,
    ce: f64,
    cs: f64,
    ap: f64,
}

impl ModeRatios {
    fn of(s: &ModeSchedule) -> Self {
        let [ev, ce, cs, ap] = s.mode_ratios();
        ModeRatios { ev, ce, cs, ap }
    }
}

#[derive(Serialize)]
struct TripResult<'a> {
    status: &'static str,
    solver: &'static str,
    total_fuel: f64,
    final_soc: f64,
    mode_ratios: ModeRatios,
    #[serde(skip_serializing_if = "Option::is_none")]
    relaxation_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_bound: Option<f64>,
    schedule: &'a ModeSchedule,
}

#[derive(Serialize)]
struct PlanResult<'a> {
    status: &'static str,
    solver: &'static str,
    route: Vec<String>,
    total_cost: f64,
    total_fuel: f64,
    stop_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_bound: Option<f64>,
    plan: &'a TripPlan,
}

/// One streamed slot; missing coefficients fall back to the instance's first slot.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamSlot {
    #[serde(rename = "P_plus")]
    p_plus: f64,
    #[serde(rename = "P_minus", default)]
    p_minus: f64,
    eta_r: Option<f64>,
    eta_d: Option<f64>,
    eta_e: Option<f64>,
    #[serde(rename = "C")]
    c: Option<f64>,
    beta: Option<f64>,
}

impl StreamSlot {
    fn input(&self, base: &SlotCoeffs) -> SlotInput {
        let coeffs = SlotCoeffs {
            eta_r: self.eta_r.unwrap_or(base.eta_r),
            eta_d: self.eta_d.unwrap_or(base.eta_d),
            eta_e: self.eta_e.unwrap_or(base.eta_e),
            engine_charge_cap: self.c.unwrap_or(base.engine_charge_cap),
            ap_split: self.beta.unwrap_or(base.ap_split),
        };
        SlotInput::new(self.p_plus, self.p_minus, coeffs)
    }
}

struct Ctx {
    cli: Cli,
}

impl Ctx {
    fn tolerances(&self) -> Tolerances {
        let mut t = Tolerances::default();
        if let Some(x) = self.cli.tol {
            t.feasibility = x;
        }
        t
    }

    fn plan_options(&self) -> PlanOptions {
        PlanOptions { levels: self.cli.levels, edge_grid: self.cli.grid }
    }

    fn instance(&self, path: &Path) -> Result<TripInstance, Error> {
        let mut inst = load_instance(path)?;
        if let Some(b) = self.cli.terminal_soc {
            inst.terminal_soc = Some(b);
            inst.validate()?;
        }
        Ok(inst)
    }

    fn network(&self, path: &Path) -> Result<RoadNetwork, Error> {
        let mut net = load_network(path)?;
        if let Some(d) = self.cli.delta {
            net.stop_budget = Some(d);
            net.validate()?;
        }
        Ok(net)
    }

    fn writer(&self) -> Result<Box<dyn Write>, Error> {
        Ok(match &self.cli.out {
            Some(p) => {
                Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?))
            }
            None => Box::new(io::stdout().lock()),
        })
    }

    fn emit_json<T: Serialize>(&self, value: &T) -> Result<(), Error> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn emit_csv(&self, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), Error> {
        let mut w = csv::Writer::from_writer(self.writer()?);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    fn trip_result(&self, r: TripResult) -> Result<(), Error> {
        let [ev, ce, cs, ap] = r.schedule.mode_ratios().map(|x| 100.0 * x);
        eprintln!("solver: {}", r.solver);
        eprintln!("total fuel: {:.6}", r.total_fuel);
        eprintln!("final SoC: {:.6}", r.final_soc);
        eprintln!("mode ratios: EV {ev:.1}%, CE {ce:.1}%, CS {cs:.1}%, AP {ap:.1}%");
        if let Some(v) = r.relaxation_value {
            eprintln!("relaxation value: {v:.6}");
        }
        match self.cli.format.unwrap_or(Format::Json) {
            Format::Json => self.emit_json(&r),
            Format::Csv => self.emit_csv(
                &["slot", "mode", "soc_before", "next_soc", "engine_output", "fuel_used"],
                r.schedule
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        vec![
                            k.to_string(),
                            mode_name(t.mode).into(),
                            t.soc_before.to_string(),
                            t.next_soc.to_string(),
                            t.engine_output.to_string(),
                            t.fuel_used.to_string(),
                        ]
                    })
                    .collect(),
            ),
        }
    }

    fn schedule(&self, solver: &'static str, s: &ModeSchedule) -> Result<(), Error> {
        self.trip_result(TripResult {
            status: "ok",
            solver,
            total_fuel: s.total_fuel,
            final_soc: s.final_soc,
            mode_ratios: ModeRatios::of(s),
            relaxation_value: None,
            lower_bound: None,
            schedule: s,
        })
    }

    fn plan_result(&self, r: PlanResult) -> Result<(), Error> {
        eprintln!("solver: {}", r.solver);
        eprintln!("route: {}", r.route.join(" -> "));
        eprintln!("total cost: {:.6}", r.total_cost);
        eprintln!("total fuel: {:.6}", r.total_fuel);
        eprintln!("refuelling stops: {}", r.stop_count);
        if let Some(lb) = r.lower_bound {
            eprintln!("relaxation bound: {lb:.6}");
        }
        match self.cli.format.unwrap_or(Format::Json) {
            Format::Json => self.emit_json(&r),
            Format::Csv => self.emit_csv(
                &["node", "soc_arrive", "charge", "soc_depart", "fuel_arrive", "refill", "fuel_depart", "stop"],
                r.plan
                    .visits
                    .iter()
                    .map(|v| {
                        vec![
                            v.node.clone(),
                            v.soc_arrive.to_string(),
                            v.charge.to_string(),
                            v.soc_depart.to_string(),
                            v.fuel_arrive.to_string(),
                            v.refill.to_string(),
                            v.fuel_depart.to_string(),
                            v.stop.to_string(),
                        ]
                    })
                    .collect(),
            ),
        }
    }

    fn plan(&self, solver: &'static str, p: &TripPlan, lower_bound: Option<f64>) -> Result<(), Error> {
        self.plan_result(PlanResult {
            status: "ok",
            solver,
            route: p.route(),
            total_cost: p.total_cost,
            total_fuel: p.total_fuel,
            stop_count: p.stop_count,
            lower_bound,
            plan: p,
        })
    }

    fn stream_online(&self, path: &Path) -> Result<(), Error> {
        let inst = self.instance(path)?;
        let base = inst.slots[0].coeffs;
        let mut runner = OnlineRunner::for_instance(&inst, None);
        let mut out = self.writer()?;
        let mut fuel = 0.0;
        let mut slots = 0usize;
        for (k, line) in io::stdin().lock().lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let slot: StreamSlot =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: k + 1, message: e.to_string() })?;
            let d = runner.step(&slot.input(&base))?;
            fuel += d.transition.fuel_used;
            slots += 1;
            serde_json::to_writer(&mut out, &d).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(out)?;
            out.flush()?;
        }
        eprintln!("slots: {slots}");
        eprintln!("total fuel: {fuel:.6}");
        eprintln!("final SoC: {:.6}", runner.state.soc);
        Ok(())
    }

    fn run(&self) -> Result<(), Error> {
        let started = Instant::now();
        match &self.cli.command {
            Command::Simulate { instance, modes } => {
                let inst = self.instance(instance)?;
                let modes = parse_modes(modes, inst.horizon())?;
                let s = replay(&inst, &modes)?;
                if s.total_fuel > inst.g0 {
                    return Err(Error::Infeasible);
                }
                self.schedule("simulate", &s)?;
            }
            Command::Optimize { instance } => {
                let inst = self.instance(instance)?;
                let s = solve_dmop_dp(&inst, &SocGrid::new(self.cli.grid, inst.bounds)?)?;
                self.schedule("opt", &s)?;
            }
            Command::Approx { instance } => {
                let inst = self.instance(instance)?;
                let o = approximate(&inst, &self.tolerances())?;
                self.trip_result(TripResult {
                    status: "ok",
                    solver: "apx",
                    total_fuel: o.schedule.total_fuel,
                    final_soc: o.schedule.final_soc,
                    mode_ratios: ModeRatios::of(&o.schedule),
                    relaxation_value: Some(o.value),
                    lower_bound: Some(o.lower_bound),
                    schedule: &o.schedule,
                })?;
            }
            Command::Online { instance, stream: true } => self.stream_online(instance)?,
            Command::Online { instance, stream: false } => {
                let inst = self.instance(instance)?;
                let (s, _) = run_online(&inst, None)?;
                self.schedule("online", &s)?;
            }
            Command::Plan { network } => {
                let net = self.network(network)?;
                if net.uniform_prices() {
                    self.plan("uniform-shortest-path", &solve_uppdm(&net, &self.plan_options())?, None)?;
                } else {
                    self.plan("exact-dp", &solve_ppdm_dp(&net, &self.plan_options())?, None)?;
                }
            }
            Command::PlanExact { network } => {
                let net = self.network(network)?;
                self.plan("exact-dp", &solve_ppdm_dp(&net, &self.plan_options())?, None)?;
            }
            Command::PlanApprox { network } => {
                let net = self.network(network)?;
                let o = solve_cppdm(&net, &self.plan_options(), &self.tolerances())?;
                self.plan("relax-round", &o.plan, Some(o.lower_bound))?;
            }
            Command::Calibrate { trace, params } => {
                let params = match params {
                    Some(p) => {
                        let text =
                            std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                        serde_json::from_str::<VehicleParams>(&text)?
                    }
                    None => VehicleParams::volt(),
                };
                let report = calibrate(&load_trace(trace)?, &params)?;
                let show = |name: &str, r: &Result<_, String>| match r {
                    Ok(_) => eprintln!("{name}: fitted"),
                    Err(e) => eprintln!("{name}: {e}"),
                };
                show("discharge", &report.discharge);
                show("regen", &report.regen);
                show("engine charge", &report.engine_charge);
                match &report.fuel_curve {
                    Ok(c) => eprintln!("fuel curve: {} q^2 + {} q + {}", c.gamma2, c.gamma1, c.gamma0),
                    Err(e) => eprintln!("fuel curve: {e}"),
                }
                if self.cli.format == Some(Format::Csv) {
                    return Err(Error::invalid("calibrate only writes json"));
                }
                self.emit_json(&report)?;
            }
            Command::Sweep { instance, b0_min, b0_max, count, solvers } => {
                let inst = self.instance(instance)?;
                let solvers =
                    solvers.split(',').map(|s| s.trim().parse::<SweepSolver>()).collect::<Result<Vec<_>, _>>()?;
                let b0s = b0_values(b0_min.unwrap_or(inst.bounds.lo), b0_max.unwrap_or(inst.bounds.hi), *count);
                let threads = match std::env::var("PHEVPLAN_THREADS") {
                    Ok(v) => Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::invalid(format!("PHEVPLAN_THREADS='{v}' is not a number")))?,
                    ),
                    Err(_) => None,
                };
                let rows = sweep(&inst, &b0s, &solvers, self.cli.grid, &self.tolerances(), threads)?;
                let failed = rows.iter().filter(|r| r.status != "ok").count();
                eprintln!("rows: {} ({failed} without a schedule)", rows.len());
                match self.cli.format.unwrap_or(Format::Csv) {
                    Format::Json => self.emit_json(&rows)?,
                    Format::Csv => write_sweep_csv(&rows, self.writer()?)?,
                }
            }
        }
        log::info!("finished in {:.3?}", started.elapsed());
        Ok(())
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Ev => "EV",
        Mode::Ce => "CE",
        Mode::Cs => "CS",
        Mode::Ap => "AP",
    }
}

fn parse_modes(list: &str, horizon: usize) -> Result<Vec<Mode>, Error> {
    let modes = list
        .split(',')
        .map(|s| match s.trim().to_ascii_uppercase().as_str() {
            "EV" => Ok(Mode::Ev),
            "CE" => Ok(Mode::Ce),
            "CS" => Ok(Mode::Cs),
            "AP" => Ok(Mode::Ap),
            other => Err(Error::invalid(format!("--modes: unknown mode '{other}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(if modes.len() == 1 { vec![modes[0]; horizon] } else { modes })
}

fn is_infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::Infeasible | Error::NoFeasibleMode { .. } | Error::FuelExhausted { .. } | Error::EvInfeasible { .. }
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // usage errors are input errors; 2 is reserved for infeasibility
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let ctx = Ctx { cli };
    match ctx.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_infeasible(&e) => {
            if !matches!(e, Error::Infeasible) {
                eprintln!("{e}");
            }
            eprintln!("INFEASIBLE");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
