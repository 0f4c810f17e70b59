//! Python bindings. Instances and networks are passed as JSON text in the same
//! schema as the command-line files; results come back as JSON text.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use phevplan_core::dmop::{solve_dmop_dp, SocGrid};
use phevplan_core::io::{parse_instance, parse_network};
use phevplan_core::model::{self, ProfileStep, VehicleParams};
use phevplan_core::online::{compute_thresholds, run_online};
use phevplan_core::pathplan::{solve_cppdm, solve_ppdm_dp, PlanOptions};
use phevplan_core::relax::{self, Tolerances};
use phevplan_core::Error;

create_exception!(phevplan, InfeasibleError, PyException);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Infeasible => InfeasibleError::new_err("INFEASIBLE"),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_json<T: Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn tolerances(tol: Option<f64>) -> Tolerances {
    let mut t = Tolerances::default();
    if let Some(x) = tol {
        t.feasibility = x;
    }
    t
}

/// Optimal mode schedule by DP; returns the schedule as JSON.
#[pyfunction]
#[pyo3(signature = (instance, grid = 1001))]
fn optimize(instance: &str, grid: usize) -> PyResult<String> {
    let inst = parse_instance(instance).map_err(py_err)?;
    let grid = SocGrid::new(grid, inst.bounds).map_err(py_err)?;
    to_json(&solve_dmop_dp(&inst, &grid).map_err(py_err)?)
}

/// Relaxation plus rounding; returns value, bound, fractions and schedule.
#[pyfunction]
#[pyo3(signature = (instance, tol = None))]
fn approx(instance: &str, tol: Option<f64>) -> PyResult<String> {
    let inst = parse_instance(instance).map_err(py_err)?;
    to_json(&relax::approximate(&inst, &tolerances(tol)).map_err(py_err)?)
}

/// Threshold online policy over the whole trip; returns the schedule.
#[pyfunction]
fn online(instance: &str) -> PyResult<String> {
    let inst = parse_instance(instance).map_err(py_err)?;
    to_json(&run_online(&inst, None).map_err(py_err)?.0)
}

/// Returns `(theta_ap, theta_cs, competitive_ratio)`.
#[pyfunction]
fn thresholds(f_min: f64, f_max: f64, eta_d_min: f64, eta_e_min: f64, eta_e_max: f64) -> PyResult<(f64, f64, f64)> {
    let r = compute_thresholds(f_min, f_max, eta_d_min, eta_e_min, eta_e_max).map_err(py_err)?;
    Ok((r.thresholds.theta_ap, r.thresholds.theta_cs, r.competitive_ratio))
}

/// Road-load power (W) of the built-in sedan.
#[pyfunction]
#[pyo3(signature = (speed, grade = 0.0, prev_speed = None))]
fn drivetrain_power(speed: f64, grade: f64, prev_speed: Option<f64>) -> PyResult<f64> {
    let step = ProfileStep { speed_m_s: speed, grade_rad: grade, prev_speed_m_s: prev_speed.unwrap_or(speed) };
    Ok(model::drivetrain_power(&step, &VehicleParams::volt()).map_err(py_err)?.power)
}

/// Exact route plan; returns the plan as JSON.
#[pyfunction]
#[pyo3(signature = (network, levels = 21, grid = 201))]
fn plan_exact(network: &str, levels: usize, grid: usize) -> PyResult<String> {
    let net = parse_network(network).map_err(py_err)?;
    to_json(&solve_ppdm_dp(&net, &PlanOptions { levels, edge_grid: grid }).map_err(py_err)?)
}

/// Relaxation-based route plan; returns bound, value and plan as JSON.
#[pyfunction]
#[pyo3(signature = (network, levels = 21, grid = 201, tol = None))]
fn plan_approx(network: &str, levels: usize, grid: usize, tol: Option<f64>) -> PyResult<String> {
    let net = parse_network(network).map_err(py_err)?;
    let o = solve_cppdm(&net, &PlanOptions { levels, edge_grid: grid }, &tolerances(tol)).map_err(py_err)?;
    to_json(&o)
}

#[pymodule]
fn phevplan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(approx, m)?)?;
    m.add_function(wrap_pyfunction!(online, m)?)?;
    m.add_function(wrap_pyfunction!(thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(drivetrain_power, m)?)?;
    m.add_function(wrap_pyfunction!(plan_exact, m)?)?;
    m.add_function(wrap_pyfunction!(plan_approx, m)?)?;
    Ok(())
}
