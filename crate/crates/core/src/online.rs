//! Threshold-based online mode selection.
//!
//! Each slot is decided from the current state and that slot's inputs only.
//! Modes are tried in the order EV, AP, CS, CE; AP and CS are accepted when
//! their normalized fuel cost is at or below a threshold (or when the cheaper
//! fallbacks are missing from the vehicle).

use serde::{Deserialize, Serialize};

use crate::dmop::{schedule_from, ModeSchedule, TripInstance};
use crate::error::{Error, Result};
use crate::model::{
    ev_feasible, regen_power, step_mode, usable_discharge, FuelCurve, Mode, ModeSet, SlotInput, SocBounds, Transition,
    VehicleState,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub theta_ap: f64,
    pub theta_cs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub thresholds: Thresholds,
    pub kappa: f64,
    pub competitive_ratio: f64,
}

pub fn compute_thresholds(
    f_min: f64,
    f_max: f64,
    eta_d_min: f64,
    eta_e_min: f64,
    eta_e_max: f64,
) -> Result<ThresholdReport> {
    let all = [f_min, f_max, eta_d_min, eta_e_min, eta_e_max];
    if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain(format!("threshold inputs must be positive, got {all:?}")));
    }
    if f_min > f_max {
        return Err(Error::Domain(format!("f_min = {f_min} exceeds f_max = {f_max}")));
    }
    if eta_e_min > eta_e_max {
        return Err(Error::Domain("eta_e_min exceeds eta_e_max".into()));
    }
    let kappa = (1.0 / (eta_e_max * eta_d_min)).max(1.0);
    let theta_cs = (f_max * f_min / (kappa * eta_d_min * eta_e_max)).sqrt();
    let theta_ap = theta_cs * eta_d_min * eta_e_min;
    let competitive_ratio = (kappa * f_max * eta_e_max / (f_min * eta_d_min)).sqrt() / eta_e_min;
    Ok(ThresholdReport { thresholds: Thresholds { theta_ap, theta_cs }, kappa, competitive_ratio })
}

/// Running extrema of the per-unit fuel cost.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub f_min_hat: f64,
    pub f_max_hat: f64,
    pub samples: usize,
}

impl BoundEstimate {
    pub fn observe(self, f: f64) -> Self {
        if self.samples == 0 {
            BoundEstimate { f_min_hat: f, f_max_hat: f, samples: 1 }
        } else {
            BoundEstimate {
                f_min_hat: self.f_min_hat.min(f),
                f_max_hat: self.f_max_hat.max(f),
                samples: self.samples + 1,
            }
        }
    }
}

/// Folds `f(q)` into the estimate; `q <= 0` carries no information and is skipped.
pub fn update_bounds(est: BoundEstimate, q: f64, curve: &FuelCurve) -> BoundEstimate {
    match curve.per_unit(q) {
        Ok(f) => est.observe(f),
        Err(_) => est,
    }
}

/// Tentative controls computed before a mode is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidates {
    pub r: f64,
    pub s: f64,
    pub u: f64,
}

pub fn candidates(soc: f64, slot: &SlotInput, bounds: SocBounds) -> Candidates {
    let c = &slot.coeffs;
    let r = regen_power(soc, slot, bounds);
    let s = (c.ap_split * slot.p_pos).min(usable_discharge(soc, slot, bounds));
    let u = c.engine_charge_cap.min((bounds.hi - soc - c.eta_r * r).max(0.0) / c.eta_e);
    Candidates { r, s, u }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Mode chosen for one slot.
pub fn select_mode(
    soc: f64,
    slot: &SlotInput,
    th: &Thresholds,
    modes: &ModeSet,
    bounds: SocBounds,
    curve: &FuelCurve,
) -> Option<Mode> {
    let cand = candidates(soc, slot, bounds);
    let p = slot.p_pos;
    if modes.ev && ev_feasible(soc, slot, bounds) {
        return Some(Mode::Ev);
    }
    let ap_cost = ratio(curve.fuel(p - cand.s), p - cand.s);
    if modes.ap && (ap_cost <= th.theta_ap || !(modes.cs && modes.ce)) {
        return Some(Mode::Ap);
    }
    let cs_cost = ratio(curve.fuel(p + cand.u), p + slot.coeffs.eta_e * cand.u);
    if modes.cs && (cs_cost <= th.theta_cs || !modes.ce) {
        return Some(Mode::Cs);
    }
    modes.ce.then_some(Mode::Ce)
}

pub fn online_step(
    state: VehicleState,
    slot: &SlotInput,
    th: &Thresholds,
    modes: &ModeSet,
    bounds: SocBounds,
    curve: &FuelCurve,
    t: usize,
) -> Result<Transition> {
    let mode = select_mode(state.soc, slot, th, modes, bounds, curve).ok_or(Error::NoFeasibleMode { slot: t })?;
    step_mode(state, mode, slot, bounds, curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineDecision {
    pub slot: usize,
    pub thresholds: Thresholds,
    pub transition: Transition,
    pub fuel_left: f64,
}

/// Sequential driver that owns the vehicle state and, unless thresholds are
/// fixed up front, the running estimates they are derived from.
#[derive(Debug, Clone)]
pub struct OnlineRunner {
    pub state: VehicleState,
    pub modes: ModeSet,
    pub bounds: SocBounds,
    pub curve: FuelCurve,
    fixed: Option<Thresholds>,
    estimate: BoundEstimate,
    eta_d_min: f64,
    eta_e_min: f64,
    eta_e_max: f64,
    t: usize,
}

impl OnlineRunner {
    pub fn new(
        state: VehicleState,
        modes: ModeSet,
        bounds: SocBounds,
        curve: FuelCurve,
        fixed: Option<Thresholds>,
    ) -> Self {
        OnlineRunner {
            state,
            modes,
            bounds,
            curve,
            fixed,
            estimate: BoundEstimate::default(),
            eta_d_min: f64::INFINITY,
            eta_e_min: f64::INFINITY,
            eta_e_max: 0.0,
            t: 0,
        }
    }

    pub fn for_instance(instance: &TripInstance, fixed: Option<Thresholds>) -> Self {
        OnlineRunner::new(
            VehicleState { soc: instance.b0, fuel: instance.g0 },
            instance.modes,
            instance.bounds,
            instance.curve,
            fixed,
        )
    }

    pub fn estimate(&self) -> BoundEstimate {
        self.estimate
    }

    fn current_thresholds(&mut self, slot: &SlotInput) -> Thresholds {
        if let Some(th) = self.fixed {
            return th;
        }
        let c = &slot.coeffs;
        self.eta_d_min = self.eta_d_min.min(c.eta_d);
        self.eta_e_min = self.eta_e_min.min(c.eta_e);
        self.eta_e_max = self.eta_e_max.max(c.eta_e);
        let mut est = self.estimate;
        if est.samples == 0 {
            // nothing burned yet: seed with this slot's engine demand
            let cand = candidates(self.state.soc, slot, self.bounds);
            let q = if slot.p_pos > 0.0 { slot.p_pos } else { cand.u };
            est = update_bounds(est, q, &self.curve);
        }
        if est.samples == 0 {
            return Thresholds { theta_ap: 0.0, theta_cs: 0.0 };
        }
        compute_thresholds(est.f_min_hat, est.f_max_hat, self.eta_d_min, self.eta_e_min, self.eta_e_max)
            .map(|r| r.thresholds)
            .unwrap_or(Thresholds { theta_ap: 0.0, theta_cs: 0.0 })
    }

    pub fn step(&mut self, slot: &SlotInput) -> Result<OnlineDecision> {
        slot.validate()?;
        let th = self.current_thresholds(slot);
        let tr = online_step(self.state, slot, &th, &self.modes, self.bounds, &self.curve, self.t)?;
        self.estimate = update_bounds(self.estimate, tr.engine_output, &self.curve);
        self.state = VehicleState { soc: tr.next_soc, fuel: self.state.fuel - tr.fuel_used };
        let decision = OnlineDecision { slot: self.t, thresholds: th, transition: tr, fuel_left: self.state.fuel };
        self.t += 1;
        Ok(decision)
    }
}

/// Runs the online policy over a whole trip.
pub fn run_online(instance: &TripInstance, fixed: Option<Thresholds>) -> Result<(ModeSchedule, Vec<OnlineDecision>)> {
    instance.validate()?;
    let mut runner = OnlineRunner::for_instance(instance, fixed);
    let mut decisions = Vec::with_capacity(instance.horizon());
    for slot in &instance.slots {
        decisions.push(runner.step(slot)?);
    }
    let steps = decisions.iter().map(|d| d.transition).collect();
    Ok((schedule_from(instance.b0, steps), decisions))
}

/// Instance-wide extrema for the competitive bound. `f` is taken over engine
/// outputs between the smallest positive load and the largest `P+ + C`; with a
/// zero constant term `f` is increasing and this covers every possible output.
pub fn instance_thresholds(instance: &TripInstance) -> Result<ThresholdReport> {
    let qmax = instance.slots.iter().map(|s| s.max_engine_output()).fold(0.0, f64::max);
    if qmax <= 0.0 {
        return Err(Error::Domain("instance never runs the engine".into()));
    }
    let curve = &instance.curve;
    let (f_min, f_max) = if curve.gamma0 == 0.0 {
        (curve.gamma1, curve.per_unit(qmax)?)
    } else {
        let qlo = instance.slots.iter().map(|s| s.p_pos).filter(|&p| p > 0.0).fold(qmax, f64::min);
        let knee = (curve.gamma0 / curve.gamma2).sqrt().clamp(qlo, qmax);
        let f_max = curve.per_unit(qlo)?.max(curve.per_unit(qmax)?);
        (curve.per_unit(knee)?, f_max)
    };
    let eta_d_min = instance.slots.iter().map(|s| s.coeffs.eta_d).fold(f64::INFINITY, f64::min);
    let eta_e_min = instance.slots.iter().map(|s| s.coeffs.eta_e).fold(f64::INFINITY, f64::min);
    let eta_e_max = instance.slots.iter().map(|s| s.coeffs.eta_e).fold(0.0, f64::max);
    compute_thresholds(f_min, f_max, eta_d_min, eta_e_min, eta_e_max)
}
