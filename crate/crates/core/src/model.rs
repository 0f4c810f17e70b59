//! Vehicle load, fuel consumption and the one-slot transition of each drive mode.
//!
//! A time slot has unit length, so power and per-slot energy share the same
//! numbers: state of charge is updated directly with power terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack (relative to the SoC span) used when comparing SoC quantities.
pub const SOC_TOL: f64 = 1e-9;

/// Road-load parameters of the vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass_kg: f64,
    #[serde(default = "default_gravity")]
    pub gravity_m_s2: f64,
    pub air_density_kg_m3: f64,
    pub frontal_area_m2: f64,
    pub drag_coeff: f64,
    pub rolling_coeff: f64,
    #[serde(default)]
    pub base_load_w: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl VehicleParams {
    /// Chevrolet Volt (2013) values with no auxiliary load.
    pub fn volt() -> Self {
        VehicleParams {
            mass_kg: 1721.0,
            gravity_m_s2: 9.81,
            air_density_kg_m3: 1.226,
            frontal_area_m2: 2.202,
            drag_coeff: 0.28,
            rolling_coeff: 0.01,
            base_load_w: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("gravity_m_s2", self.gravity_m_s2),
            ("air_density_kg_m3", self.air_density_kg_m3),
            ("frontal_area_m2", self.frontal_area_m2),
            ("drag_coeff", self.drag_coeff),
            ("rolling_coeff", self.rolling_coeff),
            ("base_load_w", self.base_load_w),
        ];
        if !(self.mass_kg > 0.0 && self.mass_kg.is_finite()) {
            return Err(Error::invalid("params.mass_kg must be > 0"));
        }
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("params.{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// One slot of a driving profile. Acceleration is `speed - prev_speed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStep {
    pub speed_m_s: f64,
    pub grade_rad: f64,
    pub prev_speed_m_s: f64,
}

impl ProfileStep {
    pub fn acceleration(&self) -> f64 {
        self.speed_m_s - self.prev_speed_m_s
    }
}

/// Signed drivetrain power and its positive (traction) and negative (braking) parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PowerSplit {
    pub power: f64,
    pub positive: f64,
    pub negative: f64,
}

impl PowerSplit {
    pub fn from_power(power: f64) -> Self {
        PowerSplit { power, positive: power.max(0.0), negative: -power.min(0.0) }
    }
}

/// Drivetrain load for one slot:
/// aerodynamic drag + grade + rolling resistance + inertia + auxiliary load.
pub fn drivetrain_power(step: &ProfileStep, params: &VehicleParams) -> Result<PowerSplit> {
    if !(step.speed_m_s >= 0.0) || !(step.prev_speed_m_s >= 0.0) {
        return Err(Error::invalid("speeds must be non-negative"));
    }
    let v = step.speed_m_s;
    let m = params.mass_kg;
    let g = params.gravity_m_s2;
    let aero = params.air_density_kg_m3 * params.drag_coeff * params.frontal_area_m2 * v.powi(3) / 2.0;
    let grade = m * g * step.grade_rad.sin() * v;
    let rolling = m * g * params.rolling_coeff * v;
    let inertia = m * v * step.acceleration();
    Ok(PowerSplit::from_power(aero + grade + rolling + inertia + params.base_load_w))
}

/// Per-slot efficiency coefficients and engine/motor limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotCoeffs {
    /// regenerative charging efficiency, in (0, 1]
    pub eta_r: f64,
    /// discharging coefficient, >= 1
    pub eta_d: f64,
    /// engine-to-battery charging efficiency, in (0, 1]
    pub eta_e: f64,
    /// max engine power available for charging
    pub engine_charge_cap: f64,
    /// max share of traction the motor supplies in AP mode
    pub ap_split: f64,
}

impl SlotCoeffs {
    pub fn ideal() -> Self {
        SlotCoeffs { eta_r: 1.0, eta_d: 1.0, eta_e: 1.0, engine_charge_cap: 0.0, ap_split: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_r > 0.0 && self.eta_r <= 1.0) {
            return Err(Error::invalid(format!("eta_r = {} not in (0, 1]", self.eta_r)));
        }
        if !(self.eta_d >= 1.0 && self.eta_d.is_finite()) {
            return Err(Error::invalid(format!("eta_d = {} must be >= 1", self.eta_d)));
        }
        if !(self.eta_e > 0.0 && self.eta_e <= 1.0) {
            return Err(Error::invalid(format!("eta_e = {} not in (0, 1]", self.eta_e)));
        }
        if !(self.engine_charge_cap >= 0.0 && self.engine_charge_cap.is_finite()) {
            return Err(Error::invalid("C must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.ap_split) {
            return Err(Error::invalid(format!("beta = {} not in [0, 1]", self.ap_split)));
        }
        Ok(())
    }
}

/// Quadratic fuel map `F(Q) = gamma2*Q^2 + gamma1*Q + gamma0` for `Q > 0`, and `F(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuelCurve {
    pub gamma2: f64,
    pub gamma1: f64,
    pub gamma0: f64,
}

impl FuelCurve {
    pub fn new(gamma2: f64, gamma1: f64, gamma0: f64) -> Result<Self> {
        let curve = FuelCurve { gamma2, gamma1, gamma0 };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma2", self.gamma2), ("gamma1", self.gamma1), ("gamma0", self.gamma0)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("fuel curve {name} = {v} must be finite and >= 0")));
            }
        }
        if self.gamma2 == 0.0 && self.gamma1 == 0.0 {
            return Err(Error::invalid("fuel curve must be strictly increasing"));
        }
        Ok(())
    }

    pub fn fuel(&self, q: f64) -> f64 {
        if q <= 0.0 {
            0.0
        } else {
            (self.gamma2 * q + self.gamma1) * q + self.gamma0
        }
    }

    /// Fuel per unit of engine output, `F(Q)/Q`.
    pub fn per_unit(&self, q: f64) -> Result<f64> {
        if q > 0.0 {
            Ok(self.fuel(q) / q)
        } else {
            Err(Error::Domain(format!("per-unit fuel cost undefined at Q = {q}")))
        }
    }

    /// Derivative of the quadratic branch.
    pub fn slope(&self, q: f64) -> f64 {
        2.0 * self.gamma2 * q.max(0.0) + self.gamma1
    }

    /// Output level where the tangent from the origin touches the quadratic branch.
    fn envelope_knee(&self) -> f64 {
        if self.gamma0 == 0.0 {
            0.0
        } else if self.gamma2 == 0.0 {
            f64::INFINITY
        } else {
            (self.gamma0 / self.gamma2).sqrt()
        }
    }

    /// Largest convex function below `fuel` on `Q >= 0`.
    ///
    /// Linear through the origin up to the knee, the quadratic branch beyond it.
    pub fn envelope(&self, q: f64) -> f64 {
        let q = q.max(0.0);
        let knee = self.envelope_knee();
        if q < knee {
            (self.gamma1 + 2.0 * (self.gamma2 * self.gamma0).sqrt()) * q
        } else {
            self.fuel(q)
        }
    }

    pub fn envelope_slope(&self, q: f64) -> f64 {
        let q = q.max(0.0);
        if q < self.envelope_knee() {
            self.gamma1 + 2.0 * (self.gamma2 * self.gamma0).sqrt()
        } else {
            self.slope(q)
        }
    }
}

/// Allowed SoC range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocBounds {
    pub lo: f64,
    pub hi: f64,
}

impl SocBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("SoC bounds [{lo}, {hi}] must satisfy lo < hi")));
        }
        Ok(SocBounds { lo, hi })
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn tol(&self) -> f64 {
        SOC_TOL * self.span().max(1.0)
    }

    pub fn contains(&self, soc: f64) -> bool {
        soc >= self.lo - self.tol() && soc <= self.hi + self.tol()
    }

    pub fn clamp(&self, soc: f64) -> f64 {
        soc.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub soc: f64,
    pub fuel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "EV")]
    Ev,
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "CS")]
    Cs,
    #[serde(rename = "AP")]
    Ap,
}

impl Mode {
    /// Battery-first preference used to break ties.
    pub const PRIORITY: [Mode; 4] = [Mode::Ev, Mode::Ap, Mode::Cs, Mode::Ce];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ev => "EV",
            Mode::Ce => "CE",
            Mode::Cs => "CS",
            Mode::Ap => "AP",
        }
    }

    pub fn rank(self) -> usize {
        match self {
            Mode::Ev => 0,
            Mode::Ap => 1,
            Mode::Cs => 2,
            Mode::Ce => 3,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EV" => Ok(Mode::Ev),
            "CE" => Ok(Mode::Ce),
            "CS" => Ok(Mode::Cs),
            "AP" => Ok(Mode::Ap),
            other => Err(Error::invalid(format!("unknown drive mode '{other}'"))),
        }
    }
}

/// Which generic drive modes the vehicle exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    pub ev: bool,
    pub ce: bool,
    pub cs: bool,
    pub ap: bool,
}

impl Default for ModeSet {
    fn default() -> Self {
        ModeSet::all()
    }
}

impl ModeSet {
    pub fn all() -> Self {
        ModeSet { ev: true, ce: true, cs: true, ap: true }
    }

    /// Series hybrid: EV and CS only.
    pub fn series() -> Self {
        ModeSet { ev: true, ce: false, cs: true, ap: false }
    }

    pub fn only(mode: Mode) -> Self {
        let mut set = ModeSet { ev: false, ce: false, cs: false, ap: false };
        set.set(mode, true);
        set
    }

    pub fn validate(&self) -> Result<()> {
        if self.ev || self.ce || self.cs || self.ap {
            Ok(())
        } else {
            Err(Error::invalid("at least one drive mode must be available"))
        }
    }

    pub fn contains(&self, mode: Mode) -> bool {
        match mode {
            Mode::Ev => self.ev,
            Mode::Ce => self.ce,
            Mode::Cs => self.cs,
            Mode::Ap => self.ap,
        }
    }

    pub fn set(&mut self, mode: Mode, on: bool) {
        match mode {
            Mode::Ev => self.ev = on,
            Mode::Ce => self.ce = on,
            Mode::Cs => self.cs = on,
            Mode::Ap => self.ap = on,
        }
    }

    /// Available modes in priority order.
    pub fn iter(&self) -> impl Iterator<Item = Mode> + '_ {
        Mode::PRIORITY.into_iter().filter(|m| self.contains(*m))
    }

    pub fn is_subset_of(&self, other: &ModeSet) -> bool {
        Mode::PRIORITY.iter().all(|m| !self.contains(*m) || other.contains(*m))
    }
}

/// Load and coefficients of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotInput {
    pub p_pos: f64,
    pub p_neg: f64,
    pub coeffs: SlotCoeffs,
}

impl SlotInput {
    pub fn new(p_pos: f64, p_neg: f64, coeffs: SlotCoeffs) -> Self {
        SlotInput { p_pos, p_neg, coeffs }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_pos >= 0.0 && self.p_neg >= 0.0 && self.p_pos.is_finite() && self.p_neg.is_finite()) {
            return Err(Error::invalid("P+ and P- must be finite and >= 0"));
        }
        if self.p_pos > 0.0 && self.p_neg > 0.0 {
            return Err(Error::invalid("P+ and P- cannot both be positive"));
        }
        self.coeffs.validate()
    }

    /// Highest engine output any mode can request in this slot.
    pub fn max_engine_output(&self) -> f64 {
        self.p_pos + self.coeffs.engine_charge_cap
    }
}

/// Realized controls of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub mode: Mode,
    /// regenerative charging power
    pub r: f64,
    /// battery-to-motor power
    pub s: f64,
    /// engine-to-battery power
    pub u: f64,
    /// engine output Q
    pub engine_output: f64,
    pub fuel_used: f64,
    pub soc_before: f64,
    pub next_soc: f64,
}

/// Regeneration captured with the current headroom.
pub fn regen_power(soc: f64, slot: &SlotInput, bounds: SocBounds) -> f64 {
    let headroom = (bounds.hi - soc).max(0.0) / slot.coeffs.eta_r;
    slot.p_neg.min(headroom)
}

/// Battery energy available for traction, expressed as motor power.
pub fn usable_discharge(soc: f64, slot: &SlotInput, bounds: SocBounds) -> f64 {
    (soc - bounds.lo).max(0.0) / slot.coeffs.eta_d
}

/// True when EV mode can carry the whole traction load from `soc`.
pub fn ev_feasible(soc: f64, slot: &SlotInput, bounds: SocBounds) -> bool {
    slot.p_pos * slot.coeffs.eta_d <= soc - bounds.lo + bounds.tol()
}

/// Deterministic one-slot transition under `mode` with the greedy control settings.
pub fn step_mode(
    state: VehicleState,
    mode: Mode,
    slot: &SlotInput,
    bounds: SocBounds,
    curve: &FuelCurve,
) -> Result<Transition> {
    let soc = state.soc;
    let c = &slot.coeffs;
    let r = regen_power(soc, slot, bounds);
    let (s, u) = match mode {
        Mode::Ev => {
            if !ev_feasible(soc, slot, bounds) {
                return Err(Error::EvInfeasible { load: slot.p_pos, available: usable_discharge(soc, slot, bounds) });
            }
            (slot.p_pos, 0.0)
        }
        Mode::Ce => (0.0, 0.0),
        Mode::Cs => {
            let room = (bounds.hi - soc - c.eta_r * r).max(0.0) / c.eta_e;
            (0.0, c.engine_charge_cap.min(room))
        }
        Mode::Ap => {
            let s = (c.ap_split * slot.p_pos).min(usable_discharge(soc, slot, bounds));
            (s, 0.0)
        }
    };
    let engine_output = match mode {
        Mode::Ev => 0.0,
        Mode::Ce => slot.p_pos,
        Mode::Cs => slot.p_pos + u,
        Mode::Ap => (slot.p_pos - s).max(0.0),
    };
    let fuel_used = curve.fuel(engine_output);
    if fuel_used > state.fuel {
        return Err(Error::FuelExhausted { needed: fuel_used, available: state.fuel });
    }
    let next_soc = bounds.clamp(soc + c.eta_r * r + c.eta_e * u - c.eta_d * s);
    Ok(Transition { mode, r, s, u, engine_output, fuel_used, soc_before: soc, next_soc })
}
