//! JSON documents for trips and road networks.
//!
//! Per-slot coefficients may be given as one number for every slot or as an
//! array of length `T`. Loads come either as `P_plus`/`P_minus` arrays or as a
//! `speed`/`grade` profile with vehicle `params`, in which case the road-load
//! power (W) is multiplied by `power_scale` to get SoC units per slot.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dmop::TripInstance;
use crate::error::{Error, Result};
use crate::model::{
    drivetrain_power, FuelCurve, ModeSet, ProfileStep, SlotCoeffs, SlotInput, SocBounds, VehicleParams,
};
use crate::pathplan::{RoadEdge, RoadNetwork, Station};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSlot {
    Same(f64),
    Each(Vec<f64>),
}

impl PerSlot {
    fn expand(&self, name: &str, t: usize) -> Result<Vec<f64>> {
        match self {
            PerSlot::Same(v) => Ok(vec![*v; t]),
            PerSlot::Each(v) if v.len() == t => Ok(v.clone()),
            PerSlot::Each(v) => Err(Error::invalid(format!("{name} has {} entries, expected T = {t}", v.len()))),
        }
    }

    /// Collapses equal entries to one number.
    fn pack(values: Vec<f64>) -> Self {
        match values.first() {
            Some(&v) if values.iter().all(|&x| x.to_bits() == v.to_bits()) => PerSlot::Same(v),
            _ => PerSlot::Each(values),
        }
    }
}

/// Slot data shared by trips and road edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotsDoc {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "P_plus", default, skip_serializing_if = "Option::is_none")]
    pub p_plus: Option<Vec<f64>>,
    #[serde(rename = "P_minus", default, skip_serializing_if = "Option::is_none")]
    pub p_minus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_speed: Option<f64>,
    pub eta_r: PerSlot,
    pub eta_d: PerSlot,
    pub eta_e: PerSlot,
    #[serde(rename = "C")]
    pub c: PerSlot,
    pub beta: PerSlot,
}

impl SlotsDoc {
    fn slots(&self, params: Option<&VehicleParams>, power_scale: f64) -> Result<Vec<SlotInput>> {
        let t = self.t;
        if t == 0 {
            return Err(Error::invalid("T must be >= 1"));
        }
        let check = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != t {
                return Err(Error::invalid(format!("{name} has {} entries, expected T = {t}", v.len())));
            }
            Ok(())
        };
        let (pos, neg) = match (&self.p_plus, &self.speed) {
            (Some(p), None) => {
                check("P_plus", p)?;
                let n = self.p_minus.clone().unwrap_or_else(|| vec![0.0; t]);
                check("P_minus", &n)?;
                (p.clone(), n)
            }
            (None, Some(speed)) => {
                check("speed", speed)?;
                let grade = self.grade.clone().unwrap_or_else(|| vec![0.0; t]);
                check("grade", &grade)?;
                let params = params.ok_or_else(|| Error::invalid("speed profile needs params"))?;
                params.validate()?;
                let mut prev = self.initial_speed.unwrap_or(speed[0]);
                let mut pos = Vec::with_capacity(t);
                let mut neg = Vec::with_capacity(t);
                for (k, (&v, &g)) in speed.iter().zip(&grade).enumerate() {
                    let step = ProfileStep { speed_m_s: v, grade_rad: g, prev_speed_m_s: prev };
                    let p = drivetrain_power(&step, params).map_err(|e| Error::invalid(format!("speed[{k}]: {e}")))?;
                    pos.push(p.positive * power_scale);
                    neg.push(p.negative * power_scale);
                    prev = v;
                }
                (pos, neg)
            }
            (Some(_), Some(_)) => return Err(Error::invalid("give either P_plus or speed, not both")),
            (None, None) => return Err(Error::invalid("missing P_plus (or speed)")),
        };
        let eta_r = self.eta_r.expand("eta_r", t)?;
        let eta_d = self.eta_d.expand("eta_d", t)?;
        let eta_e = self.eta_e.expand("eta_e", t)?;
        let c = self.c.expand("C", t)?;
        let beta = self.beta.expand("beta", t)?;
        (0..t)
            .map(|k| {
                let coeffs = SlotCoeffs {
                    eta_r: eta_r[k],
                    eta_d: eta_d[k],
                    eta_e: eta_e[k],
                    engine_charge_cap: c[k],
                    ap_split: beta[k],
                };
                let slot = SlotInput::new(pos[k], neg[k], coeffs);
                slot.validate().map_err(|e| Error::invalid(format!("slot {k}: {e}")))?;
                Ok(slot)
            })
            .collect()
    }

    fn from_slots(slots: &[SlotInput]) -> Self {
        let pick = |f: fn(&SlotInput) -> f64| PerSlot::pack(slots.iter().map(f).collect());
        SlotsDoc {
            t: slots.len(),
            p_plus: Some(slots.iter().map(|s| s.p_pos).collect()),
            p_minus: Some(slots.iter().map(|s| s.p_neg).collect()),
            speed: None,
            grade: None,
            initial_speed: None,
            eta_r: pick(|s| s.coeffs.eta_r),
            eta_d: pick(|s| s.coeffs.eta_d),
            eta_e: pick(|s| s.coeffs.eta_e),
            c: pick(|s| s.coeffs.engine_charge_cap),
            beta: pick(|s| s.coeffs.ap_split),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    #[serde(flatten)]
    pub slots: SlotsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<VehicleParams>,
    #[serde(default = "default_scale")]
    pub power_scale: f64,
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "G0")]
    pub g0: f64,
    #[serde(rename = "B_lo")]
    pub b_lo: f64,
    #[serde(rename = "B_hi")]
    pub b_hi: f64,
    #[serde(default = "ModeSet::all")]
    pub modes: ModeSet,
    #[serde(rename = "B_terminal", default, skip_serializing_if = "Option::is_none")]
    pub b_terminal: Option<f64>,
    pub curve: FuelCurve,
}

impl InstanceDoc {
    pub fn to_instance(&self) -> Result<TripInstance> {
        let inst = TripInstance {
            slots: self.slots.slots(self.params.as_ref(), self.power_scale)?,
            curve: FuelCurve::new(self.curve.gamma2, self.curve.gamma1, self.curve.gamma0)?,
            bounds: SocBounds::new(self.b_lo, self.b_hi)?,
            b0: self.b0,
            g0: self.g0,
            modes: self.modes,
            terminal_soc: self.b_terminal,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_instance(inst: &TripInstance) -> Self {
        InstanceDoc {
            slots: SlotsDoc::from_slots(&inst.slots),
            params: None,
            power_scale: 1.0,
            b0: inst.b0,
            g0: inst.g0,
            b_lo: inst.bounds.lo,
            b_hi: inst.bounds.hi,
            modes: inst.modes,
            b_terminal: inst.terminal_soc,
            curve: inst.curve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: String,
    pub g: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(rename = "E", default)]
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    #[serde(flatten)]
    pub slots: SlotsDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
    pub source: String,
    pub dest: String,
    #[serde(rename = "G_cap")]
    pub g_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(rename = "G0")]
    pub g0: f64,
    #[serde(rename = "B0")]
    pub b0: f64,
    #[serde(rename = "B_lo")]
    pub b_lo: f64,
    #[serde(rename = "B_hi")]
    pub b_hi: f64,
    #[serde(default = "ModeSet::all")]
    pub modes: ModeSet,
    pub curve: FuelCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<VehicleParams>,
    #[serde(default = "default_scale")]
    pub power_scale: f64,
}

impl NetworkDoc {
    pub fn to_network(&self) -> Result<RoadNetwork> {
        let index = |id: &str, what: &str| -> Result<usize> {
            self.nodes
                .iter()
                .position(|n| n.id == id)
                .ok_or_else(|| Error::invalid(format!("{what} '{id}' is not a node")))
        };
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.id == n.id) {
                return Err(Error::invalid(format!("duplicate node id '{}'", n.id)));
            }
        }
        let edges = self
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let slots = e
                    .slots
                    .slots(self.params.as_ref(), self.power_scale)
                    .map_err(|err| Error::invalid(format!("edges[{k}]: {err}")))?;
                Ok(RoadEdge { from: index(&e.from, "edge from")?, to: index(&e.to, "edge to")?, slots })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = RoadNetwork {
            nodes: self
                .nodes
                .iter()
                .map(|n| Station { id: n.id.clone(), fuel_price: n.g, charge_price: n.h, charge_cap: n.e })
                .collect(),
            edges,
            source: index(&self.source, "source")?,
            dest: index(&self.dest, "dest")?,
            tank_capacity: self.g_cap,
            stop_budget: self.delta,
            g0: self.g0,
            b0: self.b0,
            curve: FuelCurve::new(self.curve.gamma2, self.curve.gamma1, self.curve.gamma0)?,
            bounds: SocBounds::new(self.b_lo, self.b_hi)?,
            modes: self.modes,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_network(net: &RoadNetwork) -> Self {
        let id = |i: usize| net.nodes[i].id.clone();
        NetworkDoc {
            nodes: net
                .nodes
                .iter()
                .map(|s| NodeDoc { id: s.id.clone(), g: s.fuel_price, h: s.charge_price, e: s.charge_cap })
                .collect(),
            edges: net
                .edges
                .iter()
                .map(|e| EdgeDoc { from: id(e.from), to: id(e.to), slots: SlotsDoc::from_slots(&e.slots) })
                .collect(),
            source: id(net.source),
            dest: id(net.dest),
            g_cap: net.tank_capacity,
            delta: net.stop_budget,
            g0: net.g0,
            b0: net.b0,
            b_lo: net.bounds.lo,
            b_hi: net.bounds.hi,
            modes: net.modes,
            curve: net.curve,
            params: None,
            power_scale: 1.0,
        }
    }
}

fn parse_error(err: serde_json::Error) -> Error {
    Error::Parse { line: err.line(), message: err.to_string() }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn parse_instance(text: &str) -> Result<TripInstance> {
    serde_json::from_str::<InstanceDoc>(text).map_err(parse_error)?.to_instance()
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<TripInstance> {
    parse_instance(&read_file(path.as_ref())?)
}

pub fn instance_json(inst: &TripInstance) -> String {
    serde_json::to_string_pretty(&InstanceDoc::from_instance(inst)).expect("instance serializes")
}

pub fn parse_network(text: &str) -> Result<RoadNetwork> {
    serde_json::from_str::<NetworkDoc>(text).map_err(parse_error)?.to_network()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork> {
    parse_network(&read_file(path.as_ref())?)
}

pub fn network_json(net: &RoadNetwork) -> String {
    serde_json::to_string_pretty(&NetworkDoc::from_network(net)).expect("network serializes")
}
