//! Least-squares calibration of efficiency coefficients and the fuel map from
//! logged drive traces.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drivetrain_power, FuelCurve, ProfileStep, VehicleParams};

pub const TRACE_HEADER: [&str; 6] = ["t", "speed", "batt_power", "engine_charge_power", "engine_output", "fuel_rate"];
pub const FEATURE_NAMES: [&str; 7] = ["v^2", "v", "a+^2", "a+", "a-^2", "a-", "1"];
const MIN_ROWS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObdRecord {
    pub t: f64,
    pub speed: f64,
    /// signed battery power, positive when discharging
    pub batt_power: f64,
    pub engine_charge_power: f64,
    pub engine_output: f64,
    pub fuel_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObdTrace {
    pub records: Vec<ObdRecord>,
}

impl ObdTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::invalid("empty trace"));
        }
        for (i, r) in self.records.iter().enumerate() {
            // header is line 1
            let line = i + 2;
            if !(r.speed >= 0.0) {
                return Err(Error::Parse { line, message: format!("speed {} must be >= 0", r.speed) });
            }
            if i > 0 && !(r.t > self.records[i - 1].t) {
                return Err(Error::Parse { line, message: "timestamps must be strictly increasing".into() });
            }
        }
        Ok(())
    }

    /// Profile step of each record; the first record is treated as steady.
    pub fn steps(&self) -> Vec<ProfileStep> {
        let mut prev = self.records.first().map_or(0.0, |r| r.speed);
        self.records
            .iter()
            .map(|r| {
                let s = ProfileStep { speed_m_s: r.speed, grade_rad: 0.0, prev_speed_m_s: prev };
                prev = r.speed;
                s
            })
            .collect()
    }
}

pub fn read_trace<R: Read>(reader: R) -> Result<ObdTrace> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_HEADER {
        if headers.is_empty() {
            return Err(Error::invalid("empty trace"));
        }
        return Err(Error::Parse { line: 1, message: format!("expected header '{}'", TRACE_HEADER.join(",")) });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let mut vals = [0.0; 6];
        for (k, v) in vals.iter_mut().enumerate() {
            let field = row.get(k).ok_or_else(|| Error::Parse { line, message: "missing column".into() })?;
            *v = field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column '{}': cannot parse '{field}'", TRACE_HEADER[k]),
            })?;
        }
        records.push(ObdRecord {
            t: vals[0],
            speed: vals[1],
            batt_power: vals[2],
            engine_charge_power: vals[3],
            engine_output: vals[4],
            fuel_rate: vals[5],
        });
    }
    let trace = ObdTrace { records };
    trace.validate()?;
    Ok(trace)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<ObdTrace> {
    let file =
        std::fs::File::open(path.as_ref()).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_trace(file)
}

/// Regression features of one record.
pub fn features(step: &ProfileStep) -> [f64; 7] {
    let v = step.speed_m_s;
    let a = step.acceleration();
    let ap = a.max(0.0);
    let an = (-a).max(0.0);
    [v * v, v, ap * ap, ap, an * an, an, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffTarget {
    Discharge,
    Regen,
    EngineCharge,
}

impl EffTarget {
    fn range(self) -> (f64, f64) {
        match self {
            EffTarget::Discharge => (1.0, f64::INFINITY),
            EffTarget::Regen | EffTarget::EngineCharge => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffRegression {
    pub target: EffTarget,
    /// over `[v^2, v, a+^2, a+, a-^2, a-, 1]`
    pub coeffs: [f64; 7],
    /// feature columns that were identically zero and left at 0
    pub dropped: Vec<usize>,
    pub rows_used: usize,
    pub rows_clamped: usize,
    pub rms_residual: f64,
}

impl EffRegression {
    pub fn predict(&self, step: &ProfileStep) -> f64 {
        features(step).iter().zip(&self.coeffs).map(|(f, c)| f * c).sum()
    }
}

/// Per-record efficiency sample for `target`, if the record qualifies.
pub fn efficiency_sample(target: EffTarget, rec: &ObdRecord, load: f64) -> Option<f64> {
    let p_pos = load.max(0.0);
    let p_neg = (-load).max(0.0);
    match target {
        EffTarget::Discharge => (p_pos > 0.0 && rec.batt_power > 0.0).then(|| rec.batt_power / p_pos),
        EffTarget::Regen => (p_neg > 0.0 && rec.batt_power < 0.0).then(|| -rec.batt_power / p_neg),
        EffTarget::EngineCharge => {
            let u = rec.engine_output - p_pos;
            (u > 0.0 && rec.engine_charge_power > 0.0).then(|| rec.engine_charge_power / u)
        }
    }
}

pub fn fit_efficiency(trace: &ObdTrace, target: EffTarget, params: &VehicleParams) -> Result<EffRegression> {
    trace.validate()?;
    params.validate()?;
    let (lo, hi) = target.range();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut clamped = 0;
    for (rec, step) in trace.records.iter().zip(trace.steps()) {
        let load = drivetrain_power(&step, params)?.power;
        let Some(eta) = efficiency_sample(target, rec, load) else { continue };
        let y = eta.clamp(lo, hi);
        if y != eta {
            clamped += 1;
        }
        xs.push(features(&step));
        ys.push(y);
    }
    if clamped > 0 {
        log::warn!("{clamped} {target:?} samples fell outside [{lo}, {hi}] and were clamped");
    }
    if xs.len() < MIN_ROWS {
        return Err(Error::invalid(format!(
            "{target:?} fit needs at least {MIN_ROWS} qualifying rows, found {}",
            xs.len()
        )));
    }
    let (coeffs, dropped) = least_squares(&xs, &ys)?;
    let sse: f64 =
        xs.iter().zip(&ys).map(|(x, y)| (x.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>() - y).powi(2)).sum();
    let mut out = [0.0; 7];
    out.copy_from_slice(&coeffs);
    Ok(EffRegression {
        target,
        coeffs: out,
        dropped,
        rows_used: xs.len(),
        rows_clamped: clamped,
        rms_residual: (sse / xs.len() as f64).sqrt(),
    })
}

/// OLS via normal equations on unit-norm columns. Identically zero columns
/// are dropped (coefficient 0); remaining near-collinearity is an error.
fn least_squares<const K: usize>(xs: &[[f64; K]], ys: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut norms = [0.0f64; K];
    for x in xs {
        for k in 0..K {
            norms[k] += x[k] * x[k];
        }
    }
    let keep: Vec<usize> = (0..K).filter(|&k| norms[k] > 0.0).collect();
    let dropped: Vec<usize> = (0..K).filter(|&k| norms[k] == 0.0).collect();
    let scale: Vec<f64> = keep.iter().map(|&k| norms[k].sqrt()).collect();
    let m = keep.len();
    let mut gram = vec![vec![0.0; m]; m];
    let mut rhs = vec![0.0; m];
    for (x, &y) in xs.iter().zip(ys) {
        for a in 0..m {
            let xa = x[keep[a]] / scale[a];
            rhs[a] += xa * y;
            for b in 0..=a {
                gram[a][b] += xa * x[keep[b]] / scale[b];
            }
        }
    }
    let sol = match cholesky_solve(&gram, &rhs, 0.0) {
        Ok(s) => s,
        Err(min_pivot) if min_pivot > 1e-12 => {
            log::debug!("near-singular normal equations (pivot {min_pivot:.2e}); adding ridge");
            cholesky_solve(&gram, &rhs, 1e-10).map_err(|_| rank_error())?
        }
        Err(_) => return Err(rank_error()),
    };
    let mut coeffs = vec![0.0; K];
    for (a, &k) in keep.iter().enumerate() {
        coeffs[k] = sol[a] / scale[a];
    }
    Ok((coeffs, dropped))
}

fn rank_error() -> Error {
    Error::RankDeficient("regression features are collinear".into())
}

/// Solves `(G + ridge I) x = r` for the lower triangle `G`; on failure returns
/// the smallest squared pivot seen.
fn cholesky_solve(g: &[Vec<f64>], r: &[f64], ridge: f64) -> std::result::Result<Vec<f64>, f64> {
    let m = r.len();
    let mut l = vec![vec![0.0; m]; m];
    let mut min_pivot = f64::INFINITY;
    for i in 0..m {
        for k in 0..=i {
            let mut s = g[i][k] + if i == k { ridge } else { 0.0 };
            for p in 0..k {
                s -= l[i][p] * l[k][p];
            }
            if i == k {
                min_pivot = min_pivot.min(s);
                if s < 1e-8 {
                    return Err(min_pivot.max(0.0));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][k] = s / l[k][k];
            }
        }
    }
    let mut y = r.to_vec();
    for i in 0..m {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    Ok(y)
}

/// `(engine output, fuel rate)` pairs from records with the engine running.
pub fn fuel_pairs(trace: &ObdTrace) -> Vec<(f64, f64)> {
    trace.records.iter().filter(|r| r.engine_output > 0.0).map(|r| (r.engine_output, r.fuel_rate)).collect()
}

pub fn fit_fuel(pairs: &[(f64, f64)]) -> Result<FuelCurve> {
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).filter(|&q| q > 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::invalid(format!(
            "fuel fit needs at least 3 distinct positive outputs, found {}",
            distinct.len()
        )));
    }
    let (xs, ys): (Vec<[f64; 3]>, Vec<f64>) =
        pairs.iter().filter(|p| p.0 > 0.0).map(|&(q, f)| ([q * q, q, 1.0], f)).unzip();
    let (c, _) = least_squares(&xs, &ys)?;
    let (qmin, qmax) = (distinct[0], distinct[distinct.len() - 1]);
    let fmax = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let snap = |v: f64| if v.abs() < 1e-12 * fmax { 0.0 } else { v };
    let (g2, g1, g0) = (snap(c[0]), snap(c[1]), snap(c[2]));
    if g2 < 0.0 {
        return Err(Error::NonConvexFit(format!("quadratic coefficient {g2} is negative")));
    }
    if 2.0 * g2 * qmin + g1 <= 0.0 {
        return Err(Error::NonConvexFit(format!("fitted curve decreases on the observed range [{qmin}, {qmax}]")));
    }
    if g1 < 0.0 || g0 < 0.0 {
        return Err(Error::NonConvexFit(format!("fitted coefficients ({g2}, {g1}, {g0}) leave the admissible region")));
    }
    FuelCurve::new(g2, g1, g0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub discharge: std::result::Result<EffRegression, String>,
    pub regen: std::result::Result<EffRegression, String>,
    pub engine_charge: std::result::Result<EffRegression, String>,
    pub fuel_curve: std::result::Result<FuelCurve, String>,
}

/// Runs every fit on one trace; individual failures are reported per target.
pub fn calibrate(trace: &ObdTrace, params: &VehicleParams) -> Result<CalibrationReport> {
    trace.validate()?;
    let fit = |t| fit_efficiency(trace, t, params).map_err(|e| e.to_string());
    Ok(CalibrationReport {
        discharge: fit(EffTarget::Discharge),
        regen: fit(EffTarget::Regen),
        engine_charge: fit(EffTarget::EngineCharge),
        fuel_curve: fit_fuel(&fuel_pairs(trace)).map_err(|e| e.to_string()),
    })
}
