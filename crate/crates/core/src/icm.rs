//! Constraint management from a previewed speed profile.
//!
//! The cabin upper bound is relaxed while the vehicle is slow, where the A/C is
//! least efficient, and tightened at speed, where ram air makes cooling cheap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vehicle speed sampled on the controller grid, m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedPreview {
    /// Grid spacing, s.
    pub ts: f64,
    pub v_veh: Vec<f64>,
}

impl SpeedPreview {
    pub fn new(ts: f64, v_veh: Vec<f64>) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::Input(format!("preview spacing must be positive, got {ts}")));
        }
        if v_veh.is_empty() {
            return Err(Error::Input("speed preview is empty".into()));
        }
        if let Some(v) = v_veh.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("vehicle speed must be finite and nonnegative, got {v}")));
        }
        Ok(Self { ts, v_veh })
    }

    /// `len` samples starting at step `k`; past the end the last sample is held.
    pub fn window(&self, k: usize, len: usize) -> Self {
        let last = self.v_veh.len() - 1;
        Self {
            ts: self.ts,
            v_veh: (k..k + len).map(|i| self.v_veh[i.min(last)]).collect(),
        }
    }
}

/// Range within which the cabin bound may move, °C, and the speed at which it
/// reaches the cool end, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    #[serde(rename = "T_hi")]
    pub t_hi: f64,
    #[serde(rename = "T_lo")]
    pub t_lo: f64,
    #[serde(rename = "V_ref")]
    pub v_ref: f64,
}

impl Default for ComfortBand {
    fn default() -> Self {
        Self {
            t_hi: 26.0,
            t_lo: 22.0,
            v_ref: 20.0,
        }
    }
}

impl ComfortBand {
    pub fn validate(&self, t_cab_min: f64) -> Result<()> {
        if !(self.t_lo < self.t_hi) || self.t_lo < t_cab_min || !(self.v_ref > 0.0) {
            return Err(Error::Config(format!(
                "comfort band needs {t_cab_min} <= T_lo < T_hi and V_ref > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    pub fn bound_at(&self, v_veh: f64) -> f64 {
        self.t_hi - (self.t_hi - self.t_lo) * (v_veh / self.v_ref).min(1.0)
    }
}

/// Upper cabin bound at every preview sample.
pub fn bound_schedule_from_speed(preview: &SpeedPreview, band: &ComfortBand) -> Vec<f64> {
    preview.v_veh.iter().map(|&v| band.bound_at(v)).collect()
}

/// Mean of the trace samples whose time lies in `[t0, t1]`.
pub fn constant_setpoint_schedule(times: &[f64], t_cab: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != t_cab.len() {
        return Err(Error::Input(format!(
            "trace has {} times but {} temperatures",
            times.len(),
            t_cab.len()
        )));
    }
    let (t0, t1) = window;
    let inside: Vec<f64> = times
        .iter()
        .zip(t_cab)
        .filter(|(t, _)| **t >= t0 - 1e-9 && **t <= t1 + 1e-9)
        .map(|(_, x)| *x)
        .collect();
    if inside.is_empty() {
        return Err(Error::Input(format!("no trace samples inside window [{t0}, {t1}]")));
    }
    Ok(inside.iter().sum::<f64>() / inside.len() as f64)
}

/// Controller steps on which the compressor is forced off.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShutoffSchedule {
    pub forced_off: Vec<bool>,
}

impl ShutoffSchedule {
    pub fn none(steps: usize) -> Self {
        Self {
            forced_off: vec![false; steps],
        }
    }

    pub fn is_off(&self, k: usize) -> bool {
        self.forced_off.get(k).copied().unwrap_or(false)
    }
}

/// Flags every step `k` with `t_a <= k·ts < t_b`. Flags already set stay set, so
/// overlapping intervals merge.
pub fn shutoff_window(schedule: &ShutoffSchedule, ts: f64, interval: (f64, f64)) -> ShutoffSchedule {
    let (t_a, t_b) = interval;
    let mut out = schedule.clone();
    for (k, flag) in out.forced_off.iter_mut().enumerate() {
        let t = k as f64 * ts;
        if t >= t_a - 1e-9 && t < t_b - 1e-9 {
            *flag = true;
        }
    }
    out
}
