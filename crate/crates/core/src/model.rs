//! Control-oriented A/C prediction model.
//!
//! Two states (cabin air and evaporator wall temperature), two inputs (blower
//! mass flow and evaporator set-point) and three measured exogenous
//! temperatures. The cabin update is bilinear in blower flow and inlet air
//! temperature; the evaporator update is affine. All temperatures are °C.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression coefficients of the prediction model.
///
/// `gamma[0..3]` drive the cabin update, `gamma[3..5]` the evaporator update and
/// `gamma[5..7]` the inlet air map. `tau` holds the three offsets in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: [f64; 7],
    pub tau: [f64; 3],
    /// Sampling period, s.
    #[serde(rename = "Ts")]
    pub ts: f64,
}

impl ModelParams {
    /// Identified coefficient set published with the original controller design.
    ///
    /// Kept verbatim as an arithmetic regression target. Its inlet air offset puts
    /// T_ain far above ambient, so closed-loop work uses re-identified parameters.
    pub fn reference() -> Self {
        Self {
            gamma: [0.2451, 0.0867, 1.2999, 1.0047, -0.5176, 0.4553, 34.9579],
            tau: [-0.1842, -1.3226, 154.4995],
            ts: 5.0,
        }
    }

    /// Coefficient multiplying `T_evap` in the evaporator update.
    pub fn evaporator_pole(&self) -> f64 {
        self.gamma[3] + self.gamma[4]
    }

    /// Coefficient multiplying `T_cab` in the cabin update at blower flow `w_bl`.
    pub fn cabin_pole(&self, w_bl: f64) -> f64 {
        1.0 - self.gamma[0] - self.gamma[1] - self.gamma[2] * w_bl
    }

    /// Checks the record invariants over the admissible blower range.
    pub fn validate(&self, w_bl_min: f64, w_bl_max: f64) -> Result<()> {
        if !(self.ts > 0.0) {
            return Err(Error::Config(format!("Ts must be positive, got {}", self.ts)));
        }
        if self.gamma.iter().chain(self.tau.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite model coefficient".into()));
        }
        if self.evaporator_pole().abs() >= 1.0 {
            return Err(Error::Config(format!(
                "evaporator map is not a contraction: |gamma4 + gamma5| = {}",
                self.evaporator_pole().abs()
            )));
        }
        // Cabin pole is affine in W_bl, so checking the endpoints suffices.
        for w in [w_bl_min, w_bl_max] {
            if self.cabin_pole(w).abs() >= 1.0 {
                return Err(Error::Config(format!(
                    "cabin map is not a contraction at W_bl = {w}: pole {}",
                    self.cabin_pole(w)
                )));
            }
        }
        Ok(())
    }
}

/// Electrical power model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Blower power polynomial `beta[0]·W² + beta[1]·W + beta[2]`, W.
    pub beta: [f64; 3],
    /// Specific heat of air, J/(kg·K).
    pub c_p: f64,
    /// Coefficient of performance.
    pub eta_cop: f64,
}

impl PowerParams {
    /// Blower polynomial identified with the reference model, with `c_p = 1008` and COP 3.5.
    pub fn reference() -> Self {
        Self {
            beta: [24156.0, -1974.2, 49.318],
            c_p: 1008.0,
            eta_cop: 3.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_p > 0.0) || !(self.eta_cop > 0.0) {
            return Err(Error::Config("c_p and eta_cop must be positive".into()));
        }
        if !(self.beta[0] > 0.0) {
            return Err(Error::Config(format!(
                "blower power map must be convex, beta1 = {}",
                self.beta[0]
            )));
        }
        Ok(())
    }

    /// `c_p / eta_cop`, W per (kg/s · K).
    pub fn compressor_gain(&self) -> f64 {
        self.c_p / self.eta_cop
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    #[serde(rename = "T_cab")]
    pub t_cab: f64,
    #[serde(rename = "T_evap")]
    pub t_evap: f64,
}

impl State {
    pub fn new(t_cab: f64, t_evap: f64) -> Self {
        Self { t_cab, t_evap }
    }
}

/// Measured temperatures that enter the model as inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exogenous {
    #[serde(rename = "T_int")]
    pub t_int: f64,
    #[serde(rename = "T_shell")]
    pub t_shell: f64,
    #[serde(rename = "T_amb")]
    pub t_amb: f64,
}

impl Exogenous {
    pub fn new(t_int: f64, t_shell: f64, t_amb: f64) -> Self {
        Self {
            t_int,
            t_shell,
            t_amb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Blower mass flow, kg/s.
    #[serde(rename = "W_bl")]
    pub w_bl: f64,
    /// Evaporator wall temperature set-point, °C.
    #[serde(rename = "T_evap_set")]
    pub t_evap_set: f64,
}

impl ControlInput {
    pub fn new(w_bl: f64, t_evap_set: f64) -> Self {
        Self { w_bl, t_evap_set }
    }
}

pub fn inlet_air_temperature(t_evap: f64, w_bl: f64, p: &ModelParams) -> f64 {
    p.gamma[5] * t_evap + p.gamma[6] * w_bl + p.tau[2]
}

/// One sampling period of the prediction model.
pub fn model_step(x: State, u: ControlInput, w: Exogenous, p: &ModelParams) -> State {
    let g = &p.gamma;
    let t_ain = inlet_air_temperature(x.t_evap, u.w_bl, p);
    let t_cab = x.t_cab
        + g[0] * (w.t_int - x.t_cab)
        + g[1] * (w.t_shell - x.t_cab)
        + g[2] * (t_ain - x.t_cab) * u.w_bl
        + p.tau[0];
    let t_evap = g[3] * x.t_evap + g[4] * (x.t_evap - u.t_evap_set) + p.tau[1];
    State { t_cab, t_evap }
}

/// Open-loop prediction: `states` has one more entry than `t_ain`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopTrajectory {
    pub states: Vec<State>,
    pub t_ain: Vec<f64>,
}

pub fn simulate_open_loop(
    x0: State,
    u_seq: &[ControlInput],
    w_seq: &[Exogenous],
    p: &ModelParams,
) -> Result<OpenLoopTrajectory> {
    if u_seq.len() != w_seq.len() {
        return Err(Error::Input(format!(
            "input and exogenous sequences differ in length ({} vs {})",
            u_seq.len(),
            w_seq.len()
        )));
    }
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    let mut t_ain = Vec::with_capacity(u_seq.len());
    let mut x = x0;
    states.push(x);
    for (u, w) in u_seq.iter().zip(w_seq) {
        t_ain.push(inlet_air_temperature(x.t_evap, u.w_bl, p));
        x = model_step(x, *u, *w, p);
        states.push(x);
    }
    Ok(OpenLoopTrajectory { states, t_ain })
}

/// Steady evaporator temperature under a constant set-point.
pub fn evaporator_fixed_point(t_evap_set: f64, p: &ModelParams) -> Result<f64> {
    let denom = 1.0 - p.gamma[3] - p.gamma[4];
    if denom.abs() < 1e-12 {
        return Err(Error::Degenerate(denom));
    }
    Ok((-p.gamma[4] * t_evap_set + p.tau[1]) / denom)
}

/// Compressor electrical power, W. Not clamped: negative when T_ain exceeds T_amb.
pub fn compressor_power(
    w_bl: f64,
    t_evap: f64,
    t_amb: f64,
    p: &ModelParams,
    q: &PowerParams,
) -> f64 {
    q.compressor_gain() * w_bl * (t_amb - inlet_air_temperature(t_evap, w_bl, p))
}

pub fn blower_power(w_bl: f64, q: &PowerParams) -> f64 {
    (q.beta[0] * w_bl + q.beta[1]) * w_bl + q.beta[2]
}

/// Electrical power drawn at one prediction step, W.
pub fn stage_cost(
    x: State,
    u: ControlInput,
    t_amb: f64,
    p: &ModelParams,
    q: &PowerParams,
) -> f64 {
    compressor_power(u.w_bl, x.t_evap, t_amb, p, q) + blower_power(u.w_bl, q)
}
