//! Receding-horizon energy minimization over the prediction model.
//!
//! The optimal control problem is transcribed by single shooting: states are
//! eliminated by recursion and only the `Nu` input moves are decision variables
//! (inputs after move `Nu − 1` are held). State bounds are softened with an
//! exact L1 penalty, which is the closed-form elimination of nonnegative slack
//! variables. Input bounds are hard.

mod controller;
mod evaluate;
mod oracle;
mod qcqp;
mod rollout;
mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ControlInput, Exogenous, ModelParams, PowerParams, State};

pub use controller::{mpc_step, shifted_warm_start};
pub use evaluate::{evaluate_cost, evaluate_nlp, NlpEvaluation, StepViolation};
pub use oracle::{brute_force_ocp, BruteForceResult, GridResolution};
pub use qcqp::{build_qcqp_matrices, QcqpMatrices, Slot};
pub use rollout::{rollout, Rollout};
pub use solver::{solve_ocp, SolverOptions, SolveResult};

/// Slack penalty used in the reference controller, W per °C of violation.
pub const DEFAULT_SLACK_PENALTY: [f64; 2] = [1e5, 1e5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonConfig {
    /// Prediction horizon, steps.
    #[serde(rename = "Np")]
    pub np: usize,
    /// Control horizon, steps.
    #[serde(rename = "Nu")]
    pub nu: usize,
    /// Constraint horizon, steps.
    #[serde(rename = "Nc")]
    pub nc: usize,
}

impl HorizonConfig {
    pub fn uniform(n: usize) -> Self {
        Self { np: n, nu: n, nc: n }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu < 1 || self.nu > self.np || self.nc < 1 || self.nc > self.np {
            return Err(Error::Config(format!(
                "horizons must satisfy 1 <= Nu <= Np and 1 <= Nc <= Np, got Np={} Nu={} Nc={}",
                self.np, self.nu, self.nc
            )));
        }
        Ok(())
    }
}

/// Fixed bounds other than the online cabin upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    #[serde(rename = "T_cab_min")]
    pub t_cab_min: f64,
    #[serde(rename = "T_evap_min")]
    pub t_evap_min: f64,
    #[serde(rename = "T_evap_max")]
    pub t_evap_max: f64,
    #[serde(rename = "W_bl_min")]
    pub w_bl_min: f64,
    #[serde(rename = "W_bl_max")]
    pub w_bl_max: f64,
    #[serde(rename = "T_evap_set_min")]
    pub t_evap_set_min: f64,
    #[serde(rename = "T_evap_set_max")]
    pub t_evap_set_max: f64,
}

impl BoxBounds {
    /// Operating limits of the reference A/C system.
    pub fn standard() -> Self {
        Self {
            t_cab_min: 20.0,
            t_evap_min: 0.0,
            t_evap_max: 12.0,
            w_bl_min: 0.05,
            w_bl_max: 0.15,
            t_evap_set_min: 3.0,
            t_evap_set_max: 10.0,
        }
    }

    pub fn input_lower(&self) -> ControlInput {
        ControlInput::new(self.w_bl_min, self.t_evap_set_min)
    }

    pub fn input_upper(&self) -> ControlInput {
        ControlInput::new(self.w_bl_max, self.t_evap_set_max)
    }

    pub fn input_midpoint(&self) -> ControlInput {
        ControlInput::new(
            0.5 * (self.w_bl_min + self.w_bl_max),
            0.5 * (self.t_evap_set_min + self.t_evap_set_max),
        )
    }
}

/// Time-indexed bounds over one horizon. State bounds cover steps `0..=Nc`,
/// input bounds moves `0..Nu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSchedule {
    pub state_lower: Vec<State>,
    pub state_upper: Vec<State>,
    pub input_lower: Vec<ControlInput>,
    pub input_upper: Vec<ControlInput>,
    /// Penalty per °C of cabin and evaporator bound violation.
    pub a_sl: [f64; 2],
}

impl ConstraintSchedule {
    /// Fixed bounds from `bounds` with a per-step cabin upper bound.
    /// `t_cab_upper` must hold `Nc + 1` values.
    pub fn from_box(horizon: &HorizonConfig, bounds: &BoxBounds, t_cab_upper: &[f64], a_sl: [f64; 2]) -> Self {
        Self {
            state_lower: vec![State::new(bounds.t_cab_min, bounds.t_evap_min); horizon.nc + 1],
            state_upper: t_cab_upper.iter().map(|&ub| State::new(ub, bounds.t_evap_max)).collect(),
            input_lower: vec![bounds.input_lower(); horizon.nu],
            input_upper: vec![bounds.input_upper(); horizon.nu],
            a_sl,
        }
    }

    pub fn validate(&self, horizon: &HorizonConfig) -> Result<()> {
        if self.state_lower.len() != horizon.nc + 1 || self.state_upper.len() != horizon.nc + 1 {
            return Err(Error::Input(format!(
                "state bounds must cover Nc + 1 = {} steps, got {} lower and {} upper",
                horizon.nc + 1,
                self.state_lower.len(),
                self.state_upper.len()
            )));
        }
        if self.input_lower.len() != horizon.nu || self.input_upper.len() != horizon.nu {
            return Err(Error::Input(format!(
                "input bounds must cover Nu = {} moves, got {} lower and {} upper",
                horizon.nu,
                self.input_lower.len(),
                self.input_upper.len()
            )));
        }
        for (i, (lo, hi)) in self.state_lower.iter().zip(&self.state_upper).enumerate() {
            if !(lo.t_cab <= hi.t_cab && lo.t_evap <= hi.t_evap) {
                return Err(Error::Input(format!("state bounds crossed at step {i}")));
            }
        }
        for (i, (lo, hi)) in self.input_lower.iter().zip(&self.input_upper).enumerate() {
            let finite = [lo.w_bl, lo.t_evap_set, hi.w_bl, hi.t_evap_set].iter().all(|v| v.is_finite());
            if !finite || !(lo.w_bl <= hi.w_bl && lo.t_evap_set <= hi.t_evap_set) {
                return Err(Error::Input(format!("input bounds invalid at move {i}")));
            }
        }
        if !(self.a_sl[0] >= 0.0 && self.a_sl[1] >= 0.0) {
            return Err(Error::Input(format!("slack penalty must be nonnegative, got {:?}", self.a_sl)));
        }
        Ok(())
    }
}

/// One optimal control problem, measured at the current sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpInstance {
    pub x0: State,
    /// Input applied over the previous interval, if any.
    pub u_applied: Option<ControlInput>,
    /// Interior, shell and ambient temperatures, frozen over the horizon.
    pub exo: Exogenous,
    pub model: ModelParams,
    pub power: PowerParams,
    pub horizon: HorizonConfig,
    pub schedule: ConstraintSchedule,
}

impl OcpInstance {
    pub fn validate(&self) -> Result<()> {
        self.horizon.validate().map_err(|e| match e {
            Error::Config(m) => Error::Input(m),
            other => other,
        })?;
        self.schedule.validate(&self.horizon)
    }

    /// Number of decision variables.
    pub fn dim(&self) -> usize {
        2 * self.horizon.nu
    }

    /// Input applied at prediction step `i` under move blocking.
    pub fn input_at(&self, u: &[f64], i: usize) -> ControlInput {
        let j = i.min(self.horizon.nu - 1);
        ControlInput::new(u[2 * j], u[2 * j + 1])
    }

    pub fn lower(&self) -> Vec<f64> {
        self.schedule.input_lower.iter().flat_map(|u| [u.w_bl, u.t_evap_set]).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.schedule.input_upper.iter().flat_map(|u| [u.w_bl, u.t_evap_set]).collect()
    }

    /// Midpoint of the input box for every move.
    pub fn midpoint(&self) -> Vec<f64> {
        self.lower().iter().zip(self.upper()).map(|(l, u)| 0.5 * (l + u)).collect()
    }
}

pub fn pack(moves: &[ControlInput]) -> Vec<f64> {
    moves.iter().flat_map(|u| [u.w_bl, u.t_evap_set]).collect()
}

pub fn unpack(u: &[f64]) -> Vec<ControlInput> {
    u.chunks_exact(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}
