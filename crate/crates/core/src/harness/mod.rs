//! Scenarios, closed-loop runs, energy accounting and the experiments built on them.
//!
//! A scenario file names its parameter files by path relative to itself; those
//! files and the scenario are the only inputs, there are no hidden defaults.

mod experiments;
mod run;
mod trace;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icm::{ComfortBand, ShutoffSchedule};
use crate::model::{ModelParams, PowerParams};
use crate::nmpc::{BoxBounds, HorizonConfig};
use crate::plant::{PiSetpoints, PlantParams};
use crate::sysid::ExcitationConfig;

pub use experiments::{
    calibrate_kappa_v, compare_cases, compare_traces, energy_account, identification_dataset, identify,
    simulate_model, speed_sensitivity_sweep, validation_report, CaseReport, EnergyTotals, IdentifyOutcome,
    SweepRow,
};
pub use run::{run_closed_loop, ControllerKind, PlantKind};
pub use trace::{Trace, TraceRecord, TRACE_HEADER};

/// One `(t, V_veh)` breakpoint of a piecewise-linear speed profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedBreakpoint {
    pub t: f64,
    #[serde(rename = "V_veh")]
    pub v_veh: f64,
}

/// Piecewise-linear in time, held constant outside the breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedProfile {
    pub breakpoints: Vec<SpeedBreakpoint>,
}

impl SpeedProfile {
    pub fn constant(v_veh: f64) -> Self {
        Self {
            breakpoints: vec![SpeedBreakpoint { t: 0.0, v_veh }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(Error::Config("speed profile has no breakpoints".into()));
        }
        for w in self.breakpoints.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Config("speed breakpoints must have increasing times".into()));
            }
        }
        if let Some(b) = self.breakpoints.iter().find(|b| !(b.v_veh >= 0.0) || !b.v_veh.is_finite()) {
            return Err(Error::Config(format!("negative or non-finite speed {} at t = {}", b.v_veh, b.t)));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        let b = &self.breakpoints;
        let i = b.partition_point(|p| p.t <= t);
        if i == 0 {
            return b[0].v_veh;
        }
        if i == b.len() {
            return b[i - 1].v_veh;
        }
        let (a, c) = (b[i - 1], b[i]);
        a.v_veh + (c.v_veh - a.v_veh) * (t - a.t) / (c.t - a.t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialTemperatures {
    #[serde(rename = "T_cab")]
    pub t_cab: f64,
    #[serde(rename = "T_int")]
    pub t_int: f64,
    #[serde(rename = "T_shell")]
    pub t_shell: f64,
    #[serde(rename = "T_evap")]
    pub t_evap: f64,
}

/// Source of the online cabin upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CabinBound {
    /// Piecewise-constant in time: each `(t, value)` holds from `t` on.
    Steps { steps: Vec<(f64, f64)> },
    /// Speed-coordinated bound from the comfort band.
    Icm { band: ComfortBand },
    Constant { value: f64 },
}

impl CabinBound {
    pub fn at(&self, t: f64, speed: &SpeedProfile) -> f64 {
        match self {
            CabinBound::Steps { steps } => steps
                .iter()
                .take_while(|(t0, _)| *t0 <= t + 1e-9)
                .last()
                .or(steps.first())
                .map_or(f64::INFINITY, |(_, v)| *v),
            CabinBound::Icm { band } => band.bound_at(speed.at(t)),
            CabinBound::Constant { value } => *value,
        }
    }

    fn validate(&self, bounds: &BoxBounds) -> Result<()> {
        match self {
            CabinBound::Steps { steps } => {
                if steps.is_empty() {
                    return Err(Error::Config("stepped cabin bound has no steps".into()));
                }
                if steps.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Config("cabin bound steps must have increasing times".into()));
                }
                if let Some((t, v)) = steps.iter().find(|(_, v)| *v < bounds.t_cab_min) {
                    return Err(Error::Config(format!("cabin bound {v} at t = {t} is below T_cab_min")));
                }
                Ok(())
            }
            CabinBound::Icm { band } => band.validate(bounds.t_cab_min),
            CabinBound::Constant { value } => {
                if *value < bounds.t_cab_min {
                    return Err(Error::Config(format!("constant cabin bound {value} is below T_cab_min")));
                }
                Ok(())
            }
        }
    }
}

/// Time window over which the two cases of a comparison are scored, s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// s
    pub duration: f64,
    /// Controller period, s.
    #[serde(rename = "Ts")]
    pub ts: f64,
    /// Plant integration step, s.
    pub dt: f64,
    #[serde(rename = "T_amb")]
    pub t_amb: f64,
    pub speed: SpeedProfile,
    pub initial: InitialTemperatures,
    pub horizon: HorizonConfig,
    pub bounds: BoxBounds,
    pub a_sl: [f64; 2],
    pub cabin_bound: CabinBound,
    /// Intervals `[t_a, t_b)` with the compressor forced off.
    #[serde(default)]
    pub shutoff: Vec<(f64, f64)>,
    /// Set-points for the PI baseline.
    #[serde(default)]
    pub pi: Option<PiSetpoints>,
    #[serde(default)]
    pub comparison: Option<ComparisonConfig>,
    pub seed: u64,
    /// Prediction and power model parameters, relative to the scenario file.
    pub model_params: PathBuf,
    pub plant_params: PathBuf,
}

fn whole_steps(x: f64, unit: f64) -> Option<usize> {
    let n = (x / unit).round();
    ((x - n * unit).abs() <= 1e-9 * unit.max(1.0) && n >= 0.0).then_some(n as usize)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::Config(format!(
                "need Ts > 0 and dt in (0, 0.1], got Ts = {} dt = {}",
                self.ts, self.dt
            )));
        }
        if !(self.duration >= 0.0) || whole_steps(self.duration, self.ts).is_none() {
            return Err(Error::Config(format!(
                "duration {} is not a whole number of controller periods {}",
                self.duration, self.ts
            )));
        }
        if whole_steps(self.ts, self.dt).is_none() {
            return Err(Error::Config(format!("Ts = {} is not a multiple of dt = {}", self.ts, self.dt)));
        }
        self.horizon.validate()?;
        self.speed.validate()?;
        self.cabin_bound.validate(&self.bounds)?;
        let b = &self.bounds;
        if !(b.t_evap_min <= b.t_evap_max && b.w_bl_min <= b.w_bl_max && b.t_evap_set_min <= b.t_evap_set_max) {
            return Err(Error::Config("box bounds are crossed".into()));
        }
        if !(self.a_sl[0] >= 0.0 && self.a_sl[1] >= 0.0) {
            return Err(Error::Config("slack penalty must be nonnegative".into()));
        }
        if let Some((a, b)) = self.shutoff.iter().find(|(a, b)| !(a <= b)) {
            return Err(Error::Config(format!("shutoff interval [{a}, {b}) is reversed")));
        }
        Ok(())
    }

    /// Number of controller periods.
    pub fn steps(&self) -> usize {
        whole_steps(self.duration, self.ts).unwrap_or(0)
    }

    /// Compressor-off flags for records `0..=steps`.
    pub fn shutoff_schedule(&self) -> ShutoffSchedule {
        self.shutoff
            .iter()
            .fold(ShutoffSchedule::none(self.steps() + 1), |s, iv| {
                crate::icm::shutoff_window(&s, self.ts, *iv)
            })
    }
}

/// Prediction-model and power-model parameters stored together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    #[serde(flatten)]
    pub model: ModelParams,
    #[serde(flatten)]
    pub power: PowerParams,
}

/// A scenario with its parameter files resolved and checked against each other.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub scenario: Scenario,
    pub model: ModelParams,
    pub power: PowerParams,
    pub plant: PlantParams,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Writes pretty JSON through a temporary file so readers never see a partial file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Setup {
    /// Loads a scenario and the files it names. `params_override` replaces the
    /// scenario's model parameter file.
    pub fn load(scenario_path: &Path, params_override: Option<&Path>) -> Result<Self> {
        let scenario: Scenario = read_json(scenario_path)?;
        let base = scenario_path.parent().unwrap_or(Path::new("."));
        let params_path = params_override
            .map(Path::to_path_buf)
            .unwrap_or_else(|| resolve(base, &scenario.model_params));
        let params: ControllerParams = read_json(&params_path)?;
        let plant: PlantParams = read_json(&resolve(base, &scenario.plant_params))?;
        Self::new(scenario, params, plant)
    }

    pub fn new(scenario: Scenario, params: ControllerParams, plant: PlantParams) -> Result<Self> {
        let plant = PlantParams { dt: scenario.dt, ..plant };
        let setup = Self {
            scenario,
            model: params.model,
            power: params.power,
            plant,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        let sc = &self.scenario;
        sc.validate()?;
        self.plant.validate()?;
        self.power.validate().map_err(config)?;
        self.model.validate(sc.bounds.w_bl_min, sc.bounds.w_bl_max).map_err(config)?;
        if (self.model.ts - sc.ts).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "model sampling period {} differs from scenario Ts {}",
                self.model.ts, sc.ts
            )));
        }
        Ok(())
    }
}

fn config(e: Error) -> Error {
    match e {
        Error::Input(m) => Error::Config(m),
        other => other,
    }
}

/// Identification experiment: warm-up, excitation and held-out validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    pub plant_params: PathBuf,
    #[serde(rename = "T_amb")]
    pub t_amb: f64,
    #[serde(rename = "V_veh")]
    pub v_veh: f64,
    pub initial: InitialTemperatures,
    /// Time the plant is held at `warmup_input` before recording, s.
    pub warmup: f64,
    pub warmup_input: crate::model::ControlInput,
    pub excitation: ExcitationConfig,
    /// Seed of the held-out validation record.
    pub validation_seed: u64,
    pub validation_horizon: usize,
    pub validation_starts: usize,
    pub c_p: f64,
    pub eta_cop: f64,
}

impl IdentifyConfig {
    pub fn load(path: &Path) -> Result<(Self, PlantParams)> {
        let cfg: Self = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let plant: PlantParams = read_json(&resolve(base, &cfg.plant_params))?;
        plant.validate()?;
        Ok((cfg, plant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile() -> SpeedProfile {
        SpeedProfile {
            breakpoints: vec![
                SpeedBreakpoint { t: 10.0, v_veh: 0.0 },
                SpeedBreakpoint { t: 20.0, v_veh: 10.0 },
                SpeedBreakpoint { t: 40.0, v_veh: 10.0 },
            ],
        }
    }

    #[test]
    fn speed_profile_interpolates_and_holds() {
        let p = profile();
        assert_eq!(p.at(0.0), 0.0);
        assert_eq!(p.at(15.0), 5.0);
        assert_eq!(p.at(20.0), 10.0);
        assert_eq!(p.at(100.0), 10.0);
        assert!(p.validate().is_ok());
        let bad = SpeedProfile {
            breakpoints: vec![SpeedBreakpoint { t: 1.0, v_veh: 0.0 }, SpeedBreakpoint { t: 1.0, v_veh: 2.0 }],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn stepped_bound_holds_from_each_time() {
        let b = CabinBound::Steps {
            steps: vec![(0.0, 27.0), (60.0, 25.0)],
        };
        let sp = SpeedProfile::constant(0.0);
        assert_eq!(b.at(0.0, &sp), 27.0);
        assert_eq!(b.at(59.9, &sp), 27.0);
        assert_eq!(b.at(60.0, &sp), 25.0);
        assert_eq!(b.at(500.0, &sp), 25.0);
    }

    #[test]
    fn controller_params_flatten() {
        let p = ControllerParams {
            model: ModelParams::reference(),
            power: PowerParams::reference(),
        };
        let text = serde_json::to_string(&p).unwrap();
        for key in ["\"gamma\"", "\"tau\"", "\"Ts\"", "\"beta\"", "\"c_p\"", "\"eta_cop\""] {
            assert!(text.contains(key), "{text}");
        }
        let back: ControllerParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
