use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icm::constant_setpoint_schedule;
use crate::model::{ControlInput, State};
use crate::plant::{self, Actuation, Environment, PlantParams, PlantState};
use crate::sysid::{
    self, fit_model_params, fit_power_params, generate_excitation, spread_starts, BlowerFit, DataSource,
    ExcitationConfig, IdDataset, IdSample, ModelFit, PlantSource, ValidationReport,
};

use super::run::{run_closed_loop, ControllerKind, PlantKind};
use super::trace::{Trace, TraceRecord};
use super::{CabinBound, ControllerParams, IdentifyConfig, Setup, SpeedProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTotals {
    pub energy_mj: f64,
    pub distance_km: f64,
    /// Undefined when the vehicle does not move.
    pub mj_per_km: Option<f64>,
}

impl EnergyTotals {
    pub fn new(energy_mj: f64, distance_km: f64) -> Self {
        Self {
            energy_mj,
            distance_km,
            mj_per_km: (distance_km > 0.0).then(|| energy_mj / distance_km),
        }
    }
}

/// Trapezoidal energy increment between two consecutive records, J.
pub(crate) fn trapezoid(a: &TraceRecord, b: &TraceRecord) -> f64 {
    0.5 * (a.power() + b.power()) * (b.t - a.t)
}

/// Exact integral of the piecewise-linear profile over `[t0, t1]`, m.
fn distance(speed: &SpeedProfile, t0: f64, t1: f64) -> f64 {
    let mut knots = vec![t0];
    knots.extend(speed.breakpoints.iter().map(|b| b.t).filter(|t| *t > t0 && *t < t1));
    knots.push(t1);
    knots.windows(2).map(|w| 0.5 * (speed.at(w[0]) + speed.at(w[1])) * (w[1] - w[0])).sum()
}

/// Total electrical energy and energy per distance of a trace.
pub fn energy_account(tr: &Trace, speed: &SpeedProfile) -> Result<EnergyTotals> {
    let (first, last) = match (tr.records.first(), tr.records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Input("empty trace".into())),
    };
    let joules: f64 = tr.records.windows(2).map(|w| trapezoid(&w[0], &w[1])).sum();
    Ok(EnergyTotals::new(joules / 1e6, distance(speed, first.t, last.t) / 1e3))
}

/// Energy between `t0` and `t1`, interpolating the cumulative energy linearly
/// between records, J.
pub fn window_energy(tr: &Trace, window: (f64, f64)) -> Result<f64> {
    let (t0, t1) = window;
    let r = &tr.records;
    let (start, end) = match (r.first(), r.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(Error::Input("empty trace".into())),
    };
    if !(t0 < t1) || t0 < start - 1e-9 || t1 > end + 1e-9 {
        return Err(Error::Input(format!(
            "comparison window [{t0}, {t1}] is not inside the run [{start}, {end}]"
        )));
    }
    let e_at = |t: f64| {
        let i = r.partition_point(|x| x.t < t - 1e-9);
        if i == 0 {
            return r[0].e_cum;
        }
        if i == r.len() {
            return r[i - 1].e_cum;
        }
        let (a, b) = (&r[i - 1], &r[i]);
        if (b.t - t).abs() <= 1e-9 {
            return b.e_cum;
        }
        a.e_cum + (b.e_cum - a.e_cum) * (t - a.t) / (b.t - a.t)
    };
    Ok(e_at(t1) - e_at(t0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    /// Comparison-window energies, MJ.
    pub e_case1: f64,
    pub e_case2: f64,
    /// `(E2 − E1) / E2`
    pub saving: f64,
    /// Constant cabin bound used for Case 2, °C.
    pub setpoint: f64,
    pub case1: Trace,
    pub case2: Trace,
}

/// Scores two traces over the same window.
pub fn compare_traces(case1: Trace, case2: Trace, window: (f64, f64), setpoint: f64) -> Result<CaseReport> {
    let e1 = window_energy(&case1, window)? / 1e6;
    let e2 = window_energy(&case2, window)? / 1e6;
    Ok(CaseReport {
        e_case1: e1,
        e_case2: e2,
        saving: (e2 - e1) / e2,
        setpoint,
        case1,
        case2,
    })
}

/// Case 1 runs the scenario as given: speed-coordinated bound plus shutoff.
/// Case 2 drops the shutoff and holds the bound at Case 1's mean cabin
/// temperature over the comparison window.
pub fn compare_cases(setup: &Setup) -> Result<CaseReport> {
    let sc = &setup.scenario;
    let window = sc
        .comparison
        .ok_or_else(|| Error::Config("scenario has no comparison window".into()))?
        .window;
    if !matches!(sc.cabin_bound, CabinBound::Icm { .. }) {
        return Err(Error::Config("case comparison needs a comfort band cabin bound".into()));
    }
    if !(window.0 >= 0.0 && window.0 < window.1 && window.1 <= sc.duration + 1e-9) {
        return Err(Error::Input(format!(
            "comparison window {window:?} is outside the scenario [0, {}]",
            sc.duration
        )));
    }
    let case1 = run_closed_loop(setup, ControllerKind::Nmpc, PlantKind::Surrogate)?;
    let setpoint = constant_setpoint_schedule(&case1.times(), &case1.t_cab(), window)?;

    let mut second = setup.clone();
    second.scenario.cabin_bound = CabinBound::Constant { value: setpoint };
    second.scenario.shutoff.clear();
    let case2 = run_closed_loop(&second, ControllerKind::Nmpc, PlantKind::Surrogate)?;
    compare_traces(case1, case2, window, setpoint)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// m/s
    pub speed: f64,
    pub energy_mj: f64,
    pub mj_per_km: Option<f64>,
}

/// PI-baseline runs of the scenario at each constant speed, on the surrogate.
pub fn speed_sensitivity_sweep(setup: &Setup, speeds: &[f64]) -> Result<Vec<SweepRow>> {
    if speeds.is_empty() {
        return Err(Error::Input("no speeds to sweep".into()));
    }
    let run = |v: f64| -> Result<SweepRow> {
        let mut s = setup.clone();
        s.scenario.speed = SpeedProfile::constant(v);
        s.scenario.shutoff.clear();
        let tr = run_closed_loop(&s, ControllerKind::Pi, PlantKind::Surrogate)?;
        let e = energy_account(&tr, &s.scenario.speed)?;
        Ok(SweepRow {
            speed: v,
            energy_mj: e.energy_mj,
            mj_per_km: e.mj_per_km,
        })
    };
    std::thread::scope(|scope| {
        let handles: Vec<_> = speeds.iter().map(|&v| scope.spawn(move || run(v))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

/// Bisects the COP speed gain so that `E(speed) / E(0)` equals `target`.
pub fn calibrate_kappa_v(setup: &Setup, speed: f64, target: f64, bracket: (f64, f64)) -> Result<f64> {
    let ratio = |kappa: f64| -> Result<f64> {
        let mut s = setup.clone();
        s.plant.kappa_v = kappa;
        let rows = speed_sensitivity_sweep(&s, &[0.0, speed])?;
        Ok(rows[1].energy_mj / rows[0].energy_mj)
    };
    let (mut lo, mut hi) = bracket;
    let (r_lo, r_hi) = (ratio(lo)?, ratio(hi)?);
    if !((r_lo - target) * (r_hi - target) <= 0.0) {
        return Err(Error::Input(format!(
            "target ratio {target} not bracketed: {r_lo} at {lo}, {r_hi} at {hi}"
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if (ratio(mid)? - target) * (r_lo - target) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn warmed_source(cfg: &IdentifyConfig, plant: &PlantParams) -> PlantSource {
    let init = &cfg.initial;
    let env = Environment {
        t_amb: cfg.t_amb,
        v_veh: cfg.v_veh,
    };
    let s0 = PlantState::at(init.t_cab, init.t_int, init.t_shell, init.t_evap);
    let act = Actuation::on(cfg.warmup_input.w_bl, cfg.warmup_input.t_evap_set);
    let (state, _) = plant::advance(&s0, &act, &env, plant, cfg.warmup);
    PlantSource::new(state, *plant, env)
}

/// Excitation record from the surrogate after the warm-up hold.
pub fn identification_dataset(cfg: &IdentifyConfig, plant: &PlantParams, seed: u64) -> Result<IdDataset> {
    let mut src = warmed_source(cfg, plant);
    let exc = ExcitationConfig {
        seed,
        ..cfg.excitation.clone()
    };
    generate_excitation(&exc, &mut src)
}

#[derive(Debug, Clone)]
pub struct IdentifyOutcome {
    pub params: ControllerParams,
    pub fit: ModelFit,
    pub blower: BlowerFit,
    pub dataset: IdDataset,
}

/// Fits the prediction and blower models to a surrogate excitation record.
pub fn identify(cfg: &IdentifyConfig, plant: &PlantParams) -> Result<IdentifyOutcome> {
    let dataset = identification_dataset(cfg, plant, cfg.excitation.seed)?;
    let fit = fit_model_params(&dataset, cfg.excitation.sample_period)?;
    let blower = fit_power_params(&dataset)?;
    let params = ControllerParams {
        model: fit.params,
        power: blower.clone().into_power_params(cfg.c_p, cfg.eta_cop),
    };
    Ok(IdentifyOutcome {
        params,
        fit,
        blower,
        dataset,
    })
}

/// Multi-step prediction errors on a held-out record.
pub fn validation_report(cfg: &IdentifyConfig, plant: &PlantParams, params: &ControllerParams) -> Result<ValidationReport> {
    let data = identification_dataset(cfg, plant, cfg.validation_seed)?;
    let starts = spread_starts(data.len(), cfg.validation_horizon, cfg.validation_starts);
    sysid::validate_multistep(&params.model, &data, cfg.validation_horizon, &starts)
}

/// Open-loop model response to seeded random inputs over the scenario, with
/// interior and shell temperatures held at their initial values.
pub fn simulate_model(setup: &Setup, seed: u64) -> Result<IdDataset> {
    let sc = &setup.scenario;
    let b = &sc.bounds;
    let cfg = ExcitationConfig {
        duration: sc.duration.max(sc.ts),
        sample_period: sc.ts,
        w_bl_range: (b.w_bl_min, b.w_bl_max),
        t_evap_set_range: (b.t_evap_set_min, b.t_evap_set_max),
        hold_time: 5.0 * sc.ts,
        seed,
    };
    let mut src = FrozenModel {
        x: State::new(sc.initial.t_cab, sc.initial.t_evap),
        setup,
        t: 0.0,
    };
    generate_excitation(&cfg, &mut src)
}

struct FrozenModel<'a> {
    x: State,
    setup: &'a Setup,
    t: f64,
}

impl DataSource for FrozenModel<'_> {
    fn time(&self) -> f64 {
        self.t
    }

    fn sample(&self, u: &ControlInput) -> IdSample {
        let sc = &self.setup.scenario;
        let (p, q) = (&self.setup.model, &self.setup.power);
        IdSample {
            t: self.t,
            t_cab: self.x.t_cab,
            t_evap: self.x.t_evap,
            t_ain: crate::model::inlet_air_temperature(self.x.t_evap, u.w_bl, p),
            t_int: sc.initial.t_int,
            t_shell: sc.initial.t_shell,
            t_amb: sc.t_amb,
            w_bl: u.w_bl,
            t_evap_set: u.t_evap_set,
            p_c: crate::model::compressor_power(u.w_bl, self.x.t_evap, sc.t_amb, p, q),
            p_bl: crate::model::blower_power(u.w_bl, q),
            v_veh: sc.speed.at(self.t),
        }
    }

    fn advance(&mut self, u: &ControlInput, period: f64) {
        let sc = &self.setup.scenario;
        let w = crate::model::Exogenous::new(sc.initial.t_int, sc.initial.t_shell, sc.t_amb);
        self.x = crate::model::model_step(self.x, *u, w, &self.setup.model);
        self.t += period;
    }
}
