use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{blower_power, compressor_power, inlet_air_temperature, model_step, ControlInput, Exogenous, State};
use crate::nmpc::{mpc_step, ConstraintSchedule, OcpInstance, SolveResult, SolverOptions};
use crate::plant::{self, Actuation, Environment, PiMeasurement, PlantState};

use super::trace::{Trace, TraceRecord};
use super::Setup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Nmpc,
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Surrogate,
    Model,
}

struct Sample {
    t_cab: f64,
    t_evap: f64,
    t_int: f64,
    t_shell: f64,
}

/// Loop target: the surrogate plant, or the prediction model with interior and
/// shell temperatures held at their initial values.
enum LoopPlant {
    Surrogate(PlantState),
    Model { x: State, exo: Exogenous },
}

impl LoopPlant {
    fn sample(&self) -> Sample {
        match self {
            LoopPlant::Surrogate(s) => Sample {
                t_cab: s.t_cab,
                t_evap: s.t_evap,
                t_int: s.t_int,
                t_shell: s.t_shell,
            },
            LoopPlant::Model { x, exo } => Sample {
                t_cab: x.t_cab,
                t_evap: x.t_evap,
                t_int: exo.t_int,
                t_shell: exo.t_shell,
            },
        }
    }

    /// `(T_ain, P_c, P_bl)` at the current state under `act`.
    fn outputs(&self, act: &Actuation, v_veh: f64, setup: &Setup) -> (f64, f64, f64) {
        match self {
            LoopPlant::Surrogate(s) => {
                let env = Environment {
                    t_amb: setup.scenario.t_amb,
                    v_veh,
                };
                let o = plant::plant_outputs(s.t_cab, s.t_evap, act, &env, &setup.plant);
                (o.t_ain, o.p_c, o.p_bl)
            }
            LoopPlant::Model { x, exo } => (
                inlet_air_temperature(x.t_evap, act.w_bl, &setup.model),
                compressor_power(act.w_bl, x.t_evap, exo.t_amb, &setup.model, &setup.power),
                blower_power(act.w_bl, &setup.power),
            ),
        }
    }

    /// Holds `act` for one controller period starting at `t`.
    fn advance(&mut self, act: &Actuation, t: f64, setup: &Setup) {
        let sc = &setup.scenario;
        match self {
            LoopPlant::Surrogate(s) => {
                let n = (sc.ts / sc.dt).round() as usize;
                for j in 0..n {
                    let env = Environment {
                        t_amb: sc.t_amb,
                        v_veh: sc.speed.at(t + j as f64 * sc.dt),
                    };
                    *s = plant::plant_step(s, act, &env, &setup.plant).0;
                }
            }
            LoopPlant::Model { x, exo } => {
                *x = model_step(*x, ControlInput::new(act.w_bl, act.t_evap_set), *exo, &setup.model);
            }
        }
    }

    fn pi_state(&mut self) -> Option<&mut PlantState> {
        match self {
            LoopPlant::Surrogate(s) => Some(s),
            LoopPlant::Model { .. } => None,
        }
    }
}

struct Decision {
    act: Actuation,
    t_cab_ub: f64,
    slack: (f64, f64),
    iters: usize,
    solve_ms: f64,
}

fn measured_excess(t_cab: f64, lo: f64, hi: f64) -> (f64, f64) {
    ((lo - t_cab).max(0.0), (t_cab - hi).max(0.0))
}

fn horizon_slacks(res: &SolveResult) -> (f64, f64) {
    res.violations.iter().fold((0.0, 0.0), |(lo, hi), v| {
        (lo.max(v.lower[0]).max(v.lower[1]), hi.max(v.upper[0]).max(v.upper[1]))
    })
}

/// Runs the scenario in closed loop and records one trace row per controller
/// period, including the final instant.
///
/// The NMPC sees frozen interior, shell and ambient temperatures over each
/// horizon and the cabin bound previewed at the prediction steps. On shutoff
/// steps the optimizer is bypassed, the blower runs at its minimum and the
/// compressor is disabled.
pub fn run_closed_loop(setup: &Setup, controller: ControllerKind, plant_kind: PlantKind) -> Result<Trace> {
    setup.validate()?;
    let sc = &setup.scenario;
    let shutoff = sc.shutoff_schedule();
    if plant_kind == PlantKind::Model {
        if controller == ControllerKind::Pi {
            return Err(Error::Config("the PI baseline needs the surrogate plant".into()));
        }
        if shutoff.forced_off.iter().any(|f| *f) {
            return Err(Error::Config("compressor shutoff needs the surrogate plant".into()));
        }
    }
    let pi_setpoints = match controller {
        ControllerKind::Pi => Some(
            sc.pi
                .ok_or_else(|| Error::Config("PI run needs set-points in the scenario".into()))?,
        ),
        ControllerKind::Nmpc => None,
    };

    let init = &sc.initial;
    let mut target = match plant_kind {
        PlantKind::Surrogate => {
            LoopPlant::Surrogate(PlantState::at(init.t_cab, init.t_int, init.t_shell, init.t_evap))
        }
        PlantKind::Model => LoopPlant::Model {
            x: State::new(init.t_cab, init.t_evap),
            exo: Exogenous::new(init.t_int, init.t_shell, sc.t_amb),
        },
    };

    let steps = sc.steps();
    let h = sc.horizon;
    let cap = SolverOptions::default().max_iterations;
    let mut trace = Trace::default();
    let mut previous: Option<SolveResult> = None;
    let mut applied: Option<ControlInput> = None;
    let mut e_cum = 0.0;

    for k in 0..=steps {
        let t = k as f64 * sc.ts;
        let v_veh = sc.speed.at(t);
        let m = target.sample();
        let bound_now = sc.cabin_bound.at(t, &sc.speed);

        let decision = if shutoff.is_off(k) {
            previous = None;
            Decision {
                act: Actuation::off(sc.bounds.w_bl_min),
                t_cab_ub: bound_now,
                slack: measured_excess(m.t_cab, sc.bounds.t_cab_min, bound_now),
                iters: 0,
                solve_ms: 0.0,
            }
        } else if let Some(sp) = pi_setpoints {
            let state = target.pi_state().expect("PI runs on the surrogate");
            let act = plant::nominal_pi_step(
                state,
                &sp,
                &PiMeasurement {
                    t_cab: m.t_cab,
                    t_evap: m.t_evap,
                },
                &setup.plant,
                sc.ts,
            );
            Decision {
                act,
                t_cab_ub: sp.t_cab_set,
                slack: measured_excess(m.t_cab, sc.bounds.t_cab_min, sp.t_cab_set),
                iters: 0,
                solve_ms: 0.0,
            }
        } else {
            let ub: Vec<f64> = (0..=h.nc)
                .map(|i| sc.cabin_bound.at(t + i as f64 * sc.ts, &sc.speed))
                .collect();
            let inst = OcpInstance {
                x0: State::new(m.t_cab, m.t_evap),
                u_applied: applied,
                exo: Exogenous::new(m.t_int, m.t_shell, sc.t_amb),
                model: setup.model,
                power: setup.power,
                horizon: h,
                schedule: ConstraintSchedule::from_box(&h, &sc.bounds, &ub, sc.a_sl),
            };
            let (u, res) = mpc_step(&inst, previous.as_ref())?;
            trace.solver_steps += 1;
            if !res.converged && res.iterations >= cap {
                trace.capped_steps += 1;
            }
            let d = Decision {
                act: Actuation::on(u.w_bl, u.t_evap_set),
                t_cab_ub: bound_now,
                slack: horizon_slacks(&res),
                iters: res.iterations,
                solve_ms: res.wall_time.as_secs_f64() * 1e3,
            };
            previous = Some(res);
            d
        };

        let (t_ain, p_c, p_bl) = target.outputs(&decision.act, v_veh, setup);
        if let Some(last) = trace.records.last() {
            e_cum += 0.5 * (last.power() + p_c + p_bl) * (t - last.t);
        }
        trace.records.push(TraceRecord {
            t,
            t_cab: m.t_cab,
            t_evap: m.t_evap,
            t_ain,
            t_int: m.t_int,
            t_shell: m.t_shell,
            t_amb: sc.t_amb,
            w_bl: decision.act.w_bl,
            t_evap_set: decision.act.t_evap_set,
            t_cab_ub: decision.t_cab_ub,
            p_c,
            p_bl,
            e_cum,
            v_veh,
            slack_lo: decision.slack.0,
            slack_hi: decision.slack.1,
            iters: decision.iters,
            solve_ms: decision.solve_ms,
        });
        applied = decision.act.compressor_on.then(|| ControlInput::new(decision.act.w_bl, decision.act.t_evap_set));
        if k < steps {
            target.advance(&decision.act, t, setup);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::harness::energy_account;

    fn fixture(name: &str) -> Setup {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
        Setup::load(&dir.join(name), None).unwrap()
    }

    #[test]
    fn zero_duration_keeps_only_the_initial_record() {
        let mut setup = fixture("cooldown_T30.json");
        setup.scenario.duration = 0.0;
        let tr = run_closed_loop(&setup, ControllerKind::Nmpc, PlantKind::Surrogate).unwrap();
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.records[0].t, 0.0);
        assert_eq!(tr.records[0].t_cab, setup.scenario.initial.t_cab);
        assert_eq!(tr.records[0].e_cum, 0.0);
    }

    #[test]
    fn pi_baseline_tracks_its_setpoint() {
        let mut setup = fixture("speed_sweep.json");
        setup.scenario.duration = 1800.0;
        let tr = run_closed_loop(&setup, ControllerKind::Pi, PlantKind::Surrogate).unwrap();
        let tail = &tr.records[tr.records.len() - 60..];
        for r in tail {
            assert!((r.t_cab - 22.0).abs() < 0.2, "t={} T_cab={}", r.t, r.t_cab);
        }
    }

    #[test]
    fn cumulative_energy_matches_the_account() {
        let setup = fixture("cooldown_T30.json");
        let tr = run_closed_loop(&setup, ControllerKind::Nmpc, PlantKind::Model).unwrap();
        let e = energy_account(&tr, &setup.scenario.speed).unwrap();
        let last = tr.records.last().unwrap().e_cum;
        assert!((last / 1e6 - e.energy_mj).abs() < 1e-12);
        assert!(e.mj_per_km.is_none());
        for w in tr.records.windows(2) {
            assert!(w[1].e_cum >= w[0].e_cum);
        }
    }

    #[test]
    fn replays_are_bit_identical_apart_from_timing() {
        let setup = fixture("cooldown_T35.json");
        let strip = |tr: Trace| -> Vec<TraceRecord> {
            tr.records.into_iter().map(|r| TraceRecord { solve_ms: 0.0, ..r }).collect()
        };
        let a = run_closed_loop(&setup, ControllerKind::Nmpc, PlantKind::Surrogate).unwrap();
        let b = run_closed_loop(&setup, ControllerKind::Nmpc, PlantKind::Surrogate).unwrap();
        let (a, b) = (strip(a), strip(b));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            let fields = |r: &TraceRecord| {
                [r.t_cab, r.t_evap, r.w_bl, r.t_evap_set, r.p_c, r.p_bl, r.e_cum, r.slack_hi].map(f64::to_bits)
            };
            assert_eq!(fields(x), fields(y));
            assert_eq!(x.iters, y.iters);
        }
    }

    #[test]
    fn pi_on_the_model_is_a_config_error() {
        let setup = fixture("speed_sweep.json");
        assert!(matches!(
            run_closed_loop(&setup, ControllerKind::Pi, PlantKind::Model),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nmpc_inputs_respect_their_box() {
        let setup = fixture("stop_and_go.json");
        let tr = run_closed_loop(&setup, ControllerKind::Nmpc, PlantKind::Surrogate).unwrap();
        let b = &setup.scenario.bounds;
        for r in &tr.records {
            assert!(b.w_bl_min <= r.w_bl && r.w_bl <= b.w_bl_max);
            if r.t_evap_set.is_finite() {
                assert!(b.t_evap_set_min <= r.t_evap_set && r.t_evap_set <= b.t_evap_set_max);
            } else {
                assert_eq!(r.p_c, 0.0);
            }
        }
        assert_eq!(tr.capped_steps, 0);
    }

    #[test]
    fn pi_cool_down_overshoots_less_than_a_degree() {
        let mut setup = fixture("speed_sweep.json");
        setup.scenario.initial = crate::harness::InitialTemperatures {
            t_cab: 30.0,
            t_int: 30.0,
            t_shell: 30.0,
            t_evap: 30.0,
        };
        setup.scenario.t_amb = 30.0;
        setup.scenario.pi = Some(plant::PiSetpoints { t_cab_set: 25.0, t_evap_set: 5.0 });
        setup.scenario.duration = 1200.0;
        let tr = run_closed_loop(&setup, ControllerKind::Pi, PlantKind::Surrogate).unwrap();
        let lowest = tr.records.iter().map(|r| r.t_cab).fold(f64::INFINITY, f64::min);
        assert!(lowest > 24.0, "{lowest}");
    }
}
