//! Lumped-parameter cabin and A/C surrogate plant.
//!
//! Four temperatures (cabin air, interior mass, shell, evaporator wall) are
//! integrated with fixed-step RK4. Inlet air is a recirculation mix of cabin and
//! ambient air cooled across the evaporator coil. Compressor power is the heat
//! removed divided by a COP that grows with vehicle speed (ram air through the
//! condenser). The plant also carries the nominal two-loop PI controller used as
//! the baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gains and limits of the nominal PI baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiParams {
    /// Blower loop: kg/s per °C of cabin error.
    pub blower_kp: f64,
    /// kg/s per (°C·s).
    pub blower_ki: f64,
    pub blower_ff: f64,
    pub blower_i_limit: f64,
    /// Evaporator loop: °C of command per °C of wall error.
    pub evap_kp: f64,
    pub evap_ki: f64,
    pub evap_ff: f64,
    pub evap_i_limit: f64,
    /// Back-calculation gain, 1/s.
    pub back_calc: f64,
    /// Compressor latches off when the wall falls this far below its set-point
    /// and back on when it rises the same amount above it, °C.
    pub hysteresis: f64,
    pub w_bl_min: f64,
    pub w_bl_max: f64,
    pub t_evap_set_min: f64,
    pub t_evap_set_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Thermal capacitances, J/K.
    pub c_cab: f64,
    pub c_int: f64,
    pub c_shell: f64,
    /// Conductances, W/K.
    pub h_cab_int: f64,
    pub h_cab_shell: f64,
    pub h_shell_amb: f64,
    /// Extra shell to ambient conductance per m/s of vehicle speed, W/K/(m/s).
    pub h_shell_amb_speed: f64,
    /// Evaporator wall time constant while the compressor runs, s.
    pub tau_evap: f64,
    /// Increase of that time constant per kg/s of blower flow, s/(kg/s).
    pub tau_evap_flow: f64,
    /// Wall time constant with the compressor off, s.
    pub tau_evap_off: f64,
    /// Evaporator coil UA, W/K.
    pub coil_ua: f64,
    pub c_p: f64,
    pub cop_base: f64,
    /// COP gain per m/s of vehicle speed.
    pub kappa_v: f64,
    /// Recirculation law: clamp(gain·(T_amb − T_cab) + bias, min, max).
    pub recirc_gain: f64,
    pub recirc_bias: f64,
    pub recirc_min: f64,
    pub recirc_max: f64,
    /// Blower power polynomial, W.
    pub beta: [f64; 3],
    /// Integration step, s.
    pub dt: f64,
    pub pi: PiParams,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c_cab", self.c_cab),
            ("c_int", self.c_int),
            ("c_shell", self.c_shell),
            ("h_cab_int", self.h_cab_int),
            ("h_cab_shell", self.h_cab_shell),
            ("h_shell_amb", self.h_shell_amb),
            ("tau_evap", self.tau_evap),
            ("tau_evap_off", self.tau_evap_off),
            ("coil_ua", self.coil_ua),
            ("c_p", self.c_p),
            ("cop_base", self.cop_base),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("plant parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::Config(format!("plant dt must lie in (0, 0.1], got {}", self.dt)));
        }
        if self.kappa_v < 0.0 || self.h_shell_amb_speed < 0.0 || self.tau_evap_flow < 0.0 {
            return Err(Error::Config("speed and flow sensitivities must be nonnegative".into()));
        }
        if !(0.0 <= self.recirc_min && self.recirc_min <= self.recirc_max && self.recirc_max <= 1.0) {
            return Err(Error::Config("recirculation limits must satisfy 0 <= min <= max <= 1".into()));
        }
        let pi = &self.pi;
        if !(pi.w_bl_min < pi.w_bl_max) || !(pi.t_evap_set_min < pi.t_evap_set_max) {
            return Err(Error::Config("PI actuator limits are empty".into()));
        }
        if pi.blower_i_limit < 0.0 || pi.evap_i_limit < 0.0 || pi.hysteresis < 0.0 {
            return Err(Error::Config("PI limits must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn cop(&self, v_veh: f64) -> f64 {
        self.cop_base * speed_cop_multiplier(v_veh, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t_cab: f64,
    pub t_int: f64,
    pub t_shell: f64,
    pub t_evap: f64,
    pub pi_blower_i: f64,
    pub pi_evap_i: f64,
    pub ac_on: bool,
}

impl PlantState {
    /// Plant at rest with compressor enabled and zero integrators.
    pub fn at(t_cab: f64, t_int: f64, t_shell: f64, t_evap: f64) -> Self {
        Self {
            t_cab,
            t_int,
            t_shell,
            t_evap,
            pi_blower_i: 0.0,
            pi_evap_i: 0.0,
            ac_on: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub t_amb: f64,
    pub v_veh: f64,
}

/// Actuator commands held over a plant step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuation {
    pub w_bl: f64,
    pub t_evap_set: f64,
    pub compressor_on: bool,
}

impl Actuation {
    pub fn on(w_bl: f64, t_evap_set: f64) -> Self {
        Self {
            w_bl,
            t_evap_set,
            compressor_on: true,
        }
    }

    pub fn off(w_bl: f64) -> Self {
        Self {
            w_bl,
            t_evap_set: f64::NAN,
            compressor_on: false,
        }
    }
}

/// Instantaneous plant outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantOutputs {
    /// Mixed air entering the coil, °C.
    pub t_mix: f64,
    /// Cabin inlet air, °C.
    pub t_ain: f64,
    pub alpha_recirc: f64,
    /// Heat extracted from the air stream at the coil, W.
    pub q_coil: f64,
    pub p_c: f64,
    pub p_bl: f64,
}

/// Quantities integrated over one plant step, J.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepIntegrals {
    pub compressor_energy: f64,
    pub blower_energy: f64,
    pub heat_removed: f64,
}

pub fn speed_cop_multiplier(v_veh: f64, p: &PlantParams) -> f64 {
    1.0 + p.kappa_v * v_veh
}

pub fn recirculation_rate(t_cab: f64, t_amb: f64, p: &PlantParams) -> f64 {
    (p.recirc_gain * (t_amb - t_cab) + p.recirc_bias).clamp(p.recirc_min, p.recirc_max)
}

pub fn blower_power(w_bl: f64, p: &PlantParams) -> f64 {
    (p.beta[0] * w_bl + p.beta[1]) * w_bl + p.beta[2]
}

fn coil_effectiveness(w_bl: f64, p: &PlantParams) -> f64 {
    if w_bl <= 0.0 {
        1.0
    } else {
        1.0 - (-p.coil_ua / (w_bl * p.c_p)).exp()
    }
}

/// Outputs for a given thermal state and held actuation.
pub fn plant_outputs(
    t_cab: f64,
    t_evap: f64,
    act: &Actuation,
    env: &Environment,
    p: &PlantParams,
) -> PlantOutputs {
    let alpha = recirculation_rate(t_cab, env.t_amb, p);
    let t_mix = alpha * t_cab + (1.0 - alpha) * env.t_amb;
    let w = act.w_bl.max(0.0);
    let (t_ain, q_coil) = if act.compressor_on {
        let drop = coil_effectiveness(w, p) * (t_mix - t_evap).max(0.0);
        (t_mix - drop, w * p.c_p * drop)
    } else {
        (t_mix, 0.0)
    };
    PlantOutputs {
        t_mix,
        t_ain,
        alpha_recirc: alpha,
        q_coil,
        p_c: q_coil / p.cop(env.v_veh),
        p_bl: blower_power(w, p),
    }
}

#[derive(Clone, Copy)]
struct Thermal([f64; 7]);

fn derivative(x: &Thermal, act: &Actuation, env: &Environment, p: &PlantParams) -> Thermal {
    let [t_cab, t_int, t_shell, t_evap, ..] = x.0;
    let out = plant_outputs(t_cab, t_evap, act, env, p);
    let w = act.w_bl.max(0.0);
    let h_amb = p.h_shell_amb + p.h_shell_amb_speed * env.v_veh;

    let d_cab = (p.h_cab_int * (t_int - t_cab)
        + p.h_cab_shell * (t_shell - t_cab)
        + w * p.c_p * (out.t_ain - t_cab))
        / p.c_cab;
    let d_int = p.h_cab_int * (t_cab - t_int) / p.c_int;
    let d_shell = (p.h_cab_shell * (t_cab - t_shell) + h_amb * (env.t_amb - t_shell)) / p.c_shell;
    let d_evap = if act.compressor_on {
        (act.t_evap_set - t_evap) / (p.tau_evap + p.tau_evap_flow * w)
    } else {
        (out.t_mix - t_evap) / p.tau_evap_off
    };
    Thermal([d_cab, d_int, d_shell, d_evap, out.p_c, out.p_bl, out.q_coil])
}

fn axpy(x: &Thermal, h: f64, k: &Thermal) -> Thermal {
    let mut y = x.0;
    for (yi, ki) in y.iter_mut().zip(k.0.iter()) {
        *yi += h * ki;
    }
    Thermal(y)
}

/// One RK4 step of length `p.dt`. Returns the next state, the outputs at the
/// new state under the same actuation, and the energies integrated over the step.
pub fn plant_step(
    s: &PlantState,
    act: &Actuation,
    env: &Environment,
    p: &PlantParams,
) -> (PlantState, PlantOutputs, StepIntegrals) {
    let h = p.dt;
    let x0 = Thermal([s.t_cab, s.t_int, s.t_shell, s.t_evap, 0.0, 0.0, 0.0]);
    let k1 = derivative(&x0, act, env, p);
    let k2 = derivative(&axpy(&x0, 0.5 * h, &k1), act, env, p);
    let k3 = derivative(&axpy(&x0, 0.5 * h, &k2), act, env, p);
    let k4 = derivative(&axpy(&x0, h, &k3), act, env, p);
    let mut x = x0.0;
    for i in 0..7 {
        x[i] += h / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i]);
    }
    let next = PlantState {
        t_cab: x[0],
        t_int: x[1],
        t_shell: x[2],
        t_evap: x[3],
        ..*s
    };
    let out = plant_outputs(next.t_cab, next.t_evap, act, env, p);
    let integrals = StepIntegrals {
        compressor_energy: x[4],
        blower_energy: x[5],
        heat_removed: x[6],
    };
    (next, out, integrals)
}

/// Advances the plant over `duration` seconds with a held actuation.
/// `duration` must be a whole number of plant steps.
pub fn advance(
    s: &PlantState,
    act: &Actuation,
    env: &Environment,
    p: &PlantParams,
    duration: f64,
) -> (PlantState, StepIntegrals) {
    let steps = (duration / p.dt).round() as usize;
    let mut state = *s;
    let mut total = StepIntegrals::default();
    for _ in 0..steps {
        let (next, _, e) = plant_step(&state, act, env, p);
        state = next;
        total.compressor_energy += e.compressor_energy;
        total.blower_energy += e.blower_energy;
        total.heat_removed += e.heat_removed;
    }
    (state, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiSetpoints {
    #[serde(rename = "T_cab_set")]
    pub t_cab_set: f64,
    #[serde(rename = "T_evap_set")]
    pub t_evap_set: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiMeasurement {
    pub t_cab: f64,
    pub t_evap: f64,
}

/// One update of the nominal controller, sampled every `period` seconds.
///
/// The blower loop tracks cabin temperature; the evaporator loop trims the
/// cooling command so the wall tracks its set-point. Integrators use
/// back-calculation and are clamped to their limits. Updates the integrator and
/// latch fields of `s`.
pub fn nominal_pi_step(
    s: &mut PlantState,
    setpoints: &PiSetpoints,
    meas: &PiMeasurement,
    p: &PlantParams,
    period: f64,
) -> Actuation {
    let pi = &p.pi;

    let e_cab = meas.t_cab - setpoints.t_cab_set;
    let w_raw = pi.blower_ff + pi.blower_kp * e_cab + s.pi_blower_i;
    let w_bl = w_raw.clamp(pi.w_bl_min, pi.w_bl_max);
    s.pi_blower_i = (s.pi_blower_i + period * (pi.blower_ki * e_cab + pi.back_calc * (w_bl - w_raw)))
        .clamp(-pi.blower_i_limit, pi.blower_i_limit);

    if s.ac_on && meas.t_evap < setpoints.t_evap_set - pi.hysteresis {
        s.ac_on = false;
    } else if !s.ac_on && meas.t_evap > setpoints.t_evap_set + pi.hysteresis {
        s.ac_on = true;
    }
    if !s.ac_on {
        return Actuation::off(w_bl);
    }

    let e_evap = meas.t_evap - setpoints.t_evap_set;
    let cmd_raw = pi.evap_ff - pi.evap_kp * e_evap - s.pi_evap_i;
    let cmd = cmd_raw.clamp(pi.t_evap_set_min, pi.t_evap_set_max);
    // Integrator enters with a minus sign, so back-calculation flips too.
    s.pi_evap_i = (s.pi_evap_i + period * (pi.evap_ki * e_evap - pi.back_calc * (cmd - cmd_raw)))
        .clamp(-pi.evap_i_limit, pi.evap_i_limit);
    Actuation::on(w_bl, cmd)
}
