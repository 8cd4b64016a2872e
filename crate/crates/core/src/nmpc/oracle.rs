//! Exhaustive grid search over the input box, used to check the solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{model_step, stage_cost, ControlInput, State};

use super::evaluate::{evaluate_nlp, StepViolation};
use super::{pack, OcpInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridResolution {
    /// kg/s
    pub w_bl: f64,
    /// °C
    pub t_evap_set: f64,
}

impl Default for GridResolution {
    fn default() -> Self {
        Self {
            w_bl: 0.001,
            t_evap_set: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub u: Vec<ControlInput>,
    pub cost: f64,
    pub evaluated: usize,
}

/// `lo, lo + step, ...` up to `hi`, always ending exactly at `hi`.
fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut v: Vec<f64> = (0..=n).map(|k| lo + k as f64 * step).collect();
    if let Some(last) = v.last_mut() {
        if (hi - *last).abs() <= 1e-9 * step {
            *last = hi;
        } else {
            v.push(hi);
        }
    }
    v
}

fn move_grid(inst: &OcpInstance, j: usize, res: &GridResolution) -> Vec<ControlInput> {
    let lo = inst.schedule.input_lower[j];
    let hi = inst.schedule.input_upper[j];
    let ws = axis(lo.w_bl, hi.w_bl, res.w_bl);
    let ss = axis(lo.t_evap_set, hi.t_evap_set, res.t_evap_set);
    ws.iter()
        .flat_map(|&w| ss.iter().map(move |&s| ControlInput::new(w, s)))
        .collect()
}

/// Cost of steps `from..=Np` starting at state `x` with input `u` held throughout.
fn tail_cost(inst: &OcpInstance, mut x: State, u: ControlInput, from: usize) -> f64 {
    let mut cost = 0.0;
    for i in from..=inst.horizon.np {
        cost += stage_cost(x, u, inst.exo.t_amb, &inst.model, &inst.power);
        if i <= inst.horizon.nc {
            cost += StepViolation::at(inst, i, &x).penalty(&inst.schedule.a_sl);
        }
        if i < inst.horizon.np {
            x = model_step(x, u, inst.exo, &inst.model);
        }
    }
    cost
}

/// Evaluates every grid point of the input box (one grid per move) and returns
/// the cheapest. Grid points are visited in increasing `W_bl`, then increasing
/// `T_evap_set`, move by move, and only a strictly smaller cost replaces the
/// incumbent, so ties go to the smaller inputs.
pub fn brute_force_ocp(inst: &OcpInstance, res: &GridResolution) -> Result<BruteForceResult> {
    inst.validate()?;
    let nu = inst.horizon.nu;
    if nu > 2 {
        return Err(Error::BruteForceRefused(nu));
    }
    if !(res.w_bl > 0.0 && res.t_evap_set > 0.0) {
        return Err(Error::Input("grid resolution must be positive".into()));
    }
    let mut best: Option<(f64, Vec<ControlInput>)> = None;
    let mut evaluated = 0;
    let mut consider = |cost: f64, u: &[ControlInput]| {
        evaluated += 1;
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, u.to_vec()));
        }
    };

    let first = move_grid(inst, 0, res);
    if nu == 1 {
        for u0 in &first {
            consider(tail_cost(inst, inst.x0, *u0, 0), &[*u0]);
        }
    } else {
        let second = move_grid(inst, 1, res);
        for u0 in &first {
            // Step 0 depends on the first move only.
            let x0 = inst.x0;
            let mut head = stage_cost(x0, *u0, inst.exo.t_amb, &inst.model, &inst.power);
            head += StepViolation::at(inst, 0, &x0).penalty(&inst.schedule.a_sl);
            let x1 = model_step(x0, *u0, inst.exo, &inst.model);
            for u1 in &second {
                consider(head + tail_cost(inst, x1, *u1, 1), &[*u0, *u1]);
            }
        }
    }
    let (_, u) = best.expect("grid is never empty");
    let cost = evaluate_nlp(inst, &pack(&u)).cost;
    Ok(BruteForceResult { u, cost, evaluated })
}
