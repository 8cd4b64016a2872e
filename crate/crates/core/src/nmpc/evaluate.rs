use serde::{Deserialize, Serialize};

use crate::model::{inlet_air_temperature, stage_cost, State};

use super::rollout::{rollout, Rollout};
use super::OcpInstance;

/// Bound excess at one prediction step, indexed `[T_cab, T_evap]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepViolation {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl StepViolation {
    pub fn at(inst: &OcpInstance, i: usize, x: &State) -> Self {
        let lo = &inst.schedule.state_lower[i];
        let hi = &inst.schedule.state_upper[i];
        Self {
            lower: [(lo.t_cab - x.t_cab).max(0.0), (lo.t_evap - x.t_evap).max(0.0)],
            upper: [(x.t_cab - hi.t_cab).max(0.0), (x.t_evap - hi.t_evap).max(0.0)],
        }
    }

    /// Optimal slack: both bounds of a state share one nonnegative slack.
    pub fn slack(&self) -> [f64; 2] {
        [self.lower[0].max(self.upper[0]), self.lower[1].max(self.upper[1])]
    }

    pub fn penalty(&self, a_sl: &[f64; 2]) -> f64 {
        let v = self.slack();
        a_sl[0] * v[0] + a_sl[1] * v[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpEvaluation {
    /// Power cost plus slack penalty.
    pub cost: f64,
    pub power_cost: f64,
    pub penalty_cost: f64,
    pub gradient: Vec<f64>,
    /// One entry per step `0..=Nc`.
    pub violations: Vec<StepViolation>,
    pub states: Vec<State>,
}

/// Electrical power summed over steps `0..=Np` and its gradient.
pub(crate) fn power_cost_with_gradient(inst: &OcpInstance, u: &[f64], ro: &Rollout) -> (f64, Vec<f64>) {
    let p = &inst.model;
    let q = &inst.power;
    let k = q.compressor_gain();
    let t_amb = inst.exo.t_amb;
    let mut cost = 0.0;
    let mut grad = vec![0.0; ro.dim];
    for (i, x) in ro.states.iter().enumerate() {
        let ui = inst.input_at(u, i);
        let j = i.min(inst.horizon.nu - 1);
        cost += stage_cost(*x, ui, t_amb, p, q);

        let t_ain = inlet_air_temperature(x.t_evap, ui.w_bl, p);
        let d_evap = -k * ui.w_bl * p.gamma[5];
        for (g, s) in grad.iter_mut().zip(ro.d_evap_row(i)) {
            *g += d_evap * s;
        }
        grad[2 * j] += k * (t_amb - t_ain) - k * ui.w_bl * p.gamma[6] + 2.0 * q.beta[0] * ui.w_bl + q.beta[1];
    }
    (cost, grad)
}

/// Cost, analytic gradient and bound violations at decision vector `u`.
///
/// The slack penalty is `a_sl · max(0, violation)` summed over steps `0..=Nc`,
/// which equals the minimum over explicit nonnegative slacks. At a kink the
/// penalty contributes a zero subgradient.
pub fn evaluate_nlp(inst: &OcpInstance, u: &[f64]) -> NlpEvaluation {
    let ro = rollout(inst, u);
    let (power_cost, mut gradient) = power_cost_with_gradient(inst, u, &ro);
    let a = &inst.schedule.a_sl;
    let mut penalty_cost = 0.0;
    let mut violations = Vec::with_capacity(inst.horizon.nc + 1);
    for i in 0..=inst.horizon.nc {
        let v = StepViolation::at(inst, i, &ro.states[i]);
        penalty_cost += v.penalty(a);
        let weights = [
            a[0] * (sign(v.upper[0]) - sign(v.lower[0])),
            a[1] * (sign(v.upper[1]) - sign(v.lower[1])),
        ];
        for ((g, dc), de) in gradient.iter_mut().zip(ro.d_cab_row(i)).zip(ro.d_evap_row(i)) {
            *g += weights[0] * dc + weights[1] * de;
        }
        violations.push(v);
    }
    NlpEvaluation {
        cost: power_cost + penalty_cost,
        power_cost,
        penalty_cost,
        gradient,
        violations,
        states: ro.states,
    }
}

fn sign(excess: f64) -> f64 {
    if excess > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Cost only, without sensitivities.
pub fn evaluate_cost(inst: &OcpInstance, u: &[f64]) -> f64 {
    let p = &inst.model;
    let mut x = inst.x0;
    let mut power = 0.0;
    let mut penalty = 0.0;
    for i in 0..=inst.horizon.np {
        let ui = inst.input_at(u, i);
        power += stage_cost(x, ui, inst.exo.t_amb, p, &inst.power);
        if i <= inst.horizon.nc {
            penalty += StepViolation::at(inst, i, &x).penalty(&inst.schedule.a_sl);
        }
        if i < inst.horizon.np {
            x = crate::model::model_step(x, ui, inst.exo, p);
        }
    }
    power + penalty
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmpc::testing::{instance, uniform};
    use crate::nmpc::HorizonConfig;

    #[test]
    fn one_degree_at_the_measurement_costs_one_weight() {
        let inst = uniform(State::new(26.0, 8.0), 1, 25.0);
        let mut relaxed = inst.clone();
        relaxed.schedule.a_sl = [0.0, 0.0];
        let u = [0.1, 6.0];
        let ev = evaluate_nlp(&inst, &u);
        let x1 = ev.states[1].t_cab;
        let expected = 1e5 * (1.0 + (x1 - 25.0).max(0.0));
        assert!((ev.penalty_cost - expected).abs() < 1e-6);
        assert_eq!(evaluate_nlp(&relaxed, &u).penalty_cost, 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let inst = instance(State::new(26.0, 8.0), HorizonConfig { np: 5, nu: 2, nc: 5 }, &[24.0; 6]);
        let u = vec![0.08, 5.0, 0.13, 7.5];
        let ev = evaluate_nlp(&inst, &u);
        assert!(ev.violations.iter().skip(1).all(|v| v.upper[0] > 1e-3));
        for k in 0..u.len() {
            let h = if k % 2 == 0 { 1e-7 } else { 1e-5 };
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (evaluate_cost(&inst, &up) - evaluate_cost(&inst, &dn)) / (2.0 * h);
            assert!((fd - ev.gradient[k]).abs() <= 1e-5 * fd.abs().max(1.0), "{k}: {fd} vs {}", ev.gradient[k]);
        }
    }

    #[test]
    fn penalty_equals_minimum_over_explicit_slacks() {
        let inst = uniform(State::new(26.3, 12.4), 2, 25.0);
        let ev = evaluate_nlp(&inst, &[0.1, 6.0, 0.1, 6.0]);
        for (i, v) in ev.violations.iter().enumerate() {
            let x = ev.states[i];
            let lo = inst.schedule.state_lower[i];
            let hi = inst.schedule.state_upper[i];
            // Smallest grid slack that satisfies lo − v <= x <= hi + v.
            let grid_min = |value: f64, lo: f64, hi: f64, a: f64| {
                (0..=200_000)
                    .map(|n| n as f64 * 1e-5)
                    .filter(|s| lo - s <= value && value <= hi + s)
                    .map(|s| a * s)
                    .fold(f64::INFINITY, f64::min)
            };
            let best = grid_min(x.t_cab, lo.t_cab, hi.t_cab, 1e5) + grid_min(x.t_evap, lo.t_evap, hi.t_evap, 1e5);
            assert!((v.penalty(&inst.schedule.a_sl) - best).abs() <= 1.0 + 1e-9 * best);
        }
    }

    #[test]
    fn cost_only_path_agrees() {
        let inst = instance(State::new(27.0, 6.0), HorizonConfig { np: 6, nu: 3, nc: 4 }, &[27.0, 26.0, 25.0, 25.0, 25.0]);
        let u = vec![0.06, 3.5, 0.14, 9.0, 0.1, 5.0];
        let a = evaluate_nlp(&inst, &u).cost;
        let b = evaluate_cost(&inst, &u);
        assert!((a - b).abs() <= 1e-10 * a.abs());
    }
}
