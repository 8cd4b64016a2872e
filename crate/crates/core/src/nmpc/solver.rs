//! Projected quasi-Newton solver for the soft-constrained problem.
//!
//! Each soft bound `r(u) <= 0` with weight `a` contributes `a·max(0, r)`. The
//! solver works on the elastic form `min f + Σ a·v` subject to `r <= v`,
//! `v >= 0`, handled by a bound-constrained augmented Lagrangian. The slacks are
//! minimized out in closed form, leaving a smooth piecewise-quadratic term in
//! `r + λ/ρ` whose slope saturates at `a`. Multipliers converge to those of the
//! exact-penalty problem, so the zone width `a/ρ` need not shrink to zero.
//! Inner problems are box-constrained and solved by projected Newton-type
//! steps: a Lagrangian Hessian from central differences updated by BFGS, plus
//! the exact curvature of the penalty terms.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ControlInput, State};

use super::evaluate::{evaluate_nlp, power_cost_with_gradient, StepViolation};
use super::rollout::rollout;
use super::{unpack, OcpInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Cap on inner iterations summed over all multiplier updates.
    pub max_iterations: usize,
    /// First-order residual at which the solver stops: projected gradient in
    /// box-scaled variables relative to `max(1, |power cost|)`, and the
    /// multiplier-update step in °C.
    pub tolerance: f64,
    /// Initial width of the quadratic zone of the penalty terms, °C.
    pub zone_width: f64,
    /// Smallest zone width the updates may reach, °C.
    pub min_zone_width: f64,
    /// Residual at which the first inner problem hands over to a multiplier update.
    pub inner_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            zone_width: 1.0,
            min_zone_width: 1e-6,
            inner_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    /// Optimal moves `u(0..Nu)`.
    pub u: Vec<ControlInput>,
    /// Predicted states `x(0..=Np)`.
    pub states: Vec<State>,
    /// Bound excess at steps `0..=Nc`.
    pub violations: Vec<StepViolation>,
    /// Optimal slacks `v_sl(i)`, `[T_cab, T_evap]`.
    pub slacks: Vec<[f64; 2]>,
    pub cost: f64,
    pub power_cost: f64,
    pub penalty_cost: f64,
    pub iterations: usize,
    pub residual: f64,
    /// False when the iteration cap was reached or the line search stalled.
    pub converged: bool,
    pub wall_time: Duration,
}

impl SolveResult {
    /// Bitwise equality of everything except wall time.
    pub fn same_solution(&self, other: &Self) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let flat_u = |r: &Self| r.u.iter().flat_map(|u| [u.w_bl, u.t_evap_set]).collect::<Vec<_>>();
        let flat_x = |r: &Self| r.states.iter().flat_map(|x| [x.t_cab, x.t_evap]).collect::<Vec<_>>();
        let flat_s = |r: &Self| r.slacks.iter().flatten().copied().collect::<Vec<_>>();
        bits(&flat_u(self)) == bits(&flat_u(other))
            && bits(&flat_x(self)) == bits(&flat_x(other))
            && bits(&flat_s(self)) == bits(&flat_s(other))
            && self.cost.to_bits() == other.cost.to_bits()
            && self.iterations == other.iterations
            && self.residual.to_bits() == other.residual.to_bits()
            && self.converged == other.converged
    }

    /// Largest slack over the constraint horizon.
    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().flatten().fold(0.0, |m: f64, v| m.max(*v))
    }

    pub fn applied(&self) -> ControlInput {
        self.u[0]
    }
}

/// Penalty term of one soft bound at `q = r + λ/ρ`, with `ρ = a/width`, and
/// its first two derivatives.
fn elastic(q: f64, a: f64, width: f64) -> (f64, f64, f64) {
    if q <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if q < width {
        let rho = a / width;
        (0.5 * rho * q * q, rho * q, rho)
    } else {
        (a * (q - 0.5 * width), a, 0.0)
    }
}

/// One soft state bound, written as `r(u) <= 0`.
struct Constraint {
    value: f64,
    weight: f64,
    grad: Vec<f64>,
}

/// Multiplier estimates and zone width of the current outer iteration.
struct Penalty {
    lam: Vec<f64>,
    width: f64,
}

impl Penalty {
    fn term(&self, j: usize, c: &Constraint, r: f64) -> (f64, f64, f64) {
        elastic(r + self.lam[j] * self.width / c.weight, c.weight, self.width)
    }
}

/// Everything the solver needs at one point, in box-scaled coordinates.
struct Point {
    z: Vec<f64>,
    value: f64,
    power: f64,
    /// Gradient of the penalized objective.
    grad: Vec<f64>,
    /// Gradient of the power cost alone.
    grad_power: Vec<f64>,
    cons: Vec<Constraint>,
}

struct Problem<'a> {
    inst: &'a OcpInstance,
    lower: Vec<f64>,
    range: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(inst: &'a OcpInstance) -> Self {
        let lower = inst.lower();
        let range = inst.upper().iter().zip(&lower).map(|(u, l)| u - l).collect();
        Self { inst, lower, range }
    }

    fn to_u(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.lower).zip(&self.range).map(|((z, l), r)| l + z * r).collect()
    }

    fn to_z(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.range)
            .map(|((u, l), r)| if *r > 0.0 { ((u - l) / r).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }

    /// Soft bounds at steps `1..=Nc` with nonzero weight; step 0 is fixed by the
    /// initial state and does not depend on the inputs.
    fn constraints(&self, u: &[f64]) -> (f64, Vec<f64>, Vec<Constraint>) {
        let inst = self.inst;
        let ro = rollout(inst, u);
        let (power, grad_u) = power_cost_with_gradient(inst, u, &ro);
        let grad_power = grad_u.iter().zip(&self.range).map(|(g, r)| g * r).collect();
        let a = inst.schedule.a_sl;
        let mut cons = Vec::new();
        for i in 1..=inst.horizon.nc {
            let x = &ro.states[i];
            let lo = &inst.schedule.state_lower[i];
            let hi = &inst.schedule.state_upper[i];
            let rows = [ro.d_cab_row(i), ro.d_evap_row(i)];
            let specs = [
                (x.t_cab - hi.t_cab, a[0], 0, 1.0),
                (lo.t_cab - x.t_cab, a[0], 0, -1.0),
                (x.t_evap - hi.t_evap, a[1], 1, 1.0),
                (lo.t_evap - x.t_evap, a[1], 1, -1.0),
            ];
            for (r, weight, state, sign) in specs {
                if weight == 0.0 {
                    continue;
                }
                let grad = rows[state].iter().zip(&self.range).map(|(d, rg)| sign * d * rg).collect();
                cons.push(Constraint { value: r, weight, grad });
            }
        }
        (power, grad_power, cons)
    }

    fn eval(&self, z: Vec<f64>, pen: &Penalty) -> Point {
        let u = self.to_u(&z);
        let (power, grad_power, cons) = self.constraints(&u);
        let mut value = power;
        let mut grad = grad_power.clone();
        for (j, c) in cons.iter().enumerate() {
            let (phi, dphi, _) = pen.term(j, c, c.value);
            value += phi;
            for (gi, ci) in grad.iter_mut().zip(&c.grad) {
                *gi += dphi * ci;
            }
        }
        Point {
            z,
            value,
            power,
            grad,
            grad_power,
            cons,
        }
    }

    fn constraint_count(&self) -> usize {
        let (_, _, cons) = self.constraints(&self.inst.midpoint());
        cons.len()
    }

    /// Gradient of `power + Σ λ_j r_j`.
    fn lagrangian_grad(&self, pt: &Point, multipliers: &[f64]) -> Vec<f64> {
        let mut g = pt.grad_power.clone();
        for (c, lam) in pt.cons.iter().zip(multipliers) {
            for (gi, ci) in g.iter_mut().zip(&c.grad) {
                *gi += lam * ci;
            }
        }
        g
    }

    /// First-order multiplier estimates `ρ·max(0, r + λ/ρ)` capped at the weight.
    fn multipliers(pt: &Point, pen: &Penalty) -> Vec<f64> {
        pt.cons.iter().enumerate().map(|(j, c)| pen.term(j, c, c.value).1).collect()
    }

    /// Central-difference Hessian of the Lagrangian part, made positive definite.
    fn initial_hessian(&self, pt: &Point, pen: &Penalty, floor: f64) -> DMatrix<f64> {
        let n = pt.z.len();
        let lam = Self::multipliers(pt, pen);
        let h = 1e-5;
        let mut hess = DMatrix::zeros(n, n);
        for j in 0..n {
            if self.range[j] == 0.0 {
                continue;
            }
            let mut zp = pt.z.clone();
            let mut zm = pt.z.clone();
            zp[j] += h;
            zm[j] -= h;
            let gp = self.lagrangian_grad(&self.eval(zp, pen), &lam);
            let gm = self.lagrangian_grad(&self.eval(zm, pen), &lam);
            for i in 0..n {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        positive_definite(sym, floor)
    }
}

fn positive_definite(m: DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn project(z: &mut [f64], range: &[f64]) {
    for (zi, r) in z.iter_mut().zip(range) {
        *zi = if *r > 0.0 { zi.clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Infinity norm of the projected step `P(z − g/s) − z` with the gradient
/// scaled by `s = max(1, |power cost|)`.
fn residual(pt: &Point, range: &[f64]) -> f64 {
    let scale = pt.power.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for ((z, g), r) in pt.z.iter().zip(&pt.grad).zip(range) {
        if *r > 0.0 {
            worst = worst.max(((z - g / scale).clamp(0.0, 1.0) - z).abs());
        }
    }
    worst
}

enum StepOutcome {
    Accepted(Point),
    Failed,
}

/// Minimizer over `(0, 1]` of the model along `d`: the quadratic Lagrangian
/// part plus the penalty terms of the linearized constraints. The model is
/// convex in `t`, so its derivative is bracketed by bisection. Constraints
/// outside their quadratic zone carry no curvature in `d`; this stops the step
/// where they start to bind.
fn model_step_length(pt: &Point, d: &[f64], held: &[bool], bfgs: &DMatrix<f64>, pen: &Penalty) -> f64 {
    // Held components run into their bound at once.
    let d: Vec<f64> = pt
        .z
        .iter()
        .zip(d)
        .zip(held)
        .map(|((z, d), h)| if *h { (z + d).clamp(0.0, 1.0) - z } else { *d })
        .collect();
    let dv = DVector::from_column_slice(&d);
    let curvature = dv.dot(&(bfgs * &dv));
    let slope: f64 = pt.grad_power.iter().zip(&d).map(|(g, d)| g * d).sum();
    let rates: Vec<f64> = pt.cons.iter().map(|c| c.grad.iter().zip(&d).map(|(g, d)| g * d).sum()).collect();
    let deriv = |t: f64| {
        slope
            + t * curvature
            + pt.cons
                .iter()
                .zip(&rates)
                .enumerate()
                .map(|(j, (c, s))| pen.term(j, c, c.value + t * s).1 * s)
                .sum::<f64>()
    };
    if deriv(0.0) >= 0.0 || deriv(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Armijo backtracking along the projection arc `P(z + t·d)`, starting from the
/// model step length.
fn arc_search(prob: &Problem, pt: &Point, step: &Direction, bfgs: &DMatrix<f64>, pen: &Penalty) -> StepOutcome {
    let d = &step.d;
    let mut t = model_step_length(pt, d, &step.held, bfgs, pen);
    for _ in 0..60 {
        let mut z: Vec<f64> = pt.z.iter().zip(d).map(|(z, d)| z + t * d).collect();
        project(&mut z, &prob.range);
        let decrease: f64 = z.iter().zip(&pt.z).zip(&pt.grad).map(|((a, b), g)| g * (a - b)).sum();
        if decrease < 0.0 {
            let trial = prob.eval(z, pen);
            if trial.value <= pt.value + 1e-4 * decrease {
                return StepOutcome::Accepted(trial);
            }
        } else if z == pt.z {
            break;
        }
        t *= 0.5;
    }
    StepOutcome::Failed
}

/// Newton-type direction on the free variables; fixed variables get a scaled
/// gradient step that the projection clips.
struct Direction {
    d: Vec<f64>,
    /// Variables kept on or driven onto their bound.
    held: Vec<bool>,
}

fn direction(prob: &Problem, pt: &Point, bfgs: &DMatrix<f64>, pen: &Penalty, eps: f64) -> Direction {
    let n = pt.z.len();
    let mut hess = bfgs.clone();
    for (j, c) in pt.cons.iter().enumerate() {
        let curv = pen.term(j, c, c.value).2;
        if curv > 0.0 {
            for i in 0..n {
                for k in 0..n {
                    hess[(i, k)] += curv * c.grad[i] * c.grad[k];
                }
            }
        }
    }
    let mut active: Vec<bool> = (0..n)
        .map(|i| {
            prob.range[i] == 0.0
                || (pt.z[i] <= eps && pt.grad[i] > 0.0)
                || (pt.z[i] >= 1.0 - eps && pt.grad[i] < 0.0)
        })
        .collect();
    let mut d = vec![0.0; n];
    for i in (0..n).filter(|&i| active[i]) {
        d[i] = -pt.grad[i] / hess[(i, i)].max(1e-12);
    }
    // Free variables on a bound whose Newton component points outward are held
    // and the subspace step is recomputed.
    loop {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        if free.is_empty() {
            return Direction { d, held: active };
        }
        let m = free.len();
        let sub = DMatrix::from_fn(m, m, |a, b| hess[(free[a], free[b])]);
        let rhs = DVector::from_fn(m, |a, _| -pt.grad[free[a]]);
        let sol = sub
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .unwrap_or_else(|| {
                let reg = positive_definite(sub, 1e-8);
                reg.cholesky().map(|c| c.solve(&rhs)).unwrap_or(rhs)
            });
        let mut blocked = false;
        for (a, &i) in free.iter().enumerate() {
            d[i] = sol[a];
            if (pt.z[i] <= 0.0 && d[i] < 0.0) || (pt.z[i] >= 1.0 && d[i] > 0.0) {
                active[i] = true;
                d[i] = 0.0;
                blocked = true;
            }
        }
        if !blocked {
            return Direction { d, held: active };
        }
    }
}

fn bfgs_update(b: &mut DMatrix<f64>, s: &[f64], y: &[f64]) {
    let s = DVector::from_column_slice(s);
    let mut y = DVector::from_column_slice(y);
    let bs = &*b * &s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-16) {
        return;
    }
    // Powell damping keeps the update positive definite.
    let sy = s.dot(&y);
    if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y = &y * theta + &bs * (1.0 - theta);
    }
    let sy = s.dot(&y);
    if !(sy > 1e-16) {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &y * y.transpose() / sy;
}

/// Solves one instance from `warm` (or the box midpoint).
pub fn solve_ocp(inst: &OcpInstance, warm: Option<&[f64]>) -> Result<SolveResult> {
    solve_ocp_with(inst, warm, &SolverOptions::default())
}

pub fn solve_ocp_with(inst: &OcpInstance, warm: Option<&[f64]>, opts: &SolverOptions) -> Result<SolveResult> {
    inst.validate()?;
    let started = Instant::now();
    let prob = Problem::new(inst);
    let start = match warm {
        Some(w) if w.len() == inst.dim() => prob.to_z(w),
        _ => prob.to_z(&inst.midpoint()),
    };
    let mut pen = Penalty {
        lam: vec![0.0; prob.constraint_count()],
        width: opts.zone_width,
    };
    let tol = opts.tolerance;
    let mut inner_tol = opts.inner_tolerance.max(tol);
    let mut pt = prob.eval(start, &pen);
    let mut iterations = 0;
    let mut converged = false;
    let mut last_shift = f64::INFINITY;
    'outer: loop {
        let floor = 1e-6 * pt.power.abs().max(1.0);
        let mut bfgs = prob.initial_hessian(&pt, &pen, floor);
        let mut refreshed = true;
        loop {
            let res = residual(&pt, &prob.range);
            if res <= inner_tol {
                break;
            }
            if iterations >= opts.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let d = direction(&prob, &pt, &bfgs, &pen, res.min(1e-2));
            match arc_search(&prob, &pt, &d, &bfgs, &pen) {
                StepOutcome::Accepted(next) => {
                    let lam = Problem::multipliers(&next, &pen);
                    let g_new = prob.lagrangian_grad(&next, &lam);
                    let g_old = prob.lagrangian_grad(&pt, &lam);
                    let s: Vec<f64> = next.z.iter().zip(&pt.z).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g_old).map(|(a, b)| a - b).collect();
                    bfgs_update(&mut bfgs, &s, &y);
                    pt = next;
                    refreshed = false;
                }
                StepOutcome::Failed if !refreshed => {
                    bfgs = prob.initial_hessian(&pt, &pen, floor);
                    refreshed = true;
                }
                StepOutcome::Failed => break 'outer,
            }
        }
        // Multiplier update; `shift` is the resulting move of the penalty
        // terms' argument, °C.
        let lam = Problem::multipliers(&pt, &pen);
        let shift = pt
            .cons
            .iter()
            .zip(lam.iter().zip(&pen.lam))
            .map(|(c, (new, old))| (new - old).abs() * pen.width / c.weight)
            .fold(0.0, f64::max);
        pen.lam = lam;
        pt = prob.eval(pt.z, &pen);
        let slow = shift > 0.25 * last_shift;
        last_shift = shift;
        if shift <= tol && residual(&pt, &prob.range) <= tol {
            converged = true;
            break;
        }
        if slow && pen.width > opts.min_zone_width {
            pen.width = (pen.width * 0.1).max(opts.min_zone_width);
            pt = prob.eval(pt.z, &pen);
        }
        inner_tol = if shift <= tol { tol } else { (inner_tol * 0.1).max(tol) };
    }

    let shift = if last_shift.is_finite() { last_shift } else { 0.0 };
    let final_res = residual(&pt, &prob.range).max(shift);
    let u = prob.to_u(&pt.z);
    let ev = evaluate_nlp(inst, &u);
    let slacks = ev.violations.iter().map(StepViolation::slack).collect();
    Ok(SolveResult {
        u: unpack(&u),
        states: ev.states,
        violations: ev.violations,
        slacks,
        cost: ev.cost,
        power_cost: ev.power_cost,
        penalty_cost: ev.penalty_cost,
        iterations,
        residual: final_res,
        converged,
        wall_time: started.elapsed(),
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmpc::testing::uniform;
    use crate::nmpc::{brute_force_ocp, evaluate_cost, GridResolution};

    fn in_box(inst: &OcpInstance, r: &SolveResult) -> bool {
        let u: Vec<f64> = r.u.iter().flat_map(|m| [m.w_bl, m.t_evap_set]).collect();
        u.iter().zip(inst.lower()).zip(inst.upper()).all(|((v, l), h)| l <= *v && *v <= h)
    }

    #[test]
    fn matches_brute_force_on_single_move() {
        let inst = uniform(State::new(26.0, 8.0), 1, 25.0);
        let r = solve_ocp(&inst, None).unwrap();
        let bf = brute_force_ocp(&inst, &GridResolution::default()).unwrap();
        assert!(r.converged);
        assert!(r.cost <= bf.cost * (1.0 + 1e-3));
        assert!((r.u[0].w_bl - bf.u[0].w_bl).abs() <= 0.001 + 1e-9);
        assert!((r.u[0].t_evap_set - bf.u[0].t_evap_set).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn repeated_solves_are_identical() {
        let inst = uniform(State::new(28.0, 9.0), 6, 25.0);
        let a = solve_ocp(&inst, None).unwrap();
        let b = solve_ocp(&inst, None).unwrap();
        assert!(a.same_solution(&b));
    }

    #[test]
    fn unbounded_cabin_idles_the_blower() {
        let inst = uniform(State::new(26.0, 8.0), 3, f64::INFINITY);
        let r = solve_ocp(&inst, None).unwrap();
        assert!(r.converged);
        assert!(r.u.iter().all(|m| (m.w_bl - 0.05).abs() < 1e-6));
        assert_eq!(r.penalty_cost, 0.0);
    }

    #[test]
    fn reported_cost_is_the_evaluated_cost() {
        let inst = uniform(State::new(29.0, 10.0), 6, 26.0);
        let r = solve_ocp(&inst, None).unwrap();
        let u: Vec<f64> = r.u.iter().flat_map(|m| [m.w_bl, m.t_evap_set]).collect();
        assert!((r.cost - evaluate_cost(&inst, &u)).abs() <= 1e-10 * r.cost.abs());
        assert!(in_box(&inst, &r));
    }

    #[test]
    fn warm_start_from_solution_is_cheap() {
        let inst = uniform(State::new(25.5, 7.0), 6, 25.0);
        let cold = solve_ocp(&inst, None).unwrap();
        let u: Vec<f64> = cold.u.iter().flat_map(|m| [m.w_bl, m.t_evap_set]).collect();
        let warm = solve_ocp(&inst, Some(&u)).unwrap();
        assert!(warm.converged);
        assert!(warm.iterations < cold.iterations);
        assert!((warm.cost - cold.cost).abs() <= 1e-6 * cold.cost);
    }

    #[test]
    fn unreachable_bound_gives_positive_slack() {
        let inst = uniform(State::new(30.0, 10.0), 2, 22.0);
        let r = solve_ocp(&inst, None).unwrap();
        assert!(r.max_slack() > 1.0);
        assert!(in_box(&inst, &r));
        assert!(r.u.iter().all(|m| m.w_bl > 0.14));
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let mut inst = uniform(State::new(26.0, 8.0), 2, 25.0);
        inst.schedule.state_upper.pop();
        assert!(solve_ocp(&inst, None).is_err());
    }
}
