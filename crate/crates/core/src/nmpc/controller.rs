use crate::error::Result;
use crate::model::ControlInput;

use super::solver::{solve_ocp, SolveResult};
use super::OcpInstance;

/// Previous moves shifted by one with the last move repeated, clipped to the
/// current input bounds.
pub fn shifted_warm_start(inst: &OcpInstance, previous: &SolveResult) -> Vec<f64> {
    let nu = inst.horizon.nu;
    let prev = &previous.u;
    let lower = inst.lower();
    let upper = inst.upper();
    let mut out = Vec::with_capacity(2 * nu);
    for j in 0..nu {
        let src = prev[(j + 1).min(prev.len() - 1)];
        out.push(src.w_bl.clamp(lower[2 * j], upper[2 * j]));
        out.push(src.t_evap_set.clamp(lower[2 * j + 1], upper[2 * j + 1]));
    }
    out
}

/// One receding-horizon update: solve from the shifted previous solution (or
/// the box midpoint) and apply the first move.
pub fn mpc_step(inst: &OcpInstance, previous: Option<&SolveResult>) -> Result<(ControlInput, SolveResult)> {
    let warm = previous.filter(|p| !p.u.is_empty()).map(|p| shifted_warm_start(inst, p));
    let res = solve_ocp(inst, warm.as_deref())?;
    Ok((res.applied(), res))
}
