use crate::model::{inlet_air_temperature, model_step, State};

use super::OcpInstance;

/// Predicted trajectory and its forward sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `Np + 1` states starting at the measurement.
    pub states: Vec<State>,
    /// Row-major `(Np + 1) × dim` sensitivity of `T_cab(i)` to the decision vector.
    pub d_cab: Vec<f64>,
    pub d_evap: Vec<f64>,
    pub dim: usize,
}

impl Rollout {
    pub fn d_cab_row(&self, i: usize) -> &[f64] {
        &self.d_cab[i * self.dim..(i + 1) * self.dim]
    }

    pub fn d_evap_row(&self, i: usize) -> &[f64] {
        &self.d_evap[i * self.dim..(i + 1) * self.dim]
    }
}

/// Simulates the horizon for decision vector `u` (`[W_bl, T_evap_set]` per move)
/// and propagates exact first derivatives by the chain rule.
pub fn rollout(inst: &OcpInstance, u: &[f64]) -> Rollout {
    let p = &inst.model;
    let g = &p.gamma;
    let np = inst.horizon.np;
    let n = inst.dim();
    debug_assert_eq!(u.len(), n);

    let mut states = Vec::with_capacity(np + 1);
    let mut d_cab = vec![0.0; (np + 1) * n];
    let mut d_evap = vec![0.0; (np + 1) * n];
    let mut x = inst.x0;
    states.push(x);
    let evap_pole = g[3] + g[4];
    for i in 0..np {
        let ui = inst.input_at(u, i);
        let j = i.min(inst.horizon.nu - 1);
        let t_ain = inlet_air_temperature(x.t_evap, ui.w_bl, p);

        let cab_cab = 1.0 - g[0] - g[1] - g[2] * ui.w_bl;
        let cab_evap = g[2] * ui.w_bl * g[5];
        let cab_w = g[2] * (t_ain - x.t_cab) + g[2] * ui.w_bl * g[6];

        let (prev, next) = (i * n, (i + 1) * n);
        for k in 0..n {
            d_cab[next + k] = cab_cab * d_cab[prev + k] + cab_evap * d_evap[prev + k];
            d_evap[next + k] = evap_pole * d_evap[prev + k];
        }
        d_cab[next + 2 * j] += cab_w;
        d_evap[next + 2 * j + 1] += -g[4];

        x = model_step(x, ui, inst.exo, p);
        states.push(x);
    }
    Rollout {
        states,
        d_cab,
        d_evap,
        dim: n,
    }
}
