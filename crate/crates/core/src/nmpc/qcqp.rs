//! Stacked quadratic form of the prediction model for one step.
//!
//! With `z = [x(i+1); x(i); u(i); v(i)]` the cabin update becomes the quadratic
//! residual `zᵀCz + A1·z + c1` and the evaporator and inlet air equations the
//! linear residuals `A2·z + c`. Every residual is written as "left side minus
//! right side" of its equation, so it vanishes exactly when the equation holds.

use nalgebra::{SMatrix, SVector};

use crate::model::{ControlInput, Exogenous, ModelParams, State};

/// Positions inside the stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    TCabNext = 0,
    TEvapNext = 1,
    TCab = 2,
    TEvap = 3,
    WBl = 4,
    TEvapSet = 5,
    TInt = 6,
    TShell = 7,
    TAin = 8,
}

pub type Stacked = SVector<f64, 9>;

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpMatrices {
    pub c: SMatrix<f64, 9, 9>,
    pub a1: SMatrix<f64, 1, 9>,
    pub a2: SMatrix<f64, 2, 9>,
    /// Constant terms of the cabin, evaporator and inlet air residuals.
    pub offsets: [f64; 3],
}

impl QcqpMatrices {
    /// Stacks one step: successor state, current state, input and auxiliary temperatures.
    pub fn stack(next: State, x: State, u: ControlInput, w: &Exogenous, t_ain: f64) -> Stacked {
        Stacked::from_column_slice(&[
            next.t_cab,
            next.t_evap,
            x.t_cab,
            x.t_evap,
            u.w_bl,
            u.t_evap_set,
            w.t_int,
            w.t_shell,
            t_ain,
        ])
    }

    /// Residuals of the cabin, evaporator and inlet air equations at `z`.
    pub fn residuals(&self, z: &Stacked) -> [f64; 3] {
        let quad = (z.transpose() * self.c * z)[(0, 0)];
        let r1 = quad + (self.a1 * z)[(0, 0)] + self.offsets[0];
        let lin = self.a2 * z;
        [r1, lin[0] + self.offsets[1], lin[1] + self.offsets[2]]
    }
}

pub fn build_qcqp_matrices(p: &ModelParams) -> QcqpMatrices {
    use Slot::*;
    let g = &p.gamma;
    let mut c = SMatrix::<f64, 9, 9>::zeros();
    let half = 0.5 * g[2];
    // −γ3·T_ain·W_bl + γ3·T_cab·W_bl, split symmetrically.
    for (a, b, v) in [(WBl, TAin, -half), (WBl, TCab, half)] {
        c[(a as usize, b as usize)] = v;
        c[(b as usize, a as usize)] = v;
    }

    let mut a1 = SMatrix::<f64, 1, 9>::zeros();
    a1[TCabNext as usize] = 1.0;
    a1[TCab as usize] = -1.0 + g[0] + g[1];
    a1[TInt as usize] = -g[0];
    a1[TShell as usize] = -g[1];

    let mut a2 = SMatrix::<f64, 2, 9>::zeros();
    a2[(0, TEvapNext as usize)] = 1.0;
    a2[(0, TEvap as usize)] = -(g[3] + g[4]);
    a2[(0, TEvapSet as usize)] = g[4];
    a2[(1, TAin as usize)] = 1.0;
    a2[(1, TEvap as usize)] = -g[5];
    a2[(1, WBl as usize)] = -g[6];

    QcqpMatrices {
        c,
        a1,
        a2,
        offsets: [-p.tau[0], -p.tau[1], -p.tau[2]],
    }
}
