use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 18] = [
    "t",
    "T_cab",
    "T_evap",
    "T_ain",
    "T_int",
    "T_shell",
    "T_amb",
    "W_bl",
    "T_evap_set",
    "T_cab_ub",
    "P_c",
    "P_bl",
    "E_cum",
    "V_veh",
    "slack_lo",
    "slack_hi",
    "iters",
    "solve_ms",
];

/// One controller step. Temperatures are sampled at `t`; inputs are those held
/// from `t` on and powers are evaluated at `t` under them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    #[serde(rename = "T_cab")]
    pub t_cab: f64,
    #[serde(rename = "T_evap")]
    pub t_evap: f64,
    #[serde(rename = "T_ain")]
    pub t_ain: f64,
    #[serde(rename = "T_int")]
    pub t_int: f64,
    #[serde(rename = "T_shell")]
    pub t_shell: f64,
    #[serde(rename = "T_amb")]
    pub t_amb: f64,
    #[serde(rename = "W_bl")]
    pub w_bl: f64,
    /// NaN while the compressor is off.
    #[serde(rename = "T_evap_set")]
    pub t_evap_set: f64,
    #[serde(rename = "T_cab_ub")]
    pub t_cab_ub: f64,
    /// W
    #[serde(rename = "P_c")]
    pub p_c: f64,
    #[serde(rename = "P_bl")]
    pub p_bl: f64,
    /// Trapezoidal integral of `P_c + P_bl` up to `t`, J.
    #[serde(rename = "E_cum")]
    pub e_cum: f64,
    #[serde(rename = "V_veh")]
    pub v_veh: f64,
    /// Largest lower and upper state-bound excess over the constraint horizon, °C.
    pub slack_lo: f64,
    pub slack_hi: f64,
    pub iters: usize,
    pub solve_ms: f64,
}

impl TraceRecord {
    pub fn power(&self) -> f64 {
        self.p_c + self.p_bl
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Steps on which the optimizer ran.
    pub solver_steps: usize,
    /// Steps on which it stopped at the iteration cap.
    pub capped_steps: usize,
}

impl Trace {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn t_cab(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t_cab).collect()
    }

    /// Fraction of optimizer steps that hit the iteration cap.
    pub fn capped_fraction(&self) -> f64 {
        if self.solver_steps == 0 {
            0.0
        } else {
            self.capped_steps as f64 / self.solver_steps as f64
        }
    }

    pub fn mean_solve_ms(&self) -> f64 {
        if self.solver_steps == 0 {
            return 0.0;
        }
        self.records.iter().map(|r| r.solve_ms).sum::<f64>() / self.solver_steps as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads records back; the run counters are not stored and come back as zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != TRACE_HEADER {
            return Err(Error::Input(format!("unexpected trace header {header:?}")));
        }
        let records = r.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?;
        Ok(Self {
            records,
            ..Default::default()
        })
    }
}
