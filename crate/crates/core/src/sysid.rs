//! Excitation, least-squares identification and multi-step validation of the
//! prediction model.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    blower_power, compressor_power, inlet_air_temperature, model_step, simulate_open_loop,
    ControlInput, Exogenous, ModelParams, PowerParams, State,
};
use crate::plant::{self, Actuation, Environment, PlantParams, PlantState};

/// Scaled condition number above which a regression is declared rank deficient.
pub const MAX_CONDITION: f64 = 1e10;

/// Default actuator boxes used to validate excitation ranges.
pub const W_BL_BOX: (f64, f64) = (0.05, 0.15);
pub const T_EVAP_SET_BOX: (f64, f64) = (3.0, 10.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    /// Record length, s.
    pub duration: f64,
    /// Sampling period, s.
    pub sample_period: f64,
    pub w_bl_range: (f64, f64),
    pub t_evap_set_range: (f64, f64),
    /// Time each random level is held, s.
    pub hold_time: f64,
    pub seed: u64,
}

impl ExcitationConfig {
    /// 2000 samples at 0.2 Hz over the full actuator boxes with a 25 s hold.
    pub fn standard(seed: u64) -> Self {
        Self {
            duration: 10_000.0,
            sample_period: 5.0,
            w_bl_range: W_BL_BOX,
            t_evap_set_range: T_EVAP_SET_BOX,
            hold_time: 25.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(usize, usize)> {
        if !(self.sample_period > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Input("duration and sample period must be positive".into()));
        }
        let within = |r: (f64, f64), b: (f64, f64)| r.0 <= r.1 && r.0 >= b.0 - 1e-12 && r.1 <= b.1 + 1e-12;
        if !within(self.w_bl_range, W_BL_BOX) {
            return Err(Error::Input(format!(
                "W_bl range {:?} is empty or outside {:?}",
                self.w_bl_range, W_BL_BOX
            )));
        }
        if !within(self.t_evap_set_range, T_EVAP_SET_BOX) {
            return Err(Error::Input(format!(
                "T_evap_set range {:?} is empty or outside {:?}",
                self.t_evap_set_range, T_EVAP_SET_BOX
            )));
        }
        let samples = whole_multiple(self.duration, self.sample_period)
            .ok_or_else(|| Error::Input("duration must be a multiple of the sample period".into()))?;
        let hold = whole_multiple(self.hold_time, self.sample_period)
            .filter(|h| *h > 0)
            .ok_or_else(|| Error::Input("hold time must be a positive multiple of the sample period".into()))?;
        Ok((samples, hold))
    }
}

fn whole_multiple(x: f64, unit: f64) -> Option<usize> {
    let n = (x / unit).round();
    ((x - n * unit).abs() <= 1e-9 * unit.max(1.0) && n >= 0.0).then_some(n as usize)
}

/// One sampled row. Outputs are sampled at `t` with `W_bl`/`T_evap_set` already
/// applied; those inputs are then held until the next row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdSample {
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
    #[serde(rename = "T_evap_set")]
    pub t_evap_set: f64,
    #[serde(rename = "P_c")]
    pub p_c: f64,
    #[serde(rename = "P_bl")]
    pub p_bl: f64,
    #[serde(rename = "V_veh")]
    pub v_veh: f64,
}

impl IdSample {
    pub fn state(&self) -> State {
        State::new(self.t_cab, self.t_evap)
    }

    pub fn input(&self) -> ControlInput {
        ControlInput::new(self.w_bl, self.t_evap_set)
    }

    pub fn exogenous(&self) -> Exogenous {
        Exogenous::new(self.t_int, self.t_shell, self.t_amb)
    }
}

pub const DATASET_HEADER: [&str; 12] = [
    "t", "T_cab", "T_evap", "T_ain", "T_int", "T_shell", "T_amb", "W_bl", "T_evap_set", "P_c", "P_bl",
    "V_veh",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdDataset {
    pub samples: Vec<IdSample>,
}

impl IdDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.samples.is_empty() {
            w.write_record(DATASET_HEADER)?;
        }
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != DATASET_HEADER {
            return Err(Error::Input(format!("unexpected dataset header {header:?}")));
        }
        let samples = r.deserialize().collect::<std::result::Result<Vec<IdSample>, _>>()?;
        Ok(Self { samples })
    }
}

/// Anything that can be driven with held inputs and sampled.
pub trait DataSource {
    /// Current time, s.
    fn time(&self) -> f64;
    /// Samples all signals with `u` applied at the current instant.
    fn sample(&self, u: &ControlInput) -> IdSample;
    /// Holds `u` for `period` seconds.
    fn advance(&mut self, u: &ControlInput, period: f64);
}

/// The surrogate plant with its compressor enabled and an open-loop input.
#[derive(Debug, Clone)]
pub struct PlantSource {
    pub state: PlantState,
    pub params: PlantParams,
    pub env: Environment,
    pub t: f64,
}

impl PlantSource {
    pub fn new(state: PlantState, params: PlantParams, env: Environment) -> Self {
        Self {
            state,
            params,
            env,
            t: 0.0,
        }
    }
}

impl DataSource for PlantSource {
    fn time(&self) -> f64 {
        self.t
    }

    fn sample(&self, u: &ControlInput) -> IdSample {
        let act = Actuation::on(u.w_bl, u.t_evap_set);
        let out = plant::plant_outputs(self.state.t_cab, self.state.t_evap, &act, &self.env, &self.params);
        IdSample {
            t: self.t,
            t_cab: self.state.t_cab,
            t_evap: self.state.t_evap,
            t_ain: out.t_ain,
            t_int: self.state.t_int,
            t_shell: self.state.t_shell,
            t_amb: self.env.t_amb,
            w_bl: u.w_bl,
            t_evap_set: u.t_evap_set,
            p_c: out.p_c,
            p_bl: out.p_bl,
            v_veh: self.env.v_veh,
        }
    }

    fn advance(&mut self, u: &ControlInput, period: f64) {
        let act = Actuation::on(u.w_bl, u.t_evap_set);
        let (next, _) = plant::advance(&self.state, &act, &self.env, &self.params, period);
        self.state = next;
        self.t += period;
    }
}

/// The prediction model itself as a data source. Interior and shell
/// temperatures follow slow sinusoids with incommensurate periods so that the
/// cabin regression stays well conditioned.
#[derive(Debug, Clone)]
pub struct ModelSource {
    pub x: State,
    pub params: ModelParams,
    pub power: PowerParams,
    pub t_amb: f64,
    pub t: f64,
}

impl ModelSource {
    pub fn new(x: State, params: ModelParams, power: PowerParams, t_amb: f64) -> Self {
        Self {
            x,
            params,
            power,
            t_amb,
            t: 0.0,
        }
    }

    fn exogenous_at(&self, t: f64) -> Exogenous {
        use std::f64::consts::TAU;
        Exogenous::new(
            28.0 + 3.0 * (TAU * t / 900.0).sin(),
            31.0 + 4.0 * (TAU * t / 1370.0 + 1.0).sin(),
            self.t_amb,
        )
    }
}

impl DataSource for ModelSource {
    fn time(&self) -> f64 {
        self.t
    }

    fn sample(&self, u: &ControlInput) -> IdSample {
        let w = self.exogenous_at(self.t);
        IdSample {
            t: self.t,
            t_cab: self.x.t_cab,
            t_evap: self.x.t_evap,
            t_ain: inlet_air_temperature(self.x.t_evap, u.w_bl, &self.params),
            t_int: w.t_int,
            t_shell: w.t_shell,
            t_amb: w.t_amb,
            w_bl: u.w_bl,
            t_evap_set: u.t_evap_set,
            p_c: compressor_power(u.w_bl, self.x.t_evap, w.t_amb, &self.params, &self.power),
            p_bl: blower_power(u.w_bl, &self.power),
            v_veh: 0.0,
        }
    }

    fn advance(&mut self, u: &ControlInput, period: f64) {
        // One model step per call regardless of `period`; callers use Ts.
        debug_assert!((period - self.params.ts).abs() < 1e-9);
        let w = self.exogenous_at(self.t);
        self.x = model_step(self.x, *u, w, &self.params);
        self.t += period;
    }
}

/// Drives `source` with piecewise-constant uniformly random inputs.
pub fn generate_excitation(cfg: &ExcitationConfig, source: &mut dyn DataSource) -> Result<IdDataset> {
    let (samples, hold) = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let mut u = ControlInput::new(0.0, 0.0);
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        if k % hold == 0 {
            u = ControlInput::new(draw(cfg.w_bl_range), draw(cfg.t_evap_set_range));
        }
        out.push(source.sample(&u));
        source.advance(&u, cfg.sample_period);
    }
    Ok(IdDataset { samples: out })
}

/// Result of fitting one linear-in-parameters regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rms: f64,
    /// Condition number after scaling each column to unit norm.
    pub condition: f64,
}

/// Ordinary least squares through an SVD of the column-scaled regressor matrix.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>, equation: &'static str) -> Result<Regression> {
    let (rows, cols) = x.shape();
    if rows < cols || rows != y.len() {
        return Err(Error::Input(format!("{equation}: {rows} rows for {cols} parameters")));
    }
    let norms: Vec<f64> = (0..cols).map(|j| x.column(j).norm()).collect();
    if norms.iter().any(|n| *n == 0.0) {
        return Err(Error::RankDeficient {
            equation,
            condition: f64::INFINITY,
        });
    }
    let mut scaled = x.clone();
    for (j, n) in norms.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / n);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::RankDeficient { equation, condition });
    }
    let z = svd
        .solve(y, 0.0)
        .map_err(|e| Error::Input(format!("{equation}: {e}")))?;
    let coefficients: Vec<f64> = z.iter().zip(&norms).map(|(c, n)| c / n).collect();
    let fitted = x * DVector::from_column_slice(&coefficients);
    let residuals: Vec<f64> = (y - fitted).iter().copied().collect();
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / rows as f64).sqrt();
    Ok(Regression {
        coefficients,
        residuals,
        rms,
        condition,
    })
}

/// Regressor matrix and target for the cabin update.
pub fn cabin_regression(data: &IdDataset) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len().saturating_sub(1);
    let s = &data.samples;
    let x = DMatrix::from_fn(n, 4, |k, j| match j {
        0 => s[k].t_int - s[k].t_cab,
        1 => s[k].t_shell - s[k].t_cab,
        2 => (s[k].t_ain - s[k].t_cab) * s[k].w_bl,
        _ => 1.0,
    });
    let y = DVector::from_fn(n, |k, _| s[k + 1].t_cab - s[k].t_cab);
    (x, y)
}

pub fn evaporator_regression(data: &IdDataset) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len().saturating_sub(1);
    let s = &data.samples;
    let x = DMatrix::from_fn(n, 3, |k, j| match j {
        0 => s[k].t_evap,
        1 => s[k].t_evap - s[k].t_evap_set,
        _ => 1.0,
    });
    let y = DVector::from_fn(n, |k, _| s[k + 1].t_evap);
    (x, y)
}

pub fn inlet_regression(data: &IdDataset) -> (DMatrix<f64>, DVector<f64>) {
    let n = data.len();
    let s = &data.samples;
    let x = DMatrix::from_fn(n, 3, |k, j| match j {
        0 => s[k].t_evap,
        1 => s[k].w_bl,
        _ => 1.0,
    });
    let y = DVector::from_fn(n, |k, _| s[k].t_ain);
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub params: ModelParams,
    /// Residual RMS of the cabin, evaporator and inlet air regressions.
    pub residual_rms: [f64; 3],
}

/// Fits the three model equations independently. The cabin regression uses the
/// measured inlet air temperature, not its reconstruction.
pub fn fit_model_params(data: &IdDataset, ts: f64) -> Result<ModelFit> {
    if data.len() < 41 {
        return Err(Error::Input(format!(
            "dataset has {} samples, need at least 41 (10 per cabin parameter plus one)",
            data.len()
        )));
    }
    if !(ts > 0.0) {
        return Err(Error::Input("Ts must be positive".into()));
    }
    let (x1, y1) = cabin_regression(data);
    let cabin = least_squares(&x1, &y1, "cabin update")?;
    let (x2, y2) = evaporator_regression(data);
    let evap = least_squares(&x2, &y2, "evaporator update")?;
    let (x3, y3) = inlet_regression(data);
    let inlet = least_squares(&x3, &y3, "inlet air map")?;

    let c = &cabin.coefficients;
    let e = &evap.coefficients;
    let a = &inlet.coefficients;
    let params = ModelParams {
        gamma: [c[0], c[1], c[2], e[0], e[1], a[0], a[1]],
        tau: [c[3], e[2], a[2]],
        ts,
    };
    Ok(ModelFit {
        params,
        residual_rms: [cabin.rms, evap.rms, inlet.rms],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowerFit {
    pub beta: [f64; 3],
    pub rms: f64,
    /// False when the fitted quadratic coefficient is not positive.
    pub convex: bool,
}

impl BlowerFit {
    pub fn warning(&self) -> Option<String> {
        (!self.convex).then(|| format!("fitted blower map is not convex: beta1 = {}", self.beta[0]))
    }

    /// Power parameters with the fitted blower polynomial.
    pub fn into_power_params(self, c_p: f64, eta_cop: f64) -> PowerParams {
        PowerParams {
            beta: self.beta,
            c_p,
            eta_cop,
        }
    }
}

/// Quadratic least-squares fit of blower power on blower flow.
pub fn fit_power_params(data: &IdDataset) -> Result<BlowerFit> {
    let mut levels: Vec<f64> = data.samples.iter().map(|s| s.w_bl).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() < 3 {
        return Err(Error::Input(format!(
            "blower fit needs at least 3 distinct flow levels, found {}",
            levels.len()
        )));
    }
    let s = &data.samples;
    let x = DMatrix::from_fn(s.len(), 3, |k, j| s[k].w_bl.powi(2 - j as i32));
    let y = DVector::from_fn(s.len(), |k, _| s[k].p_bl);
    let reg = least_squares(&x, &y, "blower power")?;
    let beta = [reg.coefficients[0], reg.coefficients[1], reg.coefficients[2]];
    Ok(BlowerFit {
        beta,
        rms: reg.rms,
        convex: beta[0] > 0.0,
    })
}

/// Prediction errors (predicted minus measured) from one start index.
#[derive(Debug, Clone, PartialEq)]
pub struct StartErrors {
    pub start: usize,
    pub t_cab: Vec<f64>,
    pub t_evap: Vec<f64>,
    pub t_ain: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub horizon: usize,
    pub starts: Vec<StartErrors>,
    /// Max-abs error for T_cab, T_evap, T_ain.
    pub max_abs: [f64; 3],
    pub rms: [f64; 3],
}

impl ValidationReport {
    fn signals(&self) -> [Vec<f64>; 3] {
        let collect = |f: fn(&StartErrors) -> &Vec<f64>| -> Vec<f64> {
            self.starts.iter().flat_map(|s| f(s).iter().copied()).collect()
        };
        [collect(|s| &s.t_cab), collect(|s| &s.t_evap), collect(|s| &s.t_ain)]
    }

    /// Fraction of predicted steps with absolute error at most `tol`, per signal.
    pub fn fraction_within(&self, tol: f64) -> [f64; 3] {
        self.signals().map(|v| {
            if v.is_empty() {
                1.0
            } else {
                v.iter().filter(|e| e.abs() <= tol).count() as f64 / v.len() as f64
            }
        })
    }
}

/// Open-loop predictions from each start with interior and shell temperatures
/// frozen at their start values and the recorded inputs replayed.
pub fn validate_multistep(
    p: &ModelParams,
    data: &IdDataset,
    horizon: usize,
    starts: &[usize],
) -> Result<ValidationReport> {
    let s = &data.samples;
    let mut out = Vec::with_capacity(starts.len());
    for &k0 in starts {
        if k0 + horizon >= s.len() {
            return Err(Error::Input(format!(
                "start {k0} with horizon {horizon} exceeds dataset length {}",
                s.len()
            )));
        }
        let frozen = s[k0].exogenous();
        let u: Vec<ControlInput> = s[k0..k0 + horizon].iter().map(IdSample::input).collect();
        let w = vec![frozen; horizon];
        let tr = simulate_open_loop(s[k0].state(), &u, &w, p)?;
        let mut e = StartErrors {
            start: k0,
            t_cab: Vec::with_capacity(horizon),
            t_evap: Vec::with_capacity(horizon),
            t_ain: Vec::with_capacity(horizon),
        };
        for j in 1..=horizon {
            let actual = &s[k0 + j];
            let pred = tr.states[j];
            e.t_cab.push(pred.t_cab - actual.t_cab);
            e.t_evap.push(pred.t_evap - actual.t_evap);
            e.t_ain.push(inlet_air_temperature(pred.t_evap, actual.w_bl, p) - actual.t_ain);
        }
        out.push(e);
    }
    let mut report = ValidationReport {
        horizon,
        starts: out,
        max_abs: [0.0; 3],
        rms: [0.0; 3],
    };
    for (i, v) in report.signals().iter().enumerate() {
        report.max_abs[i] = v.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
        report.rms[i] = if v.is_empty() {
            0.0
        } else {
            (v.iter().map(|e| e * e).sum::<f64>() / v.len() as f64).sqrt()
        };
    }
    Ok(report)
}

/// `count` start indices evenly spread so that each leaves room for `horizon` steps.
pub fn spread_starts(len: usize, horizon: usize, count: usize) -> Vec<usize> {
    if count == 0 || len <= horizon {
        return Vec::new();
    }
    let last = len - horizon - 1;
    if count == 1 {
        return vec![0];
    }
    (0..count).map(|i| i * last / (count - 1)).collect()
}
