//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use acmpc_core::harness::{
    compare_cases, identify, run_closed_loop, speed_sensitivity_sweep, validation_report, ControllerKind,
    ControllerParams, EnergyTotals, IdentifyConfig, PlantKind, Setup, Trace,
};
use acmpc_core::model::{
    blower_power, compressor_power, evaporator_fixed_point, inlet_air_temperature, model_step, ControlInput,
    Exogenous, ModelParams, PowerParams, State,
};
use acmpc_core::nmpc::{
    brute_force_ocp, build_qcqp_matrices, evaluate_cost, evaluate_nlp, solve_ocp, BoxBounds, ConstraintSchedule,
    GridResolution, HorizonConfig, OcpInstance, QcqpMatrices, DEFAULT_SLACK_PENALTY,
};
use acmpc_core::sysid::{fit_model_params, fit_power_params, generate_excitation, ExcitationConfig, ModelSource};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn setup(name: &str) -> Setup {
    Setup::load(&fixtures().join(name), None).expect("fixture loads")
}

fn identified() -> ControllerParams {
    serde_json::from_str(include_str!("../../../fixtures/model_params.json")).unwrap()
}

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, format!("{name}: {got} vs {want}"))
}

fn formula_fixtures() -> Check {
    let p = ModelParams::reference();
    let q = PowerParams::reference();
    let (g, t) = (p.gamma, p.tau);

    // Independent evaluations straight from the coefficient lists.
    close("T_ain(0, 0)", inlet_air_temperature(0.0, 0.0, &p), 154.4995, 1e-6)?;
    close("T_ain(5, 0.1)", inlet_air_temperature(5.0, 0.1, &p), 0.4553 * 5.0 + 34.9579 * 0.1 + 154.4995, 1e-6)?;
    close("T_ain(5, 0.1) printed", inlet_air_temperature(5.0, 0.1, &p), 160.27179, 1e-6)?;
    close("T_ain(10, 0.05)", inlet_air_temperature(10.0, 0.05, &p), 0.4553 * 10.0 + 34.9579 * 0.05 + 154.4995, 1e-6)?;

    let x = State::new(30.0, 5.0);
    let u = ControlInput::new(0.1, 5.0);
    let w = Exogenous::new(30.0, 30.0, 30.0);
    let next = model_step(x, u, w, &p);
    let t_ain = g[5] * 5.0 + g[6] * 0.1 + t[2];
    let cab = 30.0 + g[0] * (30.0 - 30.0) + g[1] * (30.0 - 30.0) + g[2] * 0.1 * (t_ain - 30.0) + t[0];
    let evap = g[3] * 5.0 + g[4] * (5.0 - 5.0) + t[1];
    close("T_cab+", next.t_cab, cab, 1e-6)?;
    close("T_cab+ printed", next.t_cab, 46.7498, 5e-5)?;
    close("T_evap+", next.t_evap, evap, 1e-6)?;
    close("T_evap+ printed", next.t_evap, 3.7009, 5e-5)?;
    let origin = model_step(State::new(0.0, 0.0), ControlInput::new(0.0, 0.0), Exogenous::new(0.0, 0.0, 0.0), &p);
    close("T_evap+ at origin", origin.t_evap, -1.3226, 1e-12)?;

    let fp10 = evaporator_fixed_point(10.0, &p).map_err(|e| e.to_string())?;
    close("fixed point(10)", fp10, 3.8534 / 0.5129, 1e-6)?;
    close("fixed point(10) printed", fp10, 7.51296, 1e-5)?;
    let fp3 = evaporator_fixed_point(3.0, &p).map_err(|e| e.to_string())?;
    close("fixed point(3)", fp3, 0.2302 / 0.5129, 1e-6)?;
    let mut e = 0.0;
    for _ in 0..2000 {
        e = model_step(State::new(25.0, e), ControlInput::new(0.1, 10.0), w, &p).t_evap;
    }
    close("iterated fixed point(10)", e, fp10, 1e-9)?;

    close("P_bl(0)", blower_power(0.0, &q), 49.318, 1e-6)?;
    close("P_bl(0.05)", blower_power(0.05, &q), 24156.0 * 0.0025 - 1974.2 * 0.05 + 49.318, 1e-6)?;
    close("P_bl(0.1)", blower_power(0.1, &q), 93.458, 1e-6)?;
    close("P_bl(0.15)", blower_power(0.15, &q), 296.698, 1e-6)?;
    let pc = compressor_power(0.1, 5.0, 30.0, &p, &q);
    close("P_c(0.1, 5, 30)", pc, 1008.0 / 3.5 * 0.1 * (30.0 - 160.27179), 1e-6)?;
    close("P_c printed", pc, -3751.83, 5e-3)?;
    Ok(format!("fixed point {fp10:.6}, P_bl(0.1) = {:.3} W", blower_power(0.1, &q)))
}

fn qcqp_equivalence() -> Check {
    let p = ModelParams::reference();
    let m = build_qcqp_matrices(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = State::new(rng.gen_range(15.0..45.0), rng.gen_range(-5.0..20.0));
        let u = ControlInput::new(rng.gen_range(0.0..0.2), rng.gen_range(0.0..12.0));
        let w = Exogenous::new(rng.gen_range(15.0..45.0), rng.gen_range(15.0..55.0), rng.gen_range(15.0..45.0));
        let z = QcqpMatrices::stack(model_step(x, u, w, &p), x, u, &w, inlet_air_temperature(x.t_evap, u.w_bl, &p));
        for r in m.residuals(&z) {
            worst = worst.max(r.abs());
        }
    }
    ensure(worst < 1e-10, format!("largest residual {worst:e}"))?;
    ensure(m.c == m.c.transpose(), "C is not symmetric".into())?;
    let eig = SymmetricEigen::new(m.c.into_owned()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    ensure(lo < 0.0 && hi > 0.0, format!("C eigenvalues span [{lo}, {hi}]"))?;
    Ok(format!("max residual {worst:.1e}, eigenvalues in [{lo:.4}, {hi:.4}]"))
}

fn identification_recovery() -> Check {
    let truth = ModelParams::reference();
    let power = PowerParams::reference();
    let mut src = ModelSource::new(State::new(28.0, 9.0), truth, power, 30.0);
    let data = generate_excitation(&ExcitationConfig::standard(5), &mut src).map_err(|e| e.to_string())?;
    ensure(data.len() == 2000, format!("{} samples", data.len()))?;
    let fit = fit_model_params(&data, 5.0).map_err(|e| e.to_string())?.params;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let worst_model = fit
        .gamma
        .iter()
        .chain(&fit.tau)
        .zip(truth.gamma.iter().chain(&truth.tau))
        .map(|(a, b)| rel(*a, *b))
        .fold(0.0, f64::max);
    let blower = fit_power_params(&data).map_err(|e| e.to_string())?;
    let worst_beta = blower.beta.iter().zip(&power.beta).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
    ensure(worst_model < 1e-8, format!("model relative error {worst_model:e}"))?;
    ensure(worst_beta < 1e-10, format!("blower relative error {worst_beta:e}"))?;
    Ok(format!("gamma/tau rel err {worst_model:.1e}, beta rel err {worst_beta:.1e}"))
}

fn surrogate_validation() -> Check {
    let (cfg, plant) = IdentifyConfig::load(&fixtures().join("identify.json")).map_err(|e| e.to_string())?;
    let outcome = identify(&cfg, &plant).map_err(|e| e.to_string())?;
    let report = validation_report(&cfg, &plant, &outcome.params).map_err(|e| e.to_string())?;
    ensure(
        report.starts.len() == 60 && report.horizon == 300,
        format!("{} starts x {} steps", report.starts.len(), report.horizon),
    )?;
    let within = report.fraction_within(2.5);
    ensure(within.iter().all(|f| *f >= 0.9), format!("fractions within 2.5 °C {within:?}"))?;
    Ok(format!(
        "within 2.5 °C: T_cab {:.1}%, T_evap {:.1}%, T_ain {:.1}%",
        100.0 * within[0],
        100.0 * within[1],
        100.0 * within[2]
    ))
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> OcpInstance {
    let p = identified();
    let horizon = HorizonConfig::uniform(n);
    let ub: Vec<f64> = (0..=n).map(|_| rng.gen_range(22.0..28.0)).collect();
    OcpInstance {
        x0: State::new(rng.gen_range(21.0..32.0), rng.gen_range(2.0..14.0)),
        u_applied: None,
        exo: Exogenous::new(rng.gen_range(24.0..34.0), rng.gen_range(26.0..40.0), rng.gen_range(26.0..36.0)),
        model: p.model,
        power: p.power,
        horizon,
        schedule: ConstraintSchedule::from_box(&horizon, &BoxBounds::standard(), &ub, DEFAULT_SLACK_PENALTY),
    }
}

fn argmin_gap(a: &[ControlInput], b: &[ControlInput]) -> (f64, f64) {
    a.iter().zip(b).fold((0.0, 0.0), |(dw, ds), (x, y)| {
        (f64::max(dw, (x.w_bl - y.w_bl).abs()), f64::max(ds, (x.t_evap_set - y.t_evap_set).abs()))
    })
}

/// Grid search at a fifth of the resolution over the box spanned by two
/// candidate move sequences, padded by two coarse cells.
fn refined_oracle(inst: &OcpInstance, a: &[ControlInput], b: &[ControlInput], coarse: &GridResolution) -> Result<Vec<ControlInput>, String> {
    let mut local = inst.clone();
    for (j, (x, y)) in a.iter().zip(b).enumerate() {
        let (lo, hi) = (inst.schedule.input_lower[j], inst.schedule.input_upper[j]);
        local.schedule.input_lower[j] = ControlInput::new(
            (x.w_bl.min(y.w_bl) - 2.0 * coarse.w_bl).max(lo.w_bl),
            (x.t_evap_set.min(y.t_evap_set) - 2.0 * coarse.t_evap_set).max(lo.t_evap_set),
        );
        local.schedule.input_upper[j] = ControlInput::new(
            (x.w_bl.max(y.w_bl) + 2.0 * coarse.w_bl).min(hi.w_bl),
            (x.t_evap_set.max(y.t_evap_set) + 2.0 * coarse.t_evap_set).min(hi.t_evap_set),
        );
    }
    let fine = GridResolution {
        w_bl: coarse.w_bl / 5.0,
        t_evap_set: coarse.t_evap_set / 5.0,
    };
    Ok(brute_force_ocp(&local, &fine).map_err(|e| e.to_string())?.u)
}

fn solver_oracle_agreement() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = GridResolution::default();
    let within = |(dw, ds): (f64, f64)| dw <= grid.w_bl + 1e-9 && ds <= grid.t_evap_set + 1e-9;
    let mut worst_rel: f64 = 0.0;
    let mut refined = 0;
    for k in 0..20 {
        let inst = random_instance(&mut rng, 1 + k % 2);
        let r = solve_ocp(&inst, None).map_err(|e| e.to_string())?;
        let bf = brute_force_ocp(&inst, &grid).map_err(|e| e.to_string())?;
        let rel = (r.cost - bf.cost) / bf.cost.abs().max(1.0);
        worst_rel = worst_rel.max(rel.abs());
        ensure(rel <= 1e-3, format!("instance {k}: solver {} vs grid {}", r.cost, bf.cost))?;
        if within(argmin_gap(&r.u, &bf.u)) {
            continue;
        }
        // On an active penalty ridge no coarse node lies on the ridge, so the
        // coarse argmin can sit several cells away; a finer grid settles it.
        let fine = refined_oracle(&inst, &r.u, &bf.u, &grid)?;
        let gap = argmin_gap(&r.u, &fine);
        ensure(within(gap), format!("instance {k}: argmin {:?} vs refined grid {:?}", r.u, fine))?;
        refined += 1;
    }
    Ok(format!(
        "20 instances, worst relative cost gap {worst_rel:.1e}, {refined} argmins settled on a finer grid"
    ))
}

fn gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        let n = rng.gen_range(1..=6);
        let inst = random_instance(&mut rng, n);
        let u: Vec<f64> = (0..inst.horizon.nu)
            .flat_map(|_| [rng.gen_range(0.05..0.15), rng.gen_range(3.0..10.0)])
            .collect();
        let ev = evaluate_nlp(&inst, &u);
        // Skip points within 1e-3 °C of a penalty kink.
        let near_kink = ev.states.iter().take(inst.horizon.nc + 1).enumerate().any(|(i, x)| {
            let lo = inst.schedule.state_lower[i];
            let hi = inst.schedule.state_upper[i];
            [x.t_cab - lo.t_cab, x.t_cab - hi.t_cab, x.t_evap - lo.t_evap, x.t_evap - hi.t_evap]
                .iter()
                .any(|d| d.abs() < 1e-3)
        });
        if near_kink {
            continue;
        }
        for k in 0..u.len() {
            let h = if k % 2 == 0 { 1e-7 } else { 1e-5 };
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (evaluate_cost(&inst, &up) - evaluate_cost(&inst, &dn)) / (2.0 * h);
            let rel = (fd - ev.gradient[k]).abs() / fd.abs().max(ev.gradient[k].abs()).max(1.0);
            worst = worst.max(rel);
        }
        checked += 1;
    }
    ensure(worst < 1e-5, format!("worst relative gradient error {worst:e}"))?;
    Ok(format!("100 instances, worst relative error {worst:.1e}"))
}

fn closed_loop_on_model(traces: &mut Vec<Trace>) -> Check {
    let mut summary = Vec::new();
    for name in ["cooldown_T30.json", "cooldown_T35.json"] {
        let s = setup(name);
        let tr = run_closed_loop(&s, ControllerKind::Nmpc, PlantKind::Model).map_err(|e| e.to_string())?;
        let b = &s.scenario.bounds;
        for r in &tr.records {
            ensure(
                b.w_bl_min <= r.w_bl && r.w_bl <= b.w_bl_max && b.t_evap_set_min <= r.t_evap_set && r.t_evap_set <= b.t_evap_set_max,
                format!("{name}: input out of bounds at t = {}", r.t),
            )?;
        }
        let last = tr.records.last().ok_or("empty trace")?;
        let slack = last.slack_lo.max(last.slack_hi);
        ensure(slack < 1e-6, format!("{name}: final slack {slack:e}"))?;
        // Steady state: the last 25 s of the run.
        for r in &tr.records[tr.records.len() - 6..] {
            ensure(
                (r.t_cab - r.t_cab_ub).abs() <= 0.5,
                format!("{name}: T_cab {} vs bound {} at t = {}", r.t_cab, r.t_cab_ub, r.t),
            )?;
        }
        ensure(tr.capped_steps == 0, format!("{name}: {} capped solves", tr.capped_steps))?;
        summary.push(format!("{:.4} (bound {})", last.t_cab, last.t_cab_ub));
        traces.push(tr);
    }
    Ok(format!("final T_cab {}", summary.join(", ")))
}

fn speed_sensitivity() -> Check {
    let s = setup("speed_sweep.json");
    let speeds = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0];
    let rows = speed_sensitivity_sweep(&s, &speeds).map_err(|e| e.to_string())?;
    for w in rows.windows(2) {
        ensure(
            w[1].energy_mj < w[0].energy_mj,
            format!("E({}) = {} not below E({}) = {}", w[1].speed, w[1].energy_mj, w[0].speed, w[0].energy_mj),
        )?;
    }
    let ratio = rows[5].energy_mj / rows[0].energy_mj;
    ensure((0.75..=0.85).contains(&ratio), format!("E(25)/E(0) = {ratio}"))?;
    ensure(rows[0].mj_per_km.is_none(), "per-distance defined at rest".into())?;
    for r in &rows[1..] {
        let per_km = r.mj_per_km.ok_or("missing per-distance value")?;
        let identity = r.energy_mj / (r.speed * s.scenario.duration / 1e3);
        ensure((per_km - identity).abs() <= 1e-12 * identity, format!("per-distance at {} m/s", r.speed))?;
    }
    let t5 = EnergyTotals::new(1.23, 5.0 * 600.0 / 1e3).mj_per_km.unwrap_or(f64::NAN);
    let t20 = EnergyTotals::new(1.10, 20.0 * 600.0 / 1e3).mj_per_km.unwrap_or(f64::NAN);
    close("table energy at 5 m/s", t5, 0.410, 5e-4)?;
    close("table energy at 20 m/s", t20, 0.092, 5e-4)?;
    Ok(format!("E(25)/E(0) = {ratio:.3}, table check {t5:.3}/{t20:.3} MJ/km"))
}

fn case_study() -> Check {
    let s = setup("stop_and_go.json");
    let r = compare_cases(&s).map_err(|e| e.to_string())?;
    ensure(r.saving > 0.0, format!("saving {:.2}%", 100.0 * r.saving))?;
    let target = if r.saving >= 0.03 { "meets" } else { "below" };
    Ok(format!(
        "E1 {:.6} MJ, E2 {:.6} MJ, saving {:.2}% ({target} the 3% target)",
        r.e_case1,
        r.e_case2,
        100.0 * r.saving
    ))
}

fn real_time_margin(traces: &[Trace]) -> Check {
    ensure(!traces.is_empty(), "no closed-loop runs to time".into())?;
    let steps: usize = traces.iter().map(|t| t.solver_steps).sum();
    let total: f64 = traces.iter().flat_map(|t| &t.records).map(|r| r.solve_ms).sum();
    let mean = total / steps as f64;
    ensure(mean < 625.0, format!("mean solve {mean:.3} ms"))?;
    Ok(format!("mean solve {mean:.3} ms over {steps} steps"))
}

fn main() -> ExitCode {
    let mut traces = Vec::new();
    let mut results: Vec<(usize, &str, Check, f64)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Check| {
        let started = Instant::now();
        let outcome = f();
        results.push((n, name, outcome, started.elapsed().as_secs_f64()));
    };
    run(1, "formula fixtures", &mut formula_fixtures);
    run(2, "QCQP equivalence", &mut qcqp_equivalence);
    run(3, "identification recovery", &mut identification_recovery);
    run(4, "surrogate multi-step validation", &mut surrogate_validation);
    run(5, "solver-oracle agreement", &mut solver_oracle_agreement);
    run(6, "gradient correctness", &mut gradient_correctness);
    run(7, "closed loop on the prediction model", &mut || closed_loop_on_model(&mut traces));
    run(8, "speed sensitivity", &mut speed_sensitivity);
    run(9, "case study", &mut case_study);
    run(10, "real-time margin", &mut || real_time_margin(&traces));

    let mut failed = 0;
    for (n, name, outcome, secs) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.2} s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
