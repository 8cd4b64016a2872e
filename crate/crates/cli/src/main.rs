//! `acmpc`: identification, validation and closed-loop scenario runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acmpc_core::harness::{
    self, compare_cases, energy_account, identify, run_closed_loop, simulate_model, speed_sensitivity_sweep,
    validation_report, write_atomic, write_json, ControllerKind, ControllerParams, IdentifyConfig, PlantKind,
    Setup, Trace,
};
use acmpc_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "acmpc", version, about = "Predictive A/C control toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario or identification config file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Prediction and power model parameters, overriding the scenario's file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Excite the surrogate plant, fit the model and write `model_params.json`.
    Identify(Common),
    /// Multi-step prediction errors on a held-out record.
    Validate(Common),
    /// Open-loop model response to seeded random inputs.
    Simulate(Common),
    /// Closed-loop run of one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "nmpc")]
        controller: ControllerArg,
        #[arg(long, value_enum, default_value = "surrogate")]
        plant: PlantArg,
    },
    /// PI-baseline energy at several constant speeds.
    SweepSpeed {
        #[command(flatten)]
        common: Common,
        /// Speeds in m/s.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25")]
        speeds: Vec<f64>,
    },
    /// Speed-coordinated bound against a constant set-point.
    CompareCases(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Nmpc,
    Pi,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlantArg {
    Surrogate,
    Model,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER_CAP: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Json(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn load_setup(c: &Common) -> acmpc_core::Result<Setup> {
    let mut setup = Setup::load(&c.scenario, c.params.as_deref())?;
    if let Some(seed) = c.seed {
        setup.scenario.seed = seed;
    }
    Ok(setup)
}

fn out_dir(c: &Common) -> acmpc_core::Result<&Path> {
    fs::create_dir_all(&c.out)?;
    Ok(&c.out)
}

fn write_trace(path: &Path, tr: &Trace) -> acmpc_core::Result<()> {
    let mut buf = Vec::new();
    tr.write_csv(&mut buf)?;
    write_atomic(path, &buf)
}

/// Exit status for a finished run: 3 when the iteration cap was hit on at
/// least 1% of optimizer steps.
fn run_status(traces: &[&Trace]) -> u8 {
    let solver: usize = traces.iter().map(|t| t.solver_steps).sum();
    let capped: usize = traces.iter().map(|t| t.capped_steps).sum();
    if solver > 0 && capped as f64 >= 0.01 * solver as f64 {
        eprintln!("warning: iteration cap reached on {capped} of {solver} solves");
        EXIT_SOLVER_CAP
    } else {
        0
    }
}

fn dispatch(cmd: Command) -> acmpc_core::Result<u8> {
    match cmd {
        Command::Identify(c) => {
            let (mut cfg, plant) = IdentifyConfig::load(&c.scenario)?;
            if let Some(seed) = c.seed {
                cfg.excitation.seed = seed;
            }
            let outcome = identify(&cfg, &plant)?;
            let dir = out_dir(&c)?;
            write_json(&dir.join("model_params.json"), &outcome.params)?;
            let mut buf = Vec::new();
            outcome.dataset.write_csv(&mut buf)?;
            write_atomic(&dir.join("identification.csv"), &buf)?;
            let p = &outcome.params;
            println!("gamma = {:?}", p.model.gamma);
            println!("tau   = {:?}", p.model.tau);
            println!("beta  = {:?}", p.power.beta);
            println!("residual rms [cabin, evaporator, inlet] = {:?}", outcome.fit.residual_rms);
            if let Some(w) = outcome.blower.warning() {
                eprintln!("warning: {w}");
            }
            Ok(0)
        }
        Command::Validate(c) => {
            let (cfg, plant) = IdentifyConfig::load(&c.scenario)?;
            let params_path = c
                .params
                .clone()
                .ok_or_else(|| Error::Config("validate needs --params".into()))?;
            let params: ControllerParams = harness::read_json(&params_path)?;
            let report = validation_report(&cfg, &plant, &params)?;
            let within = report.fraction_within(2.5);
            println!(
                "{} starts x {} steps",
                report.starts.len(),
                report.horizon
            );
            for (i, name) in ["T_cab", "T_evap", "T_ain"].iter().enumerate() {
                println!(
                    "{name:7} max-abs {:.4}  rms {:.4}  within 2.5 °C {:.1}%",
                    report.max_abs[i],
                    report.rms[i],
                    100.0 * within[i]
                );
            }
            let dir = out_dir(&c)?;
            let summary = json!({
                "signals": ["T_cab", "T_evap", "T_ain"],
                "horizon": report.horizon,
                "starts": report.starts.len(),
                "max_abs": report.max_abs,
                "rms": report.rms,
                "fraction_within_2_5": within,
            });
            write_json(&dir.join("validation.json"), &summary)?;
            Ok(0)
        }
        Command::Simulate(c) => {
            let setup = load_setup(&c)?;
            let data = simulate_model(&setup, setup.scenario.seed)?;
            let mut buf = Vec::new();
            data.write_csv(&mut buf)?;
            write_atomic(&out_dir(&c)?.join("simulation.csv"), &buf)?;
            println!("{} samples", data.len());
            Ok(0)
        }
        Command::Run {
            common,
            controller,
            plant,
        } => {
            let setup = load_setup(&common)?;
            let controller = match controller {
                ControllerArg::Nmpc => ControllerKind::Nmpc,
                ControllerArg::Pi => ControllerKind::Pi,
            };
            let plant = match plant {
                PlantArg::Surrogate => PlantKind::Surrogate,
                PlantArg::Model => PlantKind::Model,
            };
            let tr = run_closed_loop(&setup, controller, plant)?;
            write_trace(&out_dir(&common)?.join("trace.csv"), &tr)?;
            let e = energy_account(&tr, &setup.scenario.speed)?;
            println!("{}: {} steps", setup.scenario.name, tr.records.len().saturating_sub(1));
            println!("energy {:.6} MJ", e.energy_mj);
            match e.mj_per_km {
                Some(v) => println!("energy per distance {v:.6} MJ/km"),
                None => println!("energy per distance NA"),
            }
            if tr.solver_steps > 0 {
                println!("mean solve {:.3} ms", tr.mean_solve_ms());
            }
            Ok(run_status(&[&tr]))
        }
        Command::SweepSpeed { common, speeds } => {
            let setup = load_setup(&common)?;
            let rows = speed_sensitivity_sweep(&setup, &speeds)?;
            let mut csv = String::from("V_veh,energy_MJ,energy_MJ_per_km\n");
            println!("{:>8} {:>12} {:>12}", "V (m/s)", "E (MJ)", "E (MJ/km)");
            for r in &rows {
                let per_km = r.mj_per_km.map_or("NA".to_string(), |v| format!("{v:.6}"));
                println!("{:>8} {:>12.6} {:>12}", r.speed, r.energy_mj, per_km);
                csv.push_str(&format!("{},{},{}\n", r.speed, r.energy_mj, per_km));
            }
            write_atomic(&out_dir(&common)?.join("sweep.csv"), csv.as_bytes())?;
            Ok(0)
        }
        Command::CompareCases(c) => {
            let setup = load_setup(&c)?;
            let r = compare_cases(&setup)?;
            let dir = out_dir(&c)?;
            write_trace(&dir.join("case1.csv"), &r.case1)?;
            write_trace(&dir.join("case2.csv"), &r.case2)?;
            println!("case 1 (speed-coordinated bound) {:.6} MJ", r.e_case1);
            println!("case 2 (constant {:.3} °C)      {:.6} MJ", r.setpoint, r.e_case2);
            println!("saving {:.2}%", 100.0 * r.saving);
            let summary = json!({
                "E_case1_MJ": r.e_case1,
                "E_case2_MJ": r.e_case2,
                "saving": r.saving,
                "setpoint": r.setpoint,
            });
            write_json(&dir.join("compare.json"), &summary)?;
            Ok(run_status(&[&r.case1, &r.case2]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(solver: usize, capped: usize) -> Trace {
        Trace {
            solver_steps: solver,
            capped_steps: capped,
            ..Default::default()
        }
    }

    #[test]
    fn cap_status_needs_one_percent() {
        assert_eq!(run_status(&[&trace(200, 1)]), 0);
        assert_eq!(run_status(&[&trace(200, 2)]), EXIT_SOLVER_CAP);
        assert_eq!(run_status(&[&trace(100, 0), &trace(0, 0)]), 0);
        assert_eq!(run_status(&[&trace(50, 0), &trace(50, 1)]), EXIT_SOLVER_CAP);
    }
}
