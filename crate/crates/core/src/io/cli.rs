use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use super::config::{echo_config, parse_config};
use super::output::{render_iteration_rows, write_energy_csv, write_vtk, RunManifest, ITERATION_HEADER};
use crate::driver::{run_quasi_static, DriverError, EnergyRecord, StepView};
use crate::estimator::compute_indicators_excluding;
use crate::mesh::build_unit_square_with_slit;
use crate::verification::run_suites;

#[derive(Parser, Debug)]
#[command(name = "slfrac", version, about = "Adaptive phase-field fracture with strain-limiting elasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the quasi-static simulation.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        algorithm: Option<u8>,
        /// Output directory (overrides out.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report conformity and the stiffness sign condition of the initial mesh.
    CheckMesh {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the oracle suites.
    Verify,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read_config(path: &Path) -> Result<crate::driver::SimulationConfig<f64>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn snapshot(dir: &Path, view: &StepView<'_, f64>) -> Result<String, DriverError> {
    let st = view.state;
    let ind = compute_indicators_excluding(&st.mesh, &st.u, &st.v, &st.params, &view.crack.crack_edges)
        .map_err(|e| DriverError::Observer(e.to_string()))?;
    let pinned: Vec<f64> = st.pinned.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    let level: Vec<f64> = st.mesh.elements().iter().map(|e| e.level as f64).collect();
    let name = format!("fields_{:04}.vtk", view.step);
    write_vtk(
        &dir.join(&name),
        &st.mesh,
        &[("u", st.u.values()), ("v", st.v.values()), ("pinned", &pinned)],
        &[("eta_sq", &ind.eta_sq), ("level", &level)],
    )
    .map_err(|e| DriverError::Observer(e.to_string()))?;
    Ok(name)
}

fn run(config: &Path, algorithm: Option<u8>, out: Option<PathBuf>) -> Result<(), String> {
    let mut cfg = read_config(config)?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let started = now();
    let mut records: Vec<EnergyRecord<f64>> = Vec::new();
    let mut steps = Vec::new();
    let mut iterations = format!("{ITERATION_HEADER}\n");
    let result = run_quasi_static(&cfg, |view| {
        let file = if cfg.out_stride > 0 && view.step % cfg.out_stride == 0 {
            Some(snapshot(&dir, view)?)
        } else {
            None
        };
        iterations.push_str(&render_iteration_rows(view.step, &view.result.refine_log));
        records.push(*view.record);
        steps.push((view.step, view.time, file));
        let r = view.record;
        println!(
            "step {:>3}  t={:.4}  bulk={:.6e}  surface={:.6e}  nelem={}  refines={}  sweeps={}",
            r.step, r.time, r.bulk, r.surface, r.nelem, r.nrefines, r.sweeps
        );
        Ok(())
    });
    let status = match &result {
        Ok(_) => "ok".to_owned(),
        Err(e) => format!("failed: {e}"),
    };
    let write_err = |e: super::IoError| e.to_string();
    write_energy_csv(&dir.join("energy.csv"), &records).map_err(write_err)?;
    fs::write(dir.join("iterations.csv"), &iterations).map_err(|e| e.to_string())?;
    if let Ok(outcome) = &result {
        let st = &outcome.state;
        write_vtk(&dir.join("final.vtk"), &st.mesh, &[("u", st.u.values()), ("v", st.v.values())], &[])
            .map_err(write_err)?;
    }
    RunManifest {
        config_echo: echo_config(&cfg),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        started,
        finished: now(),
        steps,
        status,
    }
    .write(&dir.join("manifest.txt"))
    .map_err(write_err)?;
    result.map(|_| ()).map_err(|e| e.to_string())
}

fn check_mesh(config: &Path) -> Result<bool, String> {
    let cfg = read_config(config)?;
    let mesh = build_unit_square_with_slit::<f64>(cfg.n_initial, cfg.slit_tip_y).map_err(|e| e.to_string())?;
    let conformity = mesh.check_conformity();
    let sign = mesh.check_stiffness_sign_condition();
    println!("vertices,{}", mesh.n_vertices());
    println!("elements,{}", mesh.n_elements());
    println!("min_angle_deg,{:.6}", mesh.min_angle().to_degrees());
    match &conformity {
        Ok(()) => println!("conforming,yes"),
        Err(e) => println!("conforming,no ({e})"),
    }
    println!("sign_condition_violations,{}", sign.len());
    for s in &sign {
        println!("positive_offdiagonal,{},{},{:e}", s.vertices[0], s.vertices[1], s.value);
    }
    Ok(conformity.is_ok())
}

fn verify() -> bool {
    println!("name,samples,max_error,tolerance,pass");
    let reports = run_suites();
    for r in &reports {
        println!("{}", r.csv_line());
    }
    reports.iter().all(|r| r.pass)
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 1 on failure, 2 on bad usage.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run { config, algorithm, out } => run(&config, algorithm, out).map(|_| true),
        Command::CheckMesh { config } => check_mesh(&config),
        Command::Verify => Ok(verify()),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        cli_main(std::iter::once("slfrac").chain(args.iter().copied()))
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(code(&[]), 2);
        assert_eq!(code(&["bogus"]), 2);
        assert_eq!(code(&["run", "--bogus"]), 2);
        assert_eq!(code(&["run", "--config", "x.cfg", "--algorithm", "4"]), 2);
        assert_eq!(code(&["check-mesh"]), 2);
        assert_eq!(code(&["--help"]), 0);
    }

    #[test]
    fn unreadable_or_invalid_config_exits_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.cfg");
        assert_eq!(code(&["check-mesh", "--config", missing.to_str().unwrap()]), 1);
        let bad = dir.path().join("bad.cfg");
        fs::write(&bad, "model.kappa = -1\n").unwrap();
        assert_eq!(code(&["run", "--config", bad.to_str().unwrap()]), 1);
    }

    #[test]
    fn short_run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        fs::write(&cfg_path, "time.steps = 2\nmesh.n_initial = 4\nadapt.xi_rf = 1\nout.stride = 2\n").unwrap();
        let out = dir.path().join("out");
        let args = ["run", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--algorithm", "2"];
        assert_eq!(code(&args), 0);
        let csv = fs::read_to_string(out.join("energy.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(super::super::ENERGY_HEADER));
        assert_eq!(lines.count(), 2);
        assert!(out.join("fields_0002.vtk").exists());
        assert!(!out.join("fields_0001.vtk").exists());
        assert!(out.join("final.vtk").exists());
        assert!(fs::read_to_string(out.join("iterations.csv")).unwrap().starts_with(ITERATION_HEADER));
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        let echoed = parse_config(RunManifest::config_section(&manifest).unwrap()).unwrap();
        assert_eq!(echoed.algorithm, 2);
        assert_eq!(echoed.out_dir, out);
        assert!(manifest.contains("status = ok"));
        assert_eq!(code(&["check-mesh", "--config", cfg_path.to_str().unwrap()]), 0);
    }
}
