use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::IoError;
use crate::adaptivity::{CapPolicy, RfSchedule};
use crate::driver::{EpsilonMode, SimulationConfig};

const KEYS: &[&str] = &[
    "model.alpha",
    "model.beta",
    "model.kappa",
    "model.lambda_c",
    "model.c_w",
    "model.epsilon_mode",
    "model.epsilon_multiplier",
    "adapt.theta",
    "adapt.xi_rf",
    "adapt.xi_v",
    "adapt.xi_vn",
    "adapt.xi_cr",
    "adapt.algorithm",
    "adapt.rf_decay",
    "adapt.c_irr",
    "adapt.max_refines",
    "adapt.max_elements",
    "adapt.max_outer",
    "adapt.on_cap",
    "time.steps",
    "time.dt",
    "time.load_rate",
    "mesh.n_initial",
    "mesh.slit_tip_y",
    "solver.tol_lin",
    "solver.tol_picard",
    "solver.max_picard",
    "solver.picard_damping",
    "solver.max_sweeps",
    "out.dir",
    "out.stride",
];

/// Accepts plain floats and fractions such as `8/3`.
fn number(key: &str, raw: &str) -> Result<f64, IoError> {
    let bad = || IoError::BadValue {
        key: key.to_owned(),
        value: raw.to_owned(),
    };
    let x = match raw.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => raw.parse().map_err(|_| bad())?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad())
    }
}

fn count(key: &str, raw: &str) -> Result<usize, IoError> {
    raw.parse().map_err(|_| IoError::BadValue {
        key: key.to_owned(),
        value: raw.to_owned(),
    })
}

fn flag(key: &str, raw: &str) -> Result<bool, IoError> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(IoError::BadValue {
            key: key.to_owned(),
            value: raw.to_owned(),
        }),
    }
}

fn range(key: &str, ok: bool, what: &str) -> Result<(), IoError> {
    if ok {
        Ok(())
    } else {
        Err(IoError::OutOfRange {
            key: key.to_owned(),
            expected: what.to_owned(),
        })
    }
}

/// Parses flat `key = value` text; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<SimulationConfig<f64>, IoError> {
    let mut cfg = SimulationConfig::<f64>::default();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line.split_once('=').ok_or_else(|| IoError::Malformed {
            line: lineno + 1,
            text: line.to_owned(),
        })?;
        let (key, raw) = (key.trim(), raw.trim());
        if !KEYS.contains(&key) {
            return Err(IoError::UnknownKey(key.to_owned()));
        }
        if !seen.insert(key.to_owned()) {
            return Err(IoError::DuplicateKey(key.to_owned()));
        }
        let num = || number(key, raw);
        let a = &mut cfg.adapt;
        match key {
            "model.alpha" => {
                cfg.alpha = num()?;
                range(key, cfg.alpha > 0.0, "> 0")?;
            }
            "model.beta" => {
                cfg.beta = num()?;
                range(key, cfg.beta >= 0.0, ">= 0")?;
            }
            "model.kappa" => {
                cfg.kappa = num()?;
                range(key, (0.0..1.0).contains(&cfg.kappa), "in [0, 1)")?;
            }
            "model.lambda_c" => {
                cfg.lambda_c = num()?;
                range(key, cfg.lambda_c > 0.0, "> 0")?;
            }
            "model.c_w" => {
                cfg.c_w = num()?;
                range(key, cfg.c_w > 0.0, "> 0")?;
            }
            "model.epsilon_mode" => {
                cfg.epsilon_mode = match raw {
                    "fixed" => EpsilonMode::Fixed,
                    "mesh_scaled" => EpsilonMode::MeshScaled,
                    _ => return range(key, false, "fixed or mesh_scaled").map(|_| unreachable!()),
                }
            }
            "model.epsilon_multiplier" => {
                cfg.epsilon_multiplier = num()?;
                range(key, cfg.epsilon_multiplier > 0.0, "> 0")?;
            }
            "adapt.theta" => {
                a.theta = num()?;
                range(key, a.theta > 0.0 && a.theta <= 1.0, "in (0, 1]")?;
            }
            "adapt.xi_rf" | "adapt.xi_v" | "adapt.xi_vn" | "adapt.xi_cr" | "solver.tol_lin" | "solver.tol_picard" => {
                let x = num()?;
                range(key, x > 0.0, "> 0")?;
                match key {
                    "adapt.xi_rf" => a.xi_rf = x,
                    "adapt.xi_v" => a.xi_v = x,
                    "adapt.xi_vn" => a.xi_vn = x,
                    "adapt.xi_cr" => a.xi_cr = x,
                    "solver.tol_lin" => a.picard.tol_lin = x,
                    _ => a.picard.tol_picard = x,
                }
            }
            "adapt.algorithm" => {
                let k = count(key, raw)?;
                range(key, (1..=3).contains(&k), "1, 2 or 3")?;
                cfg.algorithm = k as u8;
            }
            "adapt.rf_decay" => {
                let d = num()?;
                range(key, d > 0.0 && d <= 1.0, "in (0, 1]")?;
                a.rf_schedule = if d == 1.0 {
                    RfSchedule::Constant
                } else {
                    RfSchedule::Geometric(d)
                };
            }
            "adapt.c_irr" => {
                cfg.c_irr = num()?;
                range(key, (0.0..1.0).contains(&cfg.c_irr), "in [0, 1)")?;
            }
            "adapt.max_refines" => a.max_refines_per_step = count(key, raw)?,
            "adapt.max_elements" => {
                a.max_elements = count(key, raw)?;
                range(key, a.max_elements > 0, ">= 1")?;
            }
            "adapt.max_outer" => {
                a.max_outer = count(key, raw)?;
                range(key, a.max_outer > 0, ">= 1")?;
            }
            "adapt.on_cap" => {
                a.cap_policy = match raw {
                    "error" => CapPolicy::Error,
                    "accept" => CapPolicy::Accept,
                    _ => return range(key, false, "error or accept").map(|_| unreachable!()),
                }
            }
            "time.steps" => {
                cfg.steps = count(key, raw)?;
                range(key, cfg.steps > 0, ">= 1")?;
            }
            "time.dt" => {
                cfg.dt = num()?;
                range(key, cfg.dt > 0.0, "> 0")?;
            }
            "time.load_rate" => {
                cfg.load_rate = num()?;
                range(key, cfg.load_rate != 0.0, "nonzero")?;
            }
            "mesh.n_initial" => {
                cfg.n_initial = count(key, raw)?;
                range(key, cfg.n_initial >= 2 && cfg.n_initial % 2 == 0, "even and >= 2")?;
            }
            "mesh.slit_tip_y" => {
                cfg.slit_tip_y = num()?;
                range(key, cfg.slit_tip_y > 0.0 && cfg.slit_tip_y < 1.0, "in (0, 1)")?;
            }
            "solver.max_picard" => {
                a.picard.max_iter = count(key, raw)?;
                range(key, a.picard.max_iter > 0, ">= 1")?;
            }
            "solver.picard_damping" => a.picard.damping = flag(key, raw)?,
            "solver.max_sweeps" => {
                a.max_sweeps = count(key, raw)?;
                range(key, a.max_sweeps > 0, ">= 1")?;
            }
            "out.dir" => {
                range(key, !raw.is_empty(), "a path")?;
                cfg.out_dir = PathBuf::from(raw);
            }
            "out.stride" => cfg.out_stride = count(key, raw)?,
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    Ok(cfg)
}

/// Every key with its resolved value, in a form `parse_config` reads back unchanged.
pub fn echo_config(cfg: &SimulationConfig<f64>) -> String {
    let a = &cfg.adapt;
    let decay = match a.rf_schedule {
        RfSchedule::Constant => 1.0,
        RfSchedule::Geometric(d) => d,
    };
    let on_cap = match a.cap_policy {
        CapPolicy::Error => "error",
        CapPolicy::Accept => "accept",
    };
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("model.alpha", format!("{:?}", cfg.alpha));
    put("model.beta", format!("{:?}", cfg.beta));
    put("model.kappa", format!("{:?}", cfg.kappa));
    put("model.lambda_c", format!("{:?}", cfg.lambda_c));
    put("model.c_w", format!("{:?}", cfg.c_w));
    put("model.epsilon_mode", cfg.epsilon_mode.as_str().to_owned());
    put("model.epsilon_multiplier", format!("{:?}", cfg.epsilon_multiplier));
    put("adapt.theta", format!("{:?}", a.theta));
    put("adapt.xi_rf", format!("{:?}", a.xi_rf));
    put("adapt.xi_v", format!("{:?}", a.xi_v));
    put("adapt.xi_vn", format!("{:?}", a.xi_vn));
    put("adapt.xi_cr", format!("{:?}", a.xi_cr));
    put("adapt.algorithm", cfg.algorithm.to_string());
    put("adapt.rf_decay", format!("{decay:?}"));
    put("adapt.c_irr", format!("{:?}", cfg.c_irr));
    put("adapt.max_refines", a.max_refines_per_step.to_string());
    put("adapt.max_elements", a.max_elements.to_string());
    put("adapt.max_outer", a.max_outer.to_string());
    put("adapt.on_cap", on_cap.to_owned());
    put("time.steps", cfg.steps.to_string());
    put("time.dt", format!("{:?}", cfg.dt));
    put("time.load_rate", format!("{:?}", cfg.load_rate));
    put("mesh.n_initial", cfg.n_initial.to_string());
    put("mesh.slit_tip_y", format!("{:?}", cfg.slit_tip_y));
    put("solver.tol_lin", format!("{:?}", a.picard.tol_lin));
    put("solver.tol_picard", format!("{:?}", a.picard.tol_picard));
    put("solver.max_picard", a.picard.max_iter.to_string());
    put("solver.picard_damping", a.picard.damping.to_string());
    put("solver.max_sweeps", a.max_sweeps.to_string());
    put("out.dir", cfg.out_dir.display().to_string());
    put("out.stride", cfg.out_stride.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, SimulationConfig::default());
        assert_eq!(cfg.adapt.theta, 0.5);
        assert_eq!(cfg.adapt.xi_rf, 0.01);
        assert_eq!(cfg.adapt.xi_cr, 1e-4);
        assert_eq!(cfg.adapt.xi_v, 1e-4);
        assert_eq!(cfg.adapt.xi_vn, 1e-6);
        assert_eq!((cfg.alpha, cfg.beta, cfg.kappa), (1.0, 1.0, 1e-10));
        assert_eq!((cfg.steps, cfg.dt, cfg.load_rate, cfg.n_initial), (60, 0.01, 1.0, 16));
    }

    #[test]
    fn single_key() {
        let cfg = parse_config("adapt.theta=0.5\n").unwrap();
        assert_eq!(cfg.adapt.theta, 0.5);
        let cfg = parse_config("  # comment\nadapt.theta = 0.25  \nmodel.c_w = 8/3").unwrap();
        assert_eq!(cfg.adapt.theta, 0.25);
        assert_eq!(cfg.c_w, 8.0 / 3.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_config("adapt.theta=1.5"), Err(IoError::OutOfRange { .. })));
        assert!(matches!(parse_config("adapt.thetta=0.5"), Err(IoError::UnknownKey(_))));
        assert!(matches!(parse_config("adapt.theta"), Err(IoError::Malformed { line: 1, .. })));
        assert!(matches!(parse_config("time.dt=abc"), Err(IoError::BadValue { .. })));
        assert!(matches!(parse_config("time.steps=2.5"), Err(IoError::BadValue { .. })));
        assert!(matches!(parse_config("mesh.n_initial=5"), Err(IoError::OutOfRange { .. })));
        assert!(matches!(parse_config("time.load_rate=0"), Err(IoError::OutOfRange { .. })));
        assert!(matches!(parse_config("time.dt=1\ntime.dt=2"), Err(IoError::DuplicateKey(_))));
        assert!(matches!(parse_config("model.epsilon_mode=auto"), Err(IoError::OutOfRange { .. })));
    }

    #[test]
    fn echo_is_a_fixpoint() {
        let text = "model.kappa=1e-2\nmodel.c_w=8/3\nadapt.rf_decay=0.3\nadapt.on_cap=error\n\
                    model.epsilon_mode=mesh_scaled\nout.dir=/tmp/some where\nsolver.picard_damping=true";
        let cfg = parse_config(text).unwrap();
        let echo = echo_config(&cfg);
        let again = parse_config(&echo).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(echo_config(&again), echo);
        for key in KEYS {
            assert!(echo.contains(&format!("{key} = ")), "{key}");
        }
    }

    proptest::proptest! {
        #[test]
        fn echo_round_trips(
            kappa in 1e-12f64..1.0,
            xi_rf in 1e-4f64..1.0,
            steps in 1usize..200,
            n in 1usize..40,
            damping in proptest::bool::ANY,
        ) {
            let text = format!(
                "model.kappa = {kappa:?}\nadapt.xi_rf = {xi_rf:?}\ntime.steps = {steps}\nmesh.n_initial = {}\nsolver.picard_damping = {damping}\n",
                2 * n
            );
            let cfg = parse_config(&text).unwrap();
            proptest::prop_assert_eq!(parse_config(&echo_config(&cfg)).unwrap(), cfg);
        }
    }
}
