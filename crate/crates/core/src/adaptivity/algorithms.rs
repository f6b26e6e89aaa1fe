use super::{alternate_minimize, dorfler_mark, AdaptError, CapPolicy, AdaptivityConfig, DirichletData, RfSchedule, SimState, SweepRecord};
use crate::assembly::{clamp_v, solve_u_picard, solve_v};
use crate::estimator::{compute_indicators_excluding, crack_edges, ElementIndicators};
use crate::model::{total_energy, EnergySplit, NodalField};
use crate::scalar::{max_abs_diff, Scalar};

/// Which field was last solved when an estimate was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After a full alternating minimization.
    Alternation,
    Displacement,
    PhaseField,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Alternation => "alt",
            Phase::Displacement => "u",
            Phase::PhaseField => "v",
        }
    }
}

/// One estimate inside a refinement loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineRecord<T> {
    pub phase: Phase,
    pub outer: usize,
    pub round: usize,
    pub ndof: usize,
    pub nelem: usize,
    pub eta_tilde: T,
    pub eta_hat: T,
    pub eta: T,
    pub tol: T,
    pub energy: EnergySplit<T>,
}

/// Energies around one outer iteration of the interleaved algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord<T> {
    pub outer: usize,
    pub tol: T,
    /// `J(u_{k-1}, v_{k-1})` on the incoming mesh; `None` on the first
    /// iteration of a step, where the incoming displacement carries the
    /// previous load.
    pub start: Option<T>,
    /// `J(u_k, v_{k-1})` after the displacement branch.
    pub half: T,
    /// `J(u_k, v_k)` after the phase-field branch.
    pub end: T,
    pub increment: T,
    /// Both refinement loops met their tolerance.
    pub refine_ok: bool,
    pub nelem: usize,
}

impl<T: Scalar> OuterRecord<T> {
    /// Largest relative violation of `end <= half <= start`.
    pub fn monotonicity_defect(&self) -> T {
        let rel = |hi: T, lo: T| (lo - hi) / hi.abs().max(T::min_positive_value());
        let mut d = rel(self.half, self.end);
        if let Some(s) = self.start {
            d = d.max(rel(s, self.half));
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub refines: usize,
    /// Alternating sweeps (first algorithm) or outer iterations (others).
    pub sweeps: usize,
    pub eta: T,
    pub sweep_log: Vec<SweepRecord<T>>,
    pub refine_log: Vec<RefineRecord<T>>,
    pub outer_log: Vec<OuterRecord<T>>,
    /// Refinement loops that stopped at the round cap (third algorithm only).
    pub refine_failures: usize,
}

fn estimate<T: Scalar>(
    state: &SimState<T>,
    u: &NodalField<T>,
    v: &NodalField<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<ElementIndicators<T>, AdaptError> {
    let crack = crack_edges(&state.mesh, v, cfg.xi_cr);
    Ok(compute_indicators_excluding(&state.mesh, u, v, &state.params, &crack)?)
}

fn record<T: Scalar>(
    state: &SimState<T>,
    ind: &ElementIndicators<T>,
    energy: EnergySplit<T>,
    phase: Phase,
    outer: usize,
    round: usize,
    tol: T,
) -> RefineRecord<T> {
    RefineRecord {
        phase,
        outer,
        round,
        ndof: state.mesh.n_vertices(),
        nelem: state.mesh.n_elements(),
        eta_tilde: ind.global_tilde(),
        eta_hat: ind.global_hat(),
        eta: ind.global(),
        tol,
        energy,
    }
}

/// Post-minimization refinement: alternate to convergence, estimate, refine, repeat.
pub fn run_algorithm1<T: Scalar>(
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<StepResult<T>, AdaptError> {
    cfg.validate()?;
    let mut out = StepResult {
        refines: 0,
        sweeps: 0,
        eta: T::zero(),
        sweep_log: Vec::new(),
        refine_log: Vec::new(),
        outer_log: Vec::new(),
        refine_failures: 0,
    };
    loop {
        let alt = alternate_minimize(state, load, cfg)?;
        out.sweeps += alt.sweeps;
        let energy = alt.records.last().map(|r| r.energy_v).unwrap_or_default();
        out.sweep_log.extend(alt.records);
        let ind = estimate(state, &state.u, &state.v, cfg)?;
        out.eta = ind.global();
        out.refine_log
            .push(record(state, &ind, energy, Phase::Alternation, 0, out.refines, cfg.xi_rf));
        if out.eta <= cfg.xi_rf {
            return Ok(out);
        }
        if !cfg.may_refine(out.refines, state.mesh.n_elements()) {
            if cfg.cap_policy == CapPolicy::Accept {
                out.refine_failures = 1;
                return Ok(out);
            }
            return Err(AdaptError::RefineCapExceeded {
                rounds: out.refines,
                eta: out.eta.to_f64_lossy(),
                tol: cfg.xi_rf.to_f64_lossy(),
            });
        }
        state.refine(&dorfler_mark(&ind, cfg.theta), cfg)?;
        out.refines += 1;
    }
}

pub fn run_algorithm2<T: Scalar>(
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<StepResult<T>, AdaptError> {
    interleaved(state, load, cfg, |_| T::one(), cfg.cap_policy == CapPolicy::Error, cfg.max_sweeps)
}

/// Interleaved refinement with tolerance `xi_rf * schedule(k)`.
///
/// A refinement loop that stops at its cap is counted in `refine_failures`
/// rather than aborting the step, whatever the cap policy.
pub fn run_algorithm3<T: Scalar>(
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<StepResult<T>, AdaptError> {
    interleaved(state, load, cfg, |k| rf_tolerance(cfg, k) / cfg.xi_rf, false, cfg.max_outer)
}

/// Refinement tolerance of the third algorithm at outer iteration `k`.
pub fn rf_tolerance<T: Scalar>(cfg: &AdaptivityConfig<T>, k: usize) -> T {
    match cfg.rf_schedule {
        RfSchedule::Constant => cfg.xi_rf,
        RfSchedule::Geometric(d) => cfg.xi_rf * T::lit(d).powi(k as i32),
    }
}

/// Dispatches on the algorithm number (1, 2 or 3).
pub fn run_algorithm<T: Scalar>(
    algorithm: u8,
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<StepResult<T>, AdaptError> {
    match algorithm {
        1 => run_algorithm1(state, load, cfg),
        2 => run_algorithm2(state, load, cfg),
        3 => run_algorithm3(state, load, cfg),
        other => Err(AdaptError::InvalidConfig(format!("unknown algorithm {other}"))),
    }
}

fn interleaved<T: Scalar>(
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
    schedule: impl Fn(usize) -> T,
    strict: bool,
    max_outer: usize,
) -> Result<StepResult<T>, AdaptError> {
    cfg.validate()?;
    let mut out = StepResult {
        refines: 0,
        sweeps: 0,
        eta: T::zero(),
        sweep_log: Vec::new(),
        refine_log: Vec::new(),
        outer_log: Vec::new(),
        refine_failures: 0,
    };
    let branch_tol_scale = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    for k in 0..max_outer {
        let xi_k = cfg.xi_rf * schedule(k);
        let tol = xi_k * branch_tol_scale;
        let start = if k == 0 {
            None
        } else {
            Some(total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?.total)
        };

        // displacement branch; state.v is the previous phase field throughout
        let mut rounds = 0;
        let mut ok_u;
        loop {
            let bc = load.constraints(&state.mesh)?;
            let pic = solve_u_picard(&state.mesh, &state.v, &bc, &state.params, &cfg.picard, Some(&state.u))?;
            state.u = pic.u;
            let ind = estimate(state, &state.u, &state.v, cfg)?;
            let energy = total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?;
            out.eta = ind.global();
            out.refine_log
                .push(record(state, &ind, energy, Phase::Displacement, k, rounds, tol));
            ok_u = out.eta <= tol;
            if ok_u || !cfg.may_refine(rounds, state.mesh.n_elements()) {
                break;
            }
            state.refine(&dorfler_mark(&ind, cfg.theta), cfg)?;
            rounds += 1;
            out.refines += 1;
        }
        if !ok_u && strict {
            return Err(AdaptError::RefineCapExceeded {
                rounds,
                eta: out.eta.to_f64_lossy(),
                tol: tol.to_f64_lossy(),
            });
        }
        let half = total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?.total;

        // phase-field branch
        let mut v_prev = state.v.clone();
        let mut rounds = 0;
        let mut ok_v;
        loop {
            let cons = state.pinned_constraints();
            if state.u.max_abs() > T::zero() {
                let v = solve_v(&state.mesh, &state.u, &state.v, &cons, &state.params, cfg.picard.tol_lin)?;
                state.v = clamp_v(&v, cfg.xi_v);
            }
            let ind = estimate(state, &state.u, &state.v, cfg)?;
            let energy = total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?;
            out.eta = ind.global();
            out.refine_log
                .push(record(state, &ind, energy, Phase::PhaseField, k, rounds, tol));
            ok_v = out.eta <= tol;
            if ok_v || !cfg.may_refine(rounds, state.mesh.n_elements()) {
                break;
            }
            state.refine(&dorfler_mark(&ind, cfg.theta), cfg)?;
            v_prev = v_prev.transfer_to(&state.mesh)?;
            rounds += 1;
            out.refines += 1;
        }
        if !ok_v && strict {
            return Err(AdaptError::RefineCapExceeded {
                rounds,
                eta: out.eta.to_f64_lossy(),
                tol: tol.to_f64_lossy(),
            });
        }
        if !(ok_u && ok_v) {
            out.refine_failures += 1;
        }
        let end = total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?.total;
        let increment = max_abs_diff(state.v.values(), v_prev.values());
        out.outer_log.push(OuterRecord {
            outer: k,
            tol: xi_k,
            start,
            half,
            end,
            increment,
            refine_ok: ok_u && ok_v,
            nelem: state.mesh.n_elements(),
        });
        out.sweeps = k + 1;
        if increment < cfg.xi_v {
            return Ok(out);
        }
    }
    Err(AdaptError::OuterCapExceeded(max_outer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_with_slit;
    use crate::model::ModelParams;

    fn setup(n: usize) -> SimState<f64> {
        let mesh = build_unit_square_with_slit::<f64>(n, 0.5).unwrap();
        let p = ModelParams::new(1.0, 1.0, 1e-10, 0.5, 2.7, 8.0 / 3.0).unwrap();
        SimState::intact(mesh, p)
    }

    #[test]
    fn huge_tolerance_never_refines() {
        let cfg = AdaptivityConfig {
            xi_rf: 1e6,
            ..Default::default()
        };
        let load = DirichletData { left: -0.05, right: 0.05 };
        for alg in 1..=3 {
            let mut st = setup(4);
            let ne = st.mesh.n_elements();
            let r = run_algorithm(alg, &mut st, &load, &cfg).unwrap();
            assert_eq!(r.refines, 0);
            assert_eq!(st.mesh.n_elements(), ne);
        }
    }

    #[test]
    fn theta_one_refines_every_element() {
        let cfg = AdaptivityConfig {
            theta: 1.0,
            xi_rf: 1e-9,
            max_refines_per_step: 1,
            ..Default::default()
        };
        let mut st = setup(2);
        let ne = st.mesh.n_elements();
        let err = run_algorithm1(&mut st, &DirichletData { left: -0.05, right: 0.05 }, &cfg).unwrap_err();
        assert!(matches!(err, AdaptError::RefineCapExceeded { rounds: 1, .. }));
        assert_eq!(st.mesh.n_elements(), 2 * ne);
    }

    #[test]
    fn geometric_schedule_arithmetic() {
        let cfg = AdaptivityConfig {
            xi_rf: 0.01,
            rf_schedule: RfSchedule::Geometric(0.5),
            ..Default::default()
        };
        let seq: Vec<f64> = (0..3).map(|k| rf_tolerance(&cfg, k)).collect();
        assert_eq!(seq, vec![0.01, 0.005, 0.0025]);
        let flat = AdaptivityConfig {
            rf_schedule: RfSchedule::Geometric(1.0),
            ..cfg
        };
        assert_eq!(rf_tolerance(&flat, 7), 0.01);
    }

    #[test]
    fn interleaved_energies_decrease() {
        let cfg = AdaptivityConfig {
            xi_rf: 0.3,
            ..Default::default()
        };
        let mut st = setup(4);
        let r = run_algorithm2(&mut st, &DirichletData { left: -0.05, right: 0.05 }, &cfg).unwrap();
        assert!(r.refines > 0);
        for o in &r.outer_log {
            assert!(o.monotonicity_defect() <= 1e-8, "{o:?}");
        }
    }
}
