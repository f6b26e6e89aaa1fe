use super::{AdaptError, AdaptivityConfig, DirichletData, SimState};
use crate::assembly::{clamp_v, solve_u_picard, solve_v};
use crate::estimator::grad_l2_norm;
use crate::model::{total_energy, EnergySplit};
use crate::scalar::{max_abs_diff, Scalar};

/// Diagnostics of one alternating sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord<T> {
    pub sweep: usize,
    /// `||v_k - v_{k-1}||_inf`
    pub increment: T,
    pub picard_iterations: usize,
    pub grad_u: T,
    pub grad_v: T,
    /// `||grad f_h||` of the discrete boundary lifting.
    pub grad_lifting: T,
    /// Energy after the displacement solve, before the phase-field solve.
    pub energy_u: EnergySplit<T>,
    pub energy_v: EnergySplit<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltOutcome<T> {
    pub sweeps: usize,
    pub records: Vec<SweepRecord<T>>,
}

/// Alternates the displacement and phase-field solves on a fixed mesh until
/// the phase-field increment drops below `xi_vn`.
///
/// The phase-field solve is skipped while the displacement vanishes
/// identically (the system would be singular and the current field is
/// already optimal).
pub fn alternate_minimize<T: Scalar>(
    state: &mut SimState<T>,
    load: &DirichletData<T>,
    cfg: &AdaptivityConfig<T>,
) -> Result<AltOutcome<T>, AdaptError> {
    let mesh = &state.mesh;
    let p = &state.params;
    let bc = load.constraints(mesh)?;
    let cons = state.pinned_constraints();
    let grad_lifting = grad_l2_norm(mesh, load.lifting(mesh)?.values());
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    cons.apply(v.values_mut());
    let mut records = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let pic = solve_u_picard(mesh, &v, &bc, p, &cfg.picard, Some(&u))?;
        u = pic.u;
        let energy_u = total_energy(&u, &v, mesh, p, true)?;
        let v_new = if u.max_abs() == T::zero() {
            v.clone()
        } else {
            clamp_v(&solve_v(mesh, &u, &v, &cons, p, cfg.picard.tol_lin)?, cfg.xi_v)
        };
        let increment = max_abs_diff(v_new.values(), v.values());
        v = v_new;
        records.push(SweepRecord {
            sweep,
            increment,
            picard_iterations: pic.iterations,
            grad_u: grad_l2_norm(mesh, u.values()),
            grad_v: grad_l2_norm(mesh, v.values()),
            grad_lifting,
            energy_u,
            energy_v: total_energy(&u, &v, mesh, p, true)?,
        });
        if increment < cfg.xi_vn {
            state.u = u;
            state.v = v;
            return Ok(AltOutcome { sweeps: sweep, records });
        }
    }
    Err(AdaptError::SweepCapExceeded {
        sweeps: cfg.max_sweeps,
        last: records.last().map_or(f64::NAN, |r| r.increment.to_f64_lossy()),
        history: records.iter().map(|r| r.increment.to_f64_lossy()).collect(),
    })
}
