//! Dörfler marking, alternating minimization and the three adaptive loops.

mod algorithms;
mod alternate;

use thiserror::Error;

pub use algorithms::{
    rf_tolerance, run_algorithm, run_algorithm1, run_algorithm2, run_algorithm3, OuterRecord, Phase, RefineRecord, StepResult,
};
pub use alternate::{alternate_minimize, AltOutcome, SweepRecord};

use crate::assembly::{ConstraintSet, PicardOptions, SolveError};
use crate::estimator::{ElementIndicators, EstimatorError};
use crate::mesh::{BoundaryTag, MarkedSet, Mesh, MeshError};
use crate::model::{ModelError, ModelParams, NodalField};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("invalid adaptivity setting: {0}")]
    InvalidConfig(String),
    #[error("alternating minimization did not settle in {sweeps} sweeps (last increment {last:e})")]
    SweepCapExceeded { sweeps: usize, last: f64, history: Vec<f64> },
    #[error("refinement loop hit {rounds} rounds with estimator {eta:e} above tolerance {tol:e}")]
    RefineCapExceeded { rounds: usize, eta: f64, tol: f64 },
    #[error("outer iteration cap of {0} reached")]
    OuterCapExceeded(usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What a refinement loop does when it runs out of rounds or elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapPolicy {
    /// Abort the step (first and second algorithms).
    Error,
    /// Keep the current mesh, count a refinement failure and go on.
    Accept,
}

/// Refinement tolerance schedule for the third algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RfSchedule {
    Constant,
    /// `xi_rf * decay^k` at outer iteration `k`.
    Geometric(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptivityConfig<T> {
    pub theta: T,
    pub xi_rf: T,
    /// Clamp threshold; also the outer stop tolerance of the interleaved algorithms.
    pub xi_v: T,
    /// Stop tolerance of the alternating minimization.
    pub xi_vn: T,
    pub xi_cr: T,
    pub max_refines_per_step: usize,
    /// Refinement stops once the mesh has at least this many elements.
    pub max_elements: usize,
    pub cap_policy: CapPolicy,
    pub max_outer: usize,
    pub max_sweeps: usize,
    pub rf_schedule: RfSchedule,
    pub picard: PicardOptions<T>,
    /// When set, `epsilon = multiplier * min diameter` is recomputed after each refinement.
    pub epsilon_rescale: Option<T>,
}

impl<T: Scalar> Default for AdaptivityConfig<T> {
    fn default() -> Self {
        Self {
            theta: T::lit(0.5),
            xi_rf: T::lit(0.01),
            xi_v: T::lit(1e-4),
            xi_vn: T::lit(1e-6),
            xi_cr: T::lit(1e-4),
            max_refines_per_step: 15,
            max_elements: usize::MAX,
            cap_policy: CapPolicy::Error,
            max_outer: 30,
            max_sweeps: 200,
            rf_schedule: RfSchedule::Geometric(0.5),
            picard: PicardOptions::default(),
            epsilon_rescale: None,
        }
    }
}

impl<T: Scalar> AdaptivityConfig<T> {
    /// Whether another refinement round is allowed after `rounds` rounds.
    pub fn may_refine(&self, rounds: usize, nelem: usize) -> bool {
        rounds < self.max_refines_per_step && nelem < self.max_elements
    }

    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::InvalidConfig(m.to_owned()));
        if !(self.theta > T::zero() && self.theta <= T::one()) {
            return bad("theta must lie in (0, 1]");
        }
        for (name, x) in [
            ("xi_rf", self.xi_rf),
            ("xi_v", self.xi_v),
            ("xi_vn", self.xi_vn),
            ("xi_cr", self.xi_cr),
        ] {
            if !(x > T::zero()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if let RfSchedule::Geometric(d) = self.rf_schedule {
            if !(d > 0.0 && d <= 1.0) {
                return bad("rf decay must lie in (0, 1]");
            }
        }
        if self.max_sweeps == 0 || self.max_outer == 0 || self.max_elements == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }
}

/// Prescribed displacement on the two halves of the loaded edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletData<T> {
    pub left: T,
    pub right: T,
}

impl<T: Scalar> DirichletData<T> {
    pub fn constraints(&self, mesh: &Mesh<T>) -> Result<ConstraintSet<T>, SolveError> {
        ConstraintSet::from_pairs(mesh.dirichlet_vertices().into_iter().filter_map(|(v, tag)| match tag {
            BoundaryTag::DirichletTopLeft => Some((v, self.left)),
            BoundaryTag::DirichletTopRight => Some((v, self.right)),
            _ => None,
        }))
    }

    /// Discrete lifting: boundary values at constrained vertices, zero elsewhere.
    pub fn lifting(&self, mesh: &Mesh<T>) -> Result<NodalField<T>, SolveError> {
        let mut f = NodalField::constant(mesh, T::zero());
        self.constraints(mesh)?.apply(f.values_mut());
        Ok(f)
    }
}

/// Discrete state carried through refinement.
#[derive(Debug, Clone)]
pub struct SimState<T> {
    pub mesh: Mesh<T>,
    pub u: NodalField<T>,
    pub v: NodalField<T>,
    pub params: ModelParams<T>,
    /// Vertices held at `v = 0`.
    pub pinned: Vec<bool>,
}

impl<T: Scalar> SimState<T> {
    /// Intact state (`u = 0`, `v = 1`) on `mesh`.
    pub fn intact(mesh: Mesh<T>, params: ModelParams<T>) -> Self {
        let u = NodalField::constant(&mesh, T::zero());
        let v = NodalField::constant(&mesh, T::one());
        let pinned = vec![false; mesh.n_vertices()];
        Self {
            mesh,
            u,
            v,
            params,
            pinned,
        }
    }

    pub fn pinned_constraints(&self) -> ConstraintSet<T> {
        let mut c = ConstraintSet::new();
        for (i, &p) in self.pinned.iter().enumerate() {
            if p {
                c.insert(i, T::zero()).expect("single value");
            }
        }
        c
    }

    /// Bisects `marked` and carries every field across.
    pub fn refine(&mut self, marked: &MarkedSet, cfg: &AdaptivityConfig<T>) -> Result<(), AdaptError> {
        let fine = self.mesh.bisect(marked)?;
        self.u = self.u.transfer_to(&fine)?;
        self.v = self.v.transfer_to(&fine)?;
        self.pinned = transfer_pinned(&self.pinned, &fine);
        if let Some(m) = cfg.epsilon_rescale {
            self.params = self.params.with_epsilon(m * fine.min_diameter())?;
        }
        self.mesh = fine;
        Ok(())
    }
}

/// New vertices are pinned when both endpoints of their parent edge are.
pub fn transfer_pinned<T: Scalar>(pinned: &[bool], fine: &Mesh<T>) -> Vec<bool> {
    let mut out = pinned.to_vec();
    for parent in fine.vertex_parents().iter().skip(pinned.len()) {
        out.push(parent.is_some_and(|[a, b]| out[a] && out[b]));
    }
    out
}

/// Smallest prefix of the indicators sorted by decreasing size (ties by
/// lower index) carrying at least `theta` of their sum.
///
/// Returns the empty set when every indicator vanishes.
pub fn dorfler_mark<T: Scalar>(indicators: &ElementIndicators<T>, theta: T) -> MarkedSet {
    dorfler_mark_values(&indicators.eta_sq, theta)
}

pub fn dorfler_mark_values<T: Scalar>(eta_sq: &[T], theta: T) -> MarkedSet {
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].partial_cmp(&eta_sq[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let total: T = order.iter().map(|&i| eta_sq[i]).sum();
    if !(total > T::zero()) {
        return MarkedSet::default();
    }
    let target = theta * total;
    let mut acc = T::zero();
    let mut chosen = Vec::new();
    for &i in &order {
        acc += eta_sq[i];
        chosen.push(i);
        if acc >= target {
            break;
        }
    }
    MarkedSet::new(chosen)
}
