//! Quasi-static time stepping with crack irreversibility.

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::adaptivity::{run_algorithm, AdaptError, AdaptivityConfig, CapPolicy, DirichletData, SimState, StepResult};
use crate::assembly::PicardOptions;
use crate::estimator::crack_edges;
use crate::mesh::{build_unit_square_with_slit, Mesh, MeshError};
use crate::model::{total_energy, ModelError, ModelParams, NodalField};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(String),
    #[error("boundary load queried off the loaded edge at ({0}, {1})")]
    OffLoadedEdge(f64, f64),
    #[error("step {step} (t = {time}): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: AdaptError,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("observer: {0}")]
    Observer(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonMode {
    /// Computed once from the initial mesh.
    Fixed,
    /// Recomputed from the current mesh after every refinement.
    MeshScaled,
}

impl EpsilonMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EpsilonMode::Fixed => "fixed",
            EpsilonMode::MeshScaled => "mesh_scaled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T> {
    pub alpha: T,
    pub beta: T,
    pub kappa: T,
    pub lambda_c: T,
    pub c_w: T,
    pub epsilon_mode: EpsilonMode,
    pub epsilon_multiplier: T,
    pub adapt: AdaptivityConfig<T>,
    pub algorithm: u8,
    pub steps: usize,
    pub dt: T,
    pub load_rate: T,
    pub n_initial: usize,
    pub slit_tip_y: T,
    /// Vertices whose phase field falls below this at the end of a step are pinned to zero.
    pub c_irr: T,
    pub out_dir: PathBuf,
    /// Field snapshots every `out_stride` steps (0 disables them).
    pub out_stride: usize,
}

impl<T: Scalar> Default for SimulationConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::one(),
            beta: T::one(),
            kappa: T::lit(1e-10),
            lambda_c: T::lit(2.7),
            c_w: T::lit(8.0 / 3.0),
            epsilon_mode: EpsilonMode::Fixed,
            epsilon_multiplier: T::lit(10.0),
            adapt: AdaptivityConfig {
                max_elements: 20_000,
                cap_policy: CapPolicy::Accept,
                picard: PicardOptions {
                    max_iter: 1000,
                    ..Default::default()
                },
                ..Default::default()
            },
            algorithm: 1,
            steps: 60,
            dt: T::lit(0.01),
            load_rate: T::one(),
            n_initial: 16,
            slit_tip_y: T::lit(0.5),
            c_irr: T::lit(1e-2),
            out_dir: PathBuf::from("out"),
            out_stride: 1,
        }
    }
}

impl<T: Scalar> SimulationConfig<T> {
    /// Checks everything except the load rate, which may be zero for
    /// unloaded runs driven from code.
    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |m: &str| Err(DriverError::InvalidConfig(m.to_owned()));
        if self.steps == 0 {
            return bad("at least one time step is required");
        }
        if !(self.dt > T::zero()) {
            return bad("time step must be positive");
        }
        if !(self.epsilon_multiplier > T::zero()) {
            return bad("epsilon multiplier must be positive");
        }
        if !(self.c_irr >= T::zero() && self.c_irr < T::one()) {
            return bad("irreversibility threshold must lie in [0, 1)");
        }
        if !(1..=3).contains(&self.algorithm) {
            return bad("algorithm must be 1, 2 or 3");
        }
        if !self.load_rate.is_finite() {
            return bad("load rate must be finite");
        }
        self.adapt
            .validate()
            .map_err(|e| DriverError::InvalidConfig(e.to_string()))
    }

    pub fn time(&self, step: usize) -> T {
        T::from_usize_lossy(step) * self.dt
    }

    pub fn load(&self, step: usize) -> DirichletData<T> {
        let g = self.load_rate * self.time(step);
        DirichletData { left: -g, right: g }
    }
}

/// Prescribed displacement on the top edge: `-c t` left of the slit, `+c t` right of it.
///
/// The slit mouth itself belongs to both faces and is resolved by the
/// boundary tags, so querying exactly `x = 0.5` is an error.
pub fn boundary_load<T: Scalar>(t: T, c: T, x: [T; 2]) -> Result<T, DriverError> {
    let off = || DriverError::OffLoadedEdge(x[0].to_f64_lossy(), x[1].to_f64_lossy());
    let half = T::lit(0.5);
    if x[1] != T::one() || x[0] < T::zero() || x[0] > T::one() || x[0] == half {
        return Err(off());
    }
    Ok(if x[0] < half { -c * t } else { c * t })
}

pub fn select_epsilon<T: Scalar>(mesh: &Mesh<T>, multiplier: T) -> T {
    multiplier * mesh.min_diameter()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrackState {
    pub pinned: BTreeSet<usize>,
    pub crack_edges: Vec<usize>,
}

/// Pins every vertex with `v < c_irr` (on top of those already pinned) and
/// recomputes the discrete crack set.
pub fn update_crack_state<T: Scalar>(
    mesh: &Mesh<T>,
    v: &NodalField<T>,
    state: &CrackState,
    c_irr: T,
    xi_cr: T,
) -> CrackState {
    let mut pinned = state.pinned.clone();
    pinned.extend(
        v.values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x < c_irr)
            .map(|(i, _)| i),
    );
    CrackState {
        pinned,
        crack_edges: crack_edges(mesh, v, xi_cr),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord<T> {
    pub step: usize,
    pub time: T,
    pub bulk: T,
    pub surface: T,
    pub total: T,
    pub ndof: usize,
    pub nelem: usize,
    pub nrefines: usize,
    pub sweeps: usize,
}

/// Everything an observer sees at the end of a step.
pub struct StepView<'a, T> {
    pub step: usize,
    pub time: T,
    pub state: &'a SimState<T>,
    pub crack: &'a CrackState,
    pub result: &'a StepResult<T>,
    pub record: &'a EnergyRecord<T>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub records: Vec<EnergyRecord<T>>,
    pub state: SimState<T>,
    pub crack: CrackState,
}

pub fn initial_state<T: Scalar>(cfg: &SimulationConfig<T>) -> Result<(SimState<T>, AdaptivityConfig<T>), DriverError> {
    let mesh = build_unit_square_with_slit(cfg.n_initial, cfg.slit_tip_y.to_f64_lossy())?;
    let eps = select_epsilon(&mesh, cfg.epsilon_multiplier);
    let params = ModelParams::new(cfg.alpha, cfg.beta, cfg.kappa, eps, cfg.lambda_c, cfg.c_w)?;
    let mut adapt = cfg.adapt;
    adapt.epsilon_rescale = match cfg.epsilon_mode {
        EpsilonMode::Fixed => None,
        EpsilonMode::MeshScaled => Some(cfg.epsilon_multiplier),
    };
    Ok((SimState::intact(mesh, params), adapt))
}

/// Runs all time steps, calling `observer` after each one.
pub fn run_quasi_static<T: Scalar>(
    cfg: &SimulationConfig<T>,
    mut observer: impl FnMut(&StepView<'_, T>) -> Result<(), DriverError>,
) -> Result<RunOutcome<T>, DriverError> {
    cfg.validate()?;
    let (mut state, adapt) = initial_state(cfg)?;
    let mut crack = CrackState::default();
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let time = cfg.time(step);
        let result = run_algorithm(cfg.algorithm, &mut state, &cfg.load(step), &adapt).map_err(|source| {
            DriverError::Step {
                step,
                time: time.to_f64_lossy(),
                source,
            }
        })?;
        crack.pinned.extend(state.pinned.iter().enumerate().filter(|(_, &p)| p).map(|(i, _)| i));
        crack = update_crack_state(&state.mesh, &state.v, &crack, cfg.c_irr, adapt.xi_cr);
        for &i in &crack.pinned {
            state.pinned[i] = true;
            state.v.values_mut()[i] = T::zero();
        }
        let e = total_energy(&state.u, &state.v, &state.mesh, &state.params, true)?;
        let record = EnergyRecord {
            step,
            time,
            bulk: e.bulk,
            surface: e.surface,
            total: e.total,
            ndof: state.mesh.n_vertices(),
            nelem: state.mesh.n_elements(),
            nrefines: result.refines,
            sweeps: result.sweeps,
        };
        observer(&StepView {
            step,
            time,
            state: &state,
            crack: &crack,
            result: &result,
            record: &record,
        })?;
        records.push(record);
    }
    Ok(RunOutcome { records, state, crack })
}
