//! Frozen-coefficient linear systems for the displacement and phase-field
//! subproblems, constraint elimination, and the Picard loop for `u`.
//!
//! Both systems use the mass-lumped discrete functional: the stress
//! coefficient sees the vertex interpolant of `v^2`, and the phase-field
//! reaction term is diagonal.

mod sparse;

use std::collections::BTreeMap;

use thiserror::Error;

pub use sparse::{conjugate_gradient, CgStats, CsrMatrix};

use crate::mesh::Mesh;
use crate::model::{LocalFields, ModelError, ModelParams, NodalField};
use crate::quadrature::triangle_rule;
use crate::scalar::{dot2, max_abs_diff, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("conjugate gradients stopped after {iterations} iterations at relative residual {relative_residual:e}")]
    CgNotConverged { iterations: usize, relative_residual: f64 },
    #[error("conjugate gradients broke down at iteration {0} (matrix not positive definite)")]
    Breakdown(usize),
    #[error("vertex {vertex} constrained to both {first} and {second}")]
    ConflictingConstraint { vertex: usize, first: f64, second: f64 },
    #[error("phase-field system is singular: no reaction term and no constrained vertex")]
    SingularSystem,
    #[error("Picard iteration did not converge in {iterations} iterations (last increment {last:e})")]
    PicardNotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Prescribed vertex values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet<T> {
    values: BTreeMap<usize, T>,
}

impl<T: Scalar> ConstraintSet<T> {
    pub fn new() -> Self {
        Self {
            values: BTreeMap::new(),
        }
    }

    /// Adds `vertex = value`; re-adding the same value is a no-op.
    pub fn insert(&mut self, vertex: usize, value: T) -> Result<(), SolveError> {
        match self.values.get(&vertex) {
            Some(&old) if old != value => Err(SolveError::ConflictingConstraint {
                vertex,
                first: old.to_f64_lossy(),
                second: value.to_f64_lossy(),
            }),
            _ => {
                self.values.insert(vertex, value);
                Ok(())
            }
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, T)>) -> Result<Self, SolveError> {
        let mut set = Self::new();
        for (v, x) in pairs {
            set.insert(v, x)?;
        }
        Ok(set)
    }

    pub fn get(&self, vertex: usize) -> Option<T> {
        self.values.get(&vertex).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.values.iter().map(|(&v, &x)| (v, x))
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.values.keys().copied().collect()
    }

    fn dense(&self, n: usize) -> Vec<Option<T>> {
        let mut out = vec![None; n];
        for (&v, &x) in &self.values {
            if v < n {
                out[v] = Some(x);
            }
        }
        out
    }

    /// Writes the prescribed values into `x`.
    pub fn apply(&self, x: &mut [T]) {
        for (&v, &val) in &self.values {
            if let Some(slot) = x.get_mut(v) {
                *slot = val;
            }
        }
    }
}

/// A symmetric linear system with constraints already eliminated.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem<T> {
    pub matrix: CsrMatrix<T>,
    pub rhs: Vec<T>,
    pub constrained: Vec<(usize, T)>,
}

/// Element-mean of the lumped stress coefficient with `grad u` frozen.
fn mean_flux_coefficient<T: Scalar>(loc: &LocalFields<T>, v: &[T], gu2: T, p: &ModelParams<T>) -> T {
    let vn = loc.nodal(v);
    triangle_rule::<T>()
        .iter()
        .map(|&(bary, w)| w * p.flux_coefficient(p.degradation(loc.v_squared(bary, vn, true)), gu2))
        .sum()
}

/// Stiffness of `int a_lag grad u . grad psi` with `a_lag` built from `(v, u_lag)`.
pub fn assemble_u_system<T: Scalar>(
    mesh: &Mesh<T>,
    v: &NodalField<T>,
    u_lag: &NodalField<T>,
    bc: &ConstraintSet<T>,
    p: &ModelParams<T>,
) -> Result<SparseSystem<T>, SolveError> {
    v.check_bound(mesh)?;
    u_lag.check_bound(mesh)?;
    let n = mesh.n_vertices();
    let mut matrix = CsrMatrix::from_adjacency(mesh.adjacency());
    let mut rhs = vec![T::zero(); n];
    for e in 0..mesh.n_elements() {
        let loc = LocalFields::of(mesh, e);
        let gu = loc.gradient(u_lag.values());
        let a = mean_flux_coefficient(&loc, v.values(), dot2(gu, gu), p) * loc.area;
        for i in 0..3 {
            for j in 0..3 {
                matrix.add(loc.verts[i], loc.verts[j], a * dot2(loc.grads[i], loc.grads[j]));
            }
        }
    }
    matrix.eliminate(&mut rhs, &bc.dense(n));
    Ok(SparseSystem {
        matrix,
        rhs,
        constrained: bc.iter().collect(),
    })
}

/// Phase-field system `int 2 rho grad v . grad phi + c_vu pi_h(v phi) = int delta pi_h(phi)`.
///
/// `c_vu` uses `grad u` and the lagged phase field `v_lag` inside the
/// denominator. Vertices in `cons` are eliminated.
pub fn assemble_v_system<T: Scalar>(
    mesh: &Mesh<T>,
    u: &NodalField<T>,
    v_lag: &NodalField<T>,
    cons: &ConstraintSet<T>,
    p: &ModelParams<T>,
) -> Result<SparseSystem<T>, SolveError> {
    let (mut matrix, mut rhs) = assemble_v_raw(mesh, u, v_lag, cons, p)?;
    matrix.eliminate(&mut rhs, &cons.dense(mesh.n_vertices()));
    Ok(SparseSystem {
        matrix,
        rhs,
        constrained: cons.iter().collect(),
    })
}

fn assemble_v_raw<T: Scalar>(
    mesh: &Mesh<T>,
    u: &NodalField<T>,
    v_lag: &NodalField<T>,
    cons: &ConstraintSet<T>,
    p: &ModelParams<T>,
) -> Result<(CsrMatrix<T>, Vec<T>), SolveError> {
    u.check_bound(mesh)?;
    v_lag.check_bound(mesh)?;
    let n = mesh.n_vertices();
    let mut matrix = CsrMatrix::from_adjacency(mesh.adjacency());
    let mut rhs = vec![T::zero(); n];
    let rule = triangle_rule::<T>();
    let two_rho = T::lit(2.0) * p.rho;
    let third = T::lit(1.0 / 3.0);
    let mut reaction_total = T::zero();
    for e in 0..mesh.n_elements() {
        let loc = LocalFields::of(mesh, e);
        let gu = loc.gradient(u.values());
        let gu2 = dot2(gu, gu);
        let vn = loc.nodal(v_lag.values());
        let mut lumped = [T::zero(); 3];
        if gu2 > T::zero() {
            for (bary, w) in rule {
                let c = p.driving_coefficient(p.degradation(loc.v_squared(bary, vn, true)), gu2);
                for k in 0..3 {
                    lumped[k] += w * c * bary[k];
                }
            }
        }
        for i in 0..3 {
            let vi = loc.verts[i];
            for j in 0..3 {
                matrix.add(vi, loc.verts[j], two_rho * loc.area * dot2(loc.grads[i], loc.grads[j]));
            }
            matrix.add(vi, vi, loc.area * lumped[i]);
            reaction_total += lumped[i];
            rhs[vi] += p.delta * loc.area * third;
        }
    }
    if cons.is_empty() && reaction_total == T::zero() {
        return Err(SolveError::SingularSystem);
    }
    Ok((matrix, rhs))
}

/// Solves an assembled system by Jacobi-preconditioned CG.
pub fn solve_sparse<T: Scalar>(
    system: &SparseSystem<T>,
    x0: Option<&[T]>,
    tol_lin: T,
    max_iter: usize,
) -> Result<(Vec<T>, CgStats<T>), SolveError> {
    let n = system.rhs.len();
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![T::zero(); n],
    };
    for &(v, val) in &system.constrained {
        x[v] = val;
    }
    let stats = conjugate_gradient(&system.matrix, &system.rhs, &mut x, tol_lin, max_iter)?;
    Ok((x, stats))
}

/// Sets values at or below `xi_v` to 0 and values at or above 1 to 1.
pub fn clamp_v<T: Scalar>(v: &NodalField<T>, xi_v: T) -> NodalField<T> {
    let mut out = v.clone();
    for x in out.values_mut() {
        if *x <= xi_v {
            *x = T::zero();
        } else if *x >= T::one() {
            *x = T::one();
        }
    }
    out
}

/// Stopping and damping controls for the displacement solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions<T> {
    /// Stop once the sup-norm increment is at most this.
    pub tol_picard: T,
    /// Relative residual target of each linear solve.
    pub tol_lin: T,
    pub max_iter: usize,
    /// Halve the relaxation factor (down to 1/64) whenever the increment grows.
    pub damping: bool,
}

impl<T: Scalar> Default for PicardOptions<T> {
    fn default() -> Self {
        Self {
            tol_picard: T::lit(1e-8),
            tol_lin: T::lit(1e-10),
            max_iter: 200,
            damping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardOutcome<T> {
    pub u: NodalField<T>,
    pub iterations: usize,
    /// Sup-norm increment of each iteration.
    pub history: Vec<f64>,
}

fn cg_cap(n: usize) -> usize {
    (10 * n).max(100)
}

/// Frozen-coefficient fixed-point iteration for `u` at fixed `v`.
///
/// Starts from `warm` (or zero) with the boundary values imposed. The
/// relaxation factor starts at 1 and is halved whenever the increment grows.
/// With `beta = 0` the problem is linear and a single solve is returned.
pub fn solve_u_picard<T: Scalar>(
    mesh: &Mesh<T>,
    v: &NodalField<T>,
    bc: &ConstraintSet<T>,
    p: &ModelParams<T>,
    opts: &PicardOptions<T>,
    warm: Option<&NodalField<T>>,
) -> Result<PicardOutcome<T>, SolveError> {
    v.check_bound(mesh)?;
    let mut u = match warm {
        Some(w) => {
            w.check_bound(mesh)?;
            w.clone()
        }
        None => NodalField::constant(mesh, T::zero()),
    };
    bc.apply(u.values_mut());
    let cap = cg_cap(mesh.n_vertices());
    let linear = p.beta == T::zero();
    let mut omega = T::one();
    let min_omega = T::lit(1.0 / 64.0);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter.max(1) {
        let system = assemble_u_system(mesh, v, &u, bc, p)?;
        let (full, _) = solve_sparse(&system, Some(u.values()), opts.tol_lin, cap)?;
        if linear {
            history.push(max_abs_diff(&full, u.values()).to_f64_lossy());
            return Ok(PicardOutcome {
                u: NodalField::new(mesh, full)?,
                iterations: 1,
                history,
            });
        }
        let next: Vec<T> = full
            .iter()
            .zip(u.values())
            .map(|(&a, &b)| omega * a + (T::one() - omega) * b)
            .collect();
        let inc = max_abs_diff(&next, u.values());
        if let Some(&prev) = history.last() {
            if opts.damping && inc.to_f64_lossy() > prev && omega > min_omega {
                omega = omega * T::lit(0.5);
            }
        }
        history.push(inc.to_f64_lossy());
        u = NodalField::new(mesh, next)?;
        if inc <= opts.tol_picard {
            return Ok(PicardOutcome {
                u,
                iterations: it,
                history,
            });
        }
    }
    Err(SolveError::PicardNotConverged {
        iterations: opts.max_iter,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Minimizes the lagged phase-field quadratic over `0 <= v <= 1` at fixed `u`,
/// warm-started from `v_lag`.
pub fn solve_v<T: Scalar>(
    mesh: &Mesh<T>,
    u: &NodalField<T>,
    v_lag: &NodalField<T>,
    cons: &ConstraintSet<T>,
    p: &ModelParams<T>,
    tol_lin: T,
) -> Result<NodalField<T>, SolveError> {
    let n = mesh.n_vertices();
    let (matrix, rhs) = assemble_v_raw(mesh, u, v_lag, cons, p)?;
    let pinned = cons.dense(n);
    let mut bound: Vec<Option<T>> = pinned.clone();
    let mut x = v_lag.values().to_vec();
    // primal-dual active set on 0 <= v <= 1; terminates for M-matrices
    for _ in 0..BOX_MAX_ITER {
        let (mut a, mut b) = (matrix.clone(), rhs.clone());
        a.eliminate(&mut b, &bound);
        for (xi, bi) in x.iter_mut().zip(&bound) {
            if let Some(g) = bi {
                *xi = *g;
            }
        }
        conjugate_gradient(&a, &b, &mut x, tol_lin, cg_cap(n))?;
        let mut ax = vec![T::zero(); n];
        matrix.mul_vec(&x, &mut ax);
        let mut next = pinned.clone();
        for i in 0..n {
            if pinned[i].is_some() {
                continue;
            }
            let r = rhs[i] - ax[i];
            next[i] = match bound[i] {
                Some(g) if g == T::one() && r > T::zero() => Some(T::one()),
                Some(g) if g == T::zero() && r < T::zero() => Some(T::zero()),
                _ if x[i] > T::one() => Some(T::one()),
                _ if x[i] < T::zero() => Some(T::zero()),
                _ => None,
            };
        }
        if next == bound {
            return Ok(NodalField::new(mesh, x)?);
        }
        bound = next;
    }
    // cycling is possible only without the sign condition; fall back to projection
    for xi in &mut x {
        *xi = xi.max(T::zero()).min(T::one());
    }
    Ok(NodalField::new(mesh, x)?)
}

const BOX_MAX_ITER: usize = 200;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_unit_square_with_slit, BoundaryTag};
    use crate::model::{derivative_a_unchecked, derivative_b_unchecked};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize) -> Mesh<f64> {
        let mut verts = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                verts.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut tris = Vec::new();
        for j in 0..n {
            for i in 0..n {
                tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Mesh::from_triangles(verts, &tris, |_, _| BoundaryTag::DirichletTopLeft).unwrap()
    }

    fn params(beta: f64, kappa: f64) -> ModelParams<f64> {
        ModelParams::new(1.0, beta, kappa, 0.1, 2.7, 8.0 / 3.0).unwrap()
    }

    #[test]
    fn conflicting_constraint_rejected() {
        let mut c = ConstraintSet::new();
        c.insert(3, 1.0).unwrap();
        c.insert(3, 1.0).unwrap();
        assert!(matches!(
            c.insert(3, 2.0),
            Err(SolveError::ConflictingConstraint { vertex: 3, .. })
        ));
    }

    #[test]
    fn two_triangle_patch_matches_hand_stiffness() {
        let mesh = square(1);
        let p = params(0.0, 0.3);
        let one = NodalField::constant(&mesh, 1.0);
        let zero = NodalField::constant(&mesh, 0.0);
        let sys = assemble_u_system(&mesh, &one, &zero, &ConstraintSet::new(), &p).unwrap();
        // vertices (0,0),(1,0),(0,1),(1,1); diagonal split (0,0)-(1,1)
        let expected = [
            [1.0, -0.5, -0.5, 0.0],
            [-0.5, 1.0, 0.0, -0.5],
            [-0.5, 0.0, 1.0, -0.5],
            [0.0, -0.5, -0.5, 1.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((sys.matrix.get(i, j) - expected[i][j]).abs() < 1e-15, "{i} {j}");
            }
        }
    }

    #[test]
    fn zero_lag_coefficient_is_degradation() {
        let mesh = square(2);
        let p = params(1.0, 0.2);
        let v = NodalField::constant(&mesh, 0.5);
        let zero = NodalField::constant(&mesh, 0.0);
        let a = assemble_u_system(&mesh, &v, &zero, &ConstraintSet::new(), &p).unwrap();
        let one = NodalField::constant(&mesh, 1.0);
        let b = assemble_u_system(&mesh, &one, &zero, &ConstraintSet::new(), &p).unwrap();
        let s = 0.8 * 0.25 + 0.2;
        for i in 0..mesh.n_vertices() {
            for (j, val) in a.matrix.row(i) {
                assert!((val - s * b.matrix.get(i, j)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_patch_test_reproduces_affine_solution() {
        let mesh = square(4);
        let p = params(0.0, 1e-10);
        let v = NodalField::constant(&mesh, 1.0);
        let boundary: Vec<usize> = mesh.dirichlet_vertices().into_iter().map(|(v, _)| v).collect();
        let bc = ConstraintSet::from_pairs(boundary.iter().map(|&i| (i, mesh.vertex(i)[0]))).unwrap();
        let out = solve_u_picard(&mesh, &v, &bc, &p, &PicardOptions::default(), None).unwrap();
        assert_eq!(out.iterations, 1);
        for (i, &x) in out.u.values().iter().enumerate() {
            assert!((x - mesh.vertex(i)[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn picard_converges_on_slit_mesh_and_is_critical() {
        let mesh = build_unit_square_with_slit::<f64>(8, 0.5).unwrap();
        let p = params(1.0, 1e-10);
        let v = NodalField::from_fn(&mesh, |x| 0.6 + 0.4 * x[1]);
        let bc = ConstraintSet::from_pairs(mesh.dirichlet_vertices().into_iter().map(|(i, tag)| {
            (i, if tag == BoundaryTag::DirichletTopLeft { -0.5 } else { 0.5 })
        }))
        .unwrap();
        let opts = PicardOptions::default();
        let out = solve_u_picard(&mesh, &v, &bc, &p, &opts, None).unwrap();
        assert!(out.iterations <= 50);
        assert!(*out.history.last().unwrap() <= 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fixed: Vec<bool> = {
            let mut f = vec![false; mesh.n_vertices()];
            for (i, _) in bc.iter() {
                f[i] = true;
            }
            f
        };
        for _ in 0..5 {
            let psi: Vec<f64> = (0..mesh.n_vertices())
                .map(|i| if fixed[i] { 0.0 } else { rng.gen_range(-1.0..1.0) })
                .collect();
            let a = derivative_a_unchecked(v.values(), out.u.values(), &psi, &mesh, &p, true);
            assert!(a.abs() < 1e-6, "{a}");
        }
    }

    #[test]
    fn weak_driving_saturates_at_one() {
        let mesh = square(4);
        let p = params(0.0, 0.1);
        let u = NodalField::from_fn(&mesh, |x| 2.0 * x[0]);
        let lag = NodalField::constant(&mesh, 0.5);
        let v = solve_v(&mesh, &u, &lag, &ConstraintSet::new(), &p, 1e-13).unwrap();
        assert!(v.values().iter().all(|&x| x == 1.0));
        let mut cons = ConstraintSet::new();
        cons.insert(12, 0.0).unwrap();
        let v = solve_v(&mesh, &u, &lag, &cons, &p, 1e-13).unwrap();
        assert_eq!(v.values()[12], 0.0);
        assert!(v.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn constant_gradient_gives_constant_phase_field() {
        let mesh = square(4);
        let p = params(0.0, 0.1);
        let c0 = 16.0;
        let u = NodalField::from_fn(&mesh, |x| 4.0 * x[0]);
        let lag = NodalField::constant(&mesh, 1.0);
        let v = solve_v(&mesh, &u, &lag, &ConstraintSet::new(), &p, 1e-13).unwrap();
        let expected = p.delta / ((1.0 - p.kappa) * c0);
        for &x in v.values() {
            assert!((x - expected).abs() < 1e-10);
        }
        // consistent with the discrete derivative
        let phi: Vec<f64> = (0..mesh.n_vertices()).map(|i| (i as f64).sin()).collect();
        let b = derivative_b_unchecked(u.values(), v.values(), &phi, &mesh, &p, true);
        assert!(b.abs() < 1e-10);
    }

    #[test]
    fn unloaded_unconstrained_phase_field_is_singular() {
        let mesh = square(2);
        let p = params(1.0, 0.1);
        let u = NodalField::constant(&mesh, 0.0);
        let v = NodalField::constant(&mesh, 1.0);
        assert_eq!(
            assemble_v_system(&mesh, &u, &v, &ConstraintSet::new(), &p).unwrap_err(),
            SolveError::SingularSystem
        );
        let cons = ConstraintSet::from_pairs([(0, 0.0)]).unwrap();
        assert!(assemble_v_system(&mesh, &u, &v, &cons, &p).is_ok());
    }

    #[test]
    fn phase_field_matrix_symmetric_nonnegative_diagonal() {
        let mesh = build_unit_square_with_slit::<f64>(4, 0.5).unwrap();
        let p = params(1.0, 1e-3);
        let u = NodalField::from_fn(&mesh, |x| x[0] * x[1] - x[1]);
        let v = NodalField::from_fn(&mesh, |x| 0.2 + 0.5 * x[0]);
        let cons = ConstraintSet::from_pairs([(3, 0.0), (7, 0.0)]).unwrap();
        let sys = assemble_v_system(&mesh, &u, &v, &cons, &p).unwrap();
        assert!(sys.matrix.is_symmetric(1e-14));
        assert!(sys.matrix.diagonal().iter().all(|&d| d >= 0.0));
    }

    #[test]
    fn clamp_examples() {
        let mesh = square(1);
        let v = NodalField::new(&mesh, vec![5e-5, 1.2, 0.5, 1e-4]).unwrap();
        assert_eq!(clamp_v(&v, 1e-4).values(), &[0.0, 1.0, 0.5, 0.0]);
    }
}
