//! The regularised energy functional and its directional derivatives.
//!
//! With `s = (1-kappa) w + kappa` (where `w` is `v^2`, or its vertex
//! interpolant when mass lumping is on) and `q = s |grad u|^2` the bulk
//! density is `q / (2 D^{1/alpha})` with `D = 1 + beta^alpha q^alpha`.
//! Everything below is built from three pointwise quantities: that density,
//! the flux coefficient `s / D^{1/alpha+1}` and the phase-field driving
//! coefficient `(1-kappa) |grad u|^2 / D^{1/alpha+1}`.

use thiserror::Error;

use crate::mesh::Mesh;
use crate::quadrature::{interpolate, triangle_rule};
use crate::scalar::{dot2, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("field bound to mesh {field} used with mesh {mesh}")]
    MeshMismatch { field: u64, mesh: u64 },
    #[error("field has {len} values but mesh has {expected} vertices")]
    LengthMismatch { len: usize, expected: usize },
    #[error("test function is nonzero at constrained vertex {0}")]
    NotInTestSpace(usize),
}

/// Material and regularisation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub alpha: T,
    pub beta: T,
    pub kappa: T,
    pub epsilon: T,
    pub lambda_c: T,
    pub c_w: T,
    /// `lambda_c * epsilon / c_w`
    pub rho: T,
    /// `lambda_c / (c_w * epsilon)`
    pub delta: T,
    beta_pow_alpha: T,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(alpha: T, beta: T, kappa: T, epsilon: T, lambda_c: T, c_w: T) -> Result<Self, ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidParameter(what.to_owned()));
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return bad("alpha must be positive");
        }
        if !(beta >= T::zero()) || !beta.is_finite() {
            return bad("beta must be nonnegative");
        }
        if !(kappa >= T::zero() && kappa < T::one()) {
            return bad("kappa must lie in [0, 1)");
        }
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return bad("epsilon must be positive");
        }
        if !(lambda_c > T::zero()) || !lambda_c.is_finite() {
            return bad("lambda_c must be positive");
        }
        if !(c_w > T::zero()) || !c_w.is_finite() {
            return bad("c_w must be positive");
        }
        Ok(Self {
            alpha,
            beta,
            kappa,
            epsilon,
            lambda_c,
            c_w,
            rho: lambda_c * epsilon / c_w,
            delta: lambda_c / (c_w * epsilon),
            beta_pow_alpha: beta.powf(alpha),
        })
    }

    /// Same material with a different phase-field length (rho and delta recomputed).
    pub fn with_epsilon(&self, epsilon: T) -> Result<Self, ModelError> {
        Self::new(self.alpha, self.beta, self.kappa, epsilon, self.lambda_c, self.c_w)
    }

    #[inline]
    pub fn degradation(&self, w: T) -> T {
        (T::one() - self.kappa) * w + self.kappa
    }

    /// `D = 1 + beta^alpha (s |grad u|^2)^alpha`.
    #[inline]
    pub fn denominator(&self, s: T, grad_sq: T) -> T {
        let q = s * grad_sq;
        if self.beta_pow_alpha == T::zero() || q == T::zero() {
            T::one()
        } else {
            T::one() + self.beta_pow_alpha * q.powf(self.alpha)
        }
    }

    #[inline]
    pub fn bulk_density(&self, s: T, grad_sq: T) -> T {
        let d = self.denominator(s, grad_sq);
        s * grad_sq / (T::lit(2.0) * d.powf(self.alpha.recip()))
    }

    /// `D^{1/alpha + 1}`
    #[inline]
    pub fn flux_denominator(&self, s: T, grad_sq: T) -> T {
        let d = self.denominator(s, grad_sq);
        d.powf(self.alpha.recip()) * d
    }

    /// Coefficient multiplying `grad u . grad psi` in the u-derivative.
    #[inline]
    pub fn flux_coefficient(&self, s: T, grad_sq: T) -> T {
        s / self.flux_denominator(s, grad_sq)
    }

    /// Coefficient multiplying `v phi` in the v-derivative.
    #[inline]
    pub fn driving_coefficient(&self, s: T, grad_sq: T) -> T {
        (T::one() - self.kappa) * grad_sq / self.flux_denominator(s, grad_sq)
    }
}

/// Pointwise coefficient `((1-kappa) v^2 + kappa) / (1 + beta^alpha |T|^{2 alpha})^{1/alpha + 1}`.
pub fn stress_coefficient<T: Scalar>(v_val: T, grad_u: [T; 2], p: &ModelParams<T>) -> T {
    p.flux_coefficient(p.degradation(v_val * v_val), dot2(grad_u, grad_u))
}

/// Piecewise-linear nodal coefficients bound to one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField<T> {
    values: Vec<T>,
    mesh_id: u64,
}

impl<T: Scalar> NodalField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self, ModelError> {
        if values.len() != mesh.n_vertices() {
            return Err(ModelError::LengthMismatch {
                len: values.len(),
                expected: mesh.n_vertices(),
            });
        }
        Ok(Self {
            values,
            mesh_id: mesh.id(),
        })
    }

    pub fn constant(mesh: &Mesh<T>, value: T) -> Self {
        Self {
            values: vec![value; mesh.n_vertices()],
            mesh_id: mesh.id(),
        }
    }

    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn([T; 2]) -> T) -> Self {
        Self {
            values: mesh.vertices().iter().map(|&p| f(p)).collect(),
            mesh_id: mesh.id(),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_bound(&self, mesh: &Mesh<T>) -> Result<(), ModelError> {
        if self.mesh_id != mesh.id() {
            return Err(ModelError::MeshMismatch {
                field: self.mesh_id,
                mesh: mesh.id(),
            });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Carries the field onto a mesh produced from this one by bisection.
    ///
    /// Existing vertices keep their values; each new vertex takes the mean of
    /// the endpoints of the edge it bisected. This is exact for P1 fields on
    /// nested meshes.
    pub fn transfer_to(&self, fine: &Mesh<T>) -> Result<Self, ModelError> {
        if self.mesh_id == fine.id() {
            return Ok(self.clone());
        }
        let n_old = self.values.len();
        let parents = fine.vertex_parents();
        if parents.len() < n_old {
            return Err(ModelError::LengthMismatch {
                len: n_old,
                expected: fine.n_vertices(),
            });
        }
        let half = T::lit(0.5);
        let mut values = self.values.clone();
        values.reserve(fine.n_vertices() - n_old);
        for (i, parent) in parents.iter().enumerate().skip(n_old) {
            let [a, b] = parent.ok_or(ModelError::MeshMismatch {
                field: self.mesh_id,
                mesh: fine.id(),
            })?;
            debug_assert!(a < i && b < i);
            values.push(half * (values[a] + values[b]));
        }
        Ok(Self {
            values,
            mesh_id: fine.id(),
        })
    }
}

/// Vertexwise application of `g` (the nodal interpolant of `g(field)`).
pub fn nodal_interpolate<T: Scalar>(field: &NodalField<T>, g: impl Fn(T) -> T) -> NodalField<T> {
    NodalField {
        values: field.values.iter().map(|&x| g(x)).collect(),
        mesh_id: field.mesh_id,
    }
}

/// Nodal interpolant of `g(a, b)` for two fields on the same mesh.
pub fn nodal_interpolate2<T: Scalar>(
    a: &NodalField<T>,
    b: &NodalField<T>,
    g: impl Fn(T, T) -> T,
) -> Result<NodalField<T>, ModelError> {
    if a.mesh_id != b.mesh_id {
        return Err(ModelError::MeshMismatch {
            field: b.mesh_id,
            mesh: a.mesh_id,
        });
    }
    Ok(NodalField {
        values: a.values.iter().zip(&b.values).map(|(&x, &y)| g(x, y)).collect(),
        mesh_id: a.mesh_id,
    })
}

/// Bulk/surface split of the total energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergySplit<T> {
    pub bulk: T,
    pub surface: T,
    pub total: T,
}

impl<T: Scalar> EnergySplit<T> {
    pub fn new(bulk: T, surface: T) -> Self {
        Self {
            bulk,
            surface,
            total: bulk + surface,
        }
    }
}

/// Element-local data shared by energy, derivative and assembly loops.
pub(crate) struct LocalFields<T> {
    pub area: T,
    pub grads: [[T; 2]; 3],
    pub verts: [usize; 3],
}

impl<T: Scalar> LocalFields<T> {
    #[inline]
    pub fn of(mesh: &Mesh<T>, e: usize) -> Self {
        let g = mesh.geometry(e);
        Self {
            area: g.area,
            grads: g.grads,
            verts: mesh.elements()[e].vertices,
        }
    }

    #[inline]
    pub fn nodal(&self, f: &[T]) -> [T; 3] {
        self.verts.map(|v| f[v])
    }

    #[inline]
    pub fn gradient(&self, f: &[T]) -> [T; 2] {
        let n = self.nodal(f);
        let mut g = [T::zero(); 2];
        for k in 0..3 {
            g[0] += n[k] * self.grads[k][0];
            g[1] += n[k] * self.grads[k][1];
        }
        g
    }

    /// Value of `v^2` (consistent) or of its nodal interpolant (lumped) at a point.
    #[inline]
    pub fn v_squared(&self, bary: [T; 3], v: [T; 3], lumped: bool) -> T {
        if lumped {
            interpolate(bary, v.map(|x| x * x))
        } else {
            let x = interpolate(bary, v);
            x * x
        }
    }
}

fn check_fields<T: Scalar>(mesh: &Mesh<T>, fields: &[&NodalField<T>]) -> Result<(), ModelError> {
    for f in fields {
        f.check_bound(mesh)?;
    }
    Ok(())
}

/// Total energy; `lumped` selects the mass-lumped discrete functional.
pub fn total_energy<T: Scalar>(
    u: &NodalField<T>,
    v: &NodalField<T>,
    mesh: &Mesh<T>,
    p: &ModelParams<T>,
    lumped: bool,
) -> Result<EnergySplit<T>, ModelError> {
    check_fields(mesh, &[u, v])?;
    let rule = triangle_rule::<T>();
    let third = T::lit(1.0 / 3.0);
    let (mut bulk, mut surface) = (T::zero(), T::zero());
    for e in 0..mesh.n_elements() {
        let loc = LocalFields::of(mesh, e);
        let gu = loc.gradient(u.values());
        let gu2 = dot2(gu, gu);
        let gv = loc.gradient(v.values());
        let vn = loc.nodal(v.values());
        let mut b = T::zero();
        if gu2 > T::zero() {
            for (bary, w) in rule {
                let s = p.degradation(loc.v_squared(bary, vn, lumped));
                b += w * p.bulk_density(s, gu2);
            }
        }
        bulk += b * loc.area;
        let mean_v = (vn[0] + vn[1] + vn[2]) * third;
        surface += loc.area * (p.rho * dot2(gv, gv) + p.delta * (T::one() - mean_v));
    }
    Ok(EnergySplit::new(bulk, surface))
}

/// Derivative of the energy in `u` along `psi`.
///
/// `psi` must vanish at every Dirichlet vertex of the mesh.
pub fn dir_derivative_a<T: Scalar>(
    v: &NodalField<T>,
    u: &NodalField<T>,
    psi: &NodalField<T>,
    mesh: &Mesh<T>,
    p: &ModelParams<T>,
    lumped: bool,
) -> Result<T, ModelError> {
    check_fields(mesh, &[u, v, psi])?;
    for (vert, _) in mesh.dirichlet_vertices() {
        if psi.values()[vert] != T::zero() {
            return Err(ModelError::NotInTestSpace(vert));
        }
    }
    Ok(derivative_a_unchecked(v.values(), u.values(), psi.values(), mesh, p, lumped))
}

pub(crate) fn derivative_a_unchecked<T: Scalar>(
    v: &[T],
    u: &[T],
    psi: &[T],
    mesh: &Mesh<T>,
    p: &ModelParams<T>,
    lumped: bool,
) -> T {
    let rule = triangle_rule::<T>();
    let mut total = T::zero();
    for e in 0..mesh.n_elements() {
        let loc = LocalFields::of(mesh, e);
        let gu = loc.gradient(u);
        let gpsi = loc.gradient(psi);
        let gu2 = dot2(gu, gu);
        let vn = loc.nodal(v);
        let mut a = T::zero();
        for (bary, w) in rule {
            let s = p.degradation(loc.v_squared(bary, vn, lumped));
            a += w * p.flux_coefficient(s, gu2);
        }
        total += loc.area * a * dot2(gu, gpsi);
    }
    total
}

/// Derivative of the energy in `v` along `phi`.
///
/// `phi` must vanish at every vertex listed in `constrained` (the crack set).
pub fn dir_derivative_b<T: Scalar>(
    u: &NodalField<T>,
    v: &NodalField<T>,
    phi: &NodalField<T>,
    mesh: &Mesh<T>,
    p: &ModelParams<T>,
    lumped: bool,
    constrained: &[usize],
) -> Result<T, ModelError> {
    check_fields(mesh, &[u, v, phi])?;
    for &vert in constrained {
        if phi.values().get(vert).copied().unwrap_or(T::zero()) != T::zero() {
            return Err(ModelError::NotInTestSpace(vert));
        }
    }
    Ok(derivative_b_unchecked(u.values(), v.values(), phi.values(), mesh, p, lumped))
}

pub(crate) fn derivative_b_unchecked<T: Scalar>(
    u: &[T],
    v: &[T],
    phi: &[T],
    mesh: &Mesh<T>,
    p: &ModelParams<T>,
    lumped: bool,
) -> T {
    let rule = triangle_rule::<T>();
    let two = T::lit(2.0);
    let third = T::lit(1.0 / 3.0);
    let mut total = T::zero();
    for e in 0..mesh.n_elements() {
        let loc = LocalFields::of(mesh, e);
        let gu = loc.gradient(u);
        let gu2 = dot2(gu, gu);
        let gv = loc.gradient(v);
        let gphi = loc.gradient(phi);
        let vn = loc.nodal(v);
        let phin = loc.nodal(phi);
        let mut reaction = T::zero();
        if gu2 > T::zero() {
            for (bary, w) in rule {
                let s = p.degradation(loc.v_squared(bary, vn, lumped));
                let c = p.driving_coefficient(s, gu2);
                let v_phi = if lumped {
                    interpolate(bary, [vn[0] * phin[0], vn[1] * phin[1], vn[2] * phin[2]])
                } else {
                    interpolate(bary, vn) * interpolate(bary, phin)
                };
                reaction += w * c * v_phi;
            }
        }
        let mean_phi = (phin[0] + phin[1] + phin[2]) * third;
        total += loc.area * (two * p.rho * dot2(gv, gphi) - p.delta * mean_phi + reaction);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{BoundaryTag, Mesh};

    fn params(alpha: f64, beta: f64, kappa: f64) -> ModelParams<f64> {
        ModelParams::new(alpha, beta, kappa, 0.1, 2.7, 8.0 / 3.0).unwrap()
    }

    fn unit_square(n: usize) -> Mesh<f64> {
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
        Mesh::from_triangles(verts, &tris, |_, _| BoundaryTag::NeumannOuter).unwrap()
    }

    #[test]
    fn rho_delta_relation() {
        let p = params(1.0, 1.0, 1e-10);
        let lhs = p.rho * p.delta;
        let rhs = (p.lambda_c / p.c_w).powi(2);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ModelParams::new(0.0, 1.0, 0.1, 0.1, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, -1.0, 0.1, 0.1, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 0.1, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.1, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn stress_coefficient_values() {
        let p0 = ModelParams::<f64>::new(1.0, 1.0, 0.0, 0.1, 1.0, 1.0).unwrap();
        assert!((stress_coefficient(1.0, [0.0, 0.0], &p0) - 1.0).abs() < 1e-15);
        let p = ModelParams::<f64>::new(2.0, 3.0, 1e-2, 0.1, 1.0, 1.0).unwrap();
        assert!((stress_coefficient(0.0, [0.0, 0.0], &p) - 1e-2).abs() < 1e-15);
        // v=1, kappa=0, alpha=beta=1, |grad u|=1: 1/(1+1)^2
        assert!((stress_coefficient(1.0, [1.0, 0.0], &p0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stress_coefficient_is_nonincreasing_in_gradient() {
        let p = params(0.7, 2.0, 1e-3);
        let mut prev = f64::INFINITY;
        for k in 0..200 {
            let g = k as f64 * 0.05;
            let a = stress_coefficient(0.6, [g, 0.0], &p);
            assert!(a <= prev && a > 0.0 && a <= 1.0);
            prev = a;
        }
    }

    #[test]
    fn energy_of_trivial_states() {
        let mesh = unit_square(4);
        let p = params(1.0, 1.0, 1e-10);
        let zero = NodalField::constant(&mesh, 0.0);
        let one = NodalField::constant(&mesh, 1.0);
        for lumped in [false, true] {
            let e = total_energy(&zero, &one, &mesh, &p, lumped).unwrap();
            assert_eq!(e, EnergySplit::new(0.0, 0.0));
            let e = total_energy(&zero, &zero, &mesh, &p, lumped).unwrap();
            assert!(e.bulk == 0.0);
            assert!((e.surface - p.delta).abs() < 1e-13);
            assert_eq!(e.total, e.bulk + e.surface);
        }
    }

    #[test]
    fn linear_displacement_bulk_energy() {
        let mesh = unit_square(3);
        let p = ModelParams::new(1.0, 1.0, 0.0, 0.1, 1.0, 1.0).unwrap();
        let u = NodalField::from_fn(&mesh, |x| x[0]);
        let v = NodalField::constant(&mesh, 1.0);
        let e = total_energy(&u, &v, &mesh, &p, true).unwrap();
        assert!((e.bulk - 0.25).abs() < 1e-14);
    }

    #[test]
    fn mismatched_mesh_rejected() {
        let m1 = unit_square(2);
        let m2 = unit_square(2);
        let u = NodalField::constant(&m1, 0.0);
        let v = NodalField::constant(&m2, 1.0);
        let p = params(1.0, 1.0, 0.1);
        assert!(matches!(
            total_energy(&u, &v, &m1, &p, true),
            Err(ModelError::MeshMismatch { .. })
        ));
        assert!(NodalField::new(&m1, vec![0.0; 2]).is_err());
    }

    #[test]
    fn derivative_zero_cases() {
        let mesh = unit_square(3);
        let p = params(1.0, 1.0, 0.01);
        let u0 = NodalField::constant(&mesh, 0.0);
        let v = NodalField::from_fn(&mesh, |x| 0.5 + 0.3 * x[0]);
        let psi = NodalField::from_fn(&mesh, |x| x[0] * x[1]);
        let a = dir_derivative_a(&v, &u0, &psi, &mesh, &p, true).unwrap();
        assert_eq!(a, 0.0);
        let u = NodalField::from_fn(&mesh, |x| x[1] * x[1]);
        let a = dir_derivative_a(&v, &u, &u0, &mesh, &p, false).unwrap();
        assert_eq!(a, 0.0);
        let b = dir_derivative_b(&u, &v, &u0, &mesh, &p, true, &[]).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn derivative_b_of_intact_unloaded_state() {
        let mesh = unit_square(4);
        let p = params(1.0, 1.0, 1e-10);
        let u = NodalField::constant(&mesh, 0.0);
        let one = NodalField::constant(&mesh, 1.0);
        for lumped in [false, true] {
            let b = dir_derivative_b(&u, &one, &one, &mesh, &p, lumped, &[]).unwrap();
            assert!((b + p.delta).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_b_rejects_nonzero_at_crack() {
        let mesh = unit_square(2);
        let p = params(1.0, 1.0, 0.1);
        let f = NodalField::constant(&mesh, 1.0);
        assert_eq!(
            dir_derivative_b(&f, &f, &f, &mesh, &p, true, &[3]).unwrap_err(),
            ModelError::NotInTestSpace(3)
        );
    }

    #[test]
    fn interpolated_square_dominates_square() {
        // along an edge with end values 0 and 1 the midpoint interpolant of v^2 is 0.5
        let v = NodalField {
            values: vec![0.0, 1.0],
            mesh_id: 0,
        };
        let sq = nodal_interpolate(&v, |x| x * x);
        let mid_interp = 0.5 * (sq.values()[0] + sq.values()[1]);
        let mid_v = 0.5 * (v.values()[0] + v.values()[1]);
        assert_eq!(mid_interp, 0.5);
        assert!(mid_interp >= mid_v * mid_v);
        let c = NodalField {
            values: vec![0.3; 4],
            mesh_id: 0,
        };
        assert!(nodal_interpolate(&c, |x| x * x)
            .values()
            .iter()
            .all(|&x| x == 0.3 * 0.3));
    }
}
