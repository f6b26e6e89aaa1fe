//! Reference computations that share no code path with the production
//! modules they check: a degree-8 triangle rule, brute-force subset search,
//! an estimator written from scratch, and finite-difference derivative checks.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adaptivity::dorfler_mark_values;
use crate::estimator::compute_indicators_excluding;
use crate::mesh::{build_unit_square_with_slit, Mesh};
use crate::model::{dir_derivative_a, dir_derivative_b, total_energy, ModelParams, NodalField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("no reference rule for degree {0} (at most 8)")]
    UnsupportedDegree(usize),
    #[error("exhaustive search limited to 12 indicators, got {0}")]
    TooLarge(usize),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, samples: usize, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            samples,
            max_error,
            tolerance,
            pass: max_error <= tolerance,
        }
    }

    fn failed(name: &str, why: impl std::fmt::Display) -> Self {
        Self {
            name: format!("{name} ({why})"),
            samples: 0,
            max_error: f64::INFINITY,
            tolerance: 0.0,
            pass: false,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{}",
            self.name, self.samples, self.max_error, self.tolerance, self.pass
        )
    }
}

/// Dunavant's 16-point rule, exact for degree 8: (barycentrics, weight), weights sum to 1.
pub fn dunavant8() -> Vec<([f64; 3], f64)> {
    let mut pts = vec![([1.0 / 3.0; 3], 0.144_315_607_677_787)];
    for (a, w) in [
        (0.459_292_588_292_723, 0.095_091_634_267_285),
        (0.170_569_307_751_760, 0.103_217_370_534_718),
        (0.050_547_228_317_031, 0.032_458_497_623_198),
    ] {
        let b = 1.0 - 2.0 * a;
        pts.extend([([a, a, b], w), ([a, b, a], w), ([b, a, a], w)]);
    }
    let (a, b) = (0.008_394_777_409_958, 0.263_112_829_634_638);
    let c = 1.0 - a - b;
    let w = 0.027_230_314_174_435;
    for l in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        pts.push((l, w));
    }
    pts
}

/// Five-point Gauss-Legendre on [0, 1], weights summing to 1.
fn gauss5() -> [(f64, f64); 5] {
    let x1 = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let x2 = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let w0 = 128.0 / 225.0;
    let w1 = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let w2 = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    [
        (0.5, w0 / 2.0),
        (0.5 * (1.0 - x1), w1 / 2.0),
        (0.5 * (1.0 + x1), w1 / 2.0),
        (0.5 * (1.0 - x2), w2 / 2.0),
        (0.5 * (1.0 + x2), w2 / 2.0),
    ]
}

fn tri_area(p: [[f64; 2]; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
}

/// Integrates `f` over the mesh with the degree-8 rule.
pub fn quadrature_oracle(f: impl Fn([f64; 2]) -> f64, mesh: &Mesh<f64>, degree: usize) -> Result<f64, VerifyError> {
    if degree > 8 {
        return Err(VerifyError::UnsupportedDegree(degree));
    }
    let rule = dunavant8();
    let mut total = 0.0;
    for e in 0..mesh.n_elements() {
        let p = mesh.element_points(e);
        let area = tri_area(p).abs();
        let mut acc = 0.0;
        for &(l, w) in &rule {
            let x = [
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ];
            acc += w * f(x);
        }
        total += area * acc;
    }
    Ok(total)
}

/// Smallest number of indicators whose sum reaches `theta` times the total,
/// by trying every subset.
pub fn marking_oracle(eta_sq: &[f64], theta: f64) -> Result<usize, VerifyError> {
    let n = eta_sq.len();
    if n > 12 {
        return Err(VerifyError::TooLarge(n));
    }
    let total: f64 = eta_sq.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let mut best = n;
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k >= best {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| eta_sq[i]).sum();
        if s >= theta * total {
            best = k;
        }
    }
    Ok(best)
}

/// Finite-difference check of the energy derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub t_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log t`; infinite when every error vanishes.
    pub order: f64,
}

impl GradientCheck {
    /// Passes when the observed order is at least 0.9; `max_error` is the shortfall from first order.
    pub fn report(&self, name: &str) -> OracleReport {
        OracleReport::new(name, self.t_values.len(), (1.0 - self.order).max(0.0), 0.1)
    }
}

/// Compares `(J(u + t psi, v + t phi) - J(u, v)) / t` with the derivative
/// forms on the lumped functional.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    mesh: &Mesh<f64>,
    u: &NodalField<f64>,
    v: &NodalField<f64>,
    psi: &NodalField<f64>,
    phi: &NodalField<f64>,
    p: &ModelParams<f64>,
    t_values: &[f64],
) -> Result<GradientCheck, VerifyError> {
    let fail = |e: crate::model::ModelError| VerifyError::Failed(e.to_string());
    let j0 = total_energy(u, v, mesh, p, true).map_err(fail)?.total;
    let d = dir_derivative_a(v, u, psi, mesh, p, true).map_err(fail)?
        + dir_derivative_b(u, v, phi, mesh, p, true, &[]).map_err(fail)?;
    let shift = |f: &NodalField<f64>, g: &NodalField<f64>, t: f64| {
        NodalField::new(mesh, f.values().iter().zip(g.values()).map(|(a, b)| a + t * b).collect())
    };
    let mut errors = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let jt = total_energy(&shift(u, psi, t).map_err(fail)?, &shift(v, phi, t).map_err(fail)?, mesh, p, true)
            .map_err(fail)?
            .total;
        errors.push(((jt - j0) / t - d).abs());
    }
    let order = if errors.iter().all(|&e| e == 0.0) {
        f64::INFINITY
    } else {
        let pts: Vec<(f64, f64)> = t_values
            .iter()
            .zip(&errors)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&t, &e)| (t.ln(), e.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|q| q.0).sum::<f64>() / n;
        let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|q| (q.0 - mx) * (q.0 - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            f64::NAN
        }
    };
    Ok(GradientCheck {
        t_values: t_values.to_vec(),
        errors,
        order,
    })
}

/// Element indicators recomputed from their definition with higher-order
/// quadrature. Edges where `dirichlet` holds are left out of the
/// displacement jump term; edges in `excluded` (sorted vertex pairs) out of
/// the phase-field jump term. The flux factor on an edge uses the owning
/// element's displacement gradient.
pub struct EstimatorOracle {
    pub eta_tilde_sq: Vec<f64>,
    pub eta_hat_sq: Vec<f64>,
}

fn p1_gradients(p: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let two_a = 2.0 * tri_area(p);
    [0, 1, 2].map(|i| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        [(p[j][1] - p[k][1]) / two_a, (p[k][0] - p[j][0]) / two_a]
    })
}

fn grad_of(g: &[[f64; 2]; 3], w: [f64; 3]) -> [f64; 2] {
    [
        g[0][0] * w[0] + g[1][0] * w[1] + g[2][0] * w[2],
        g[0][1] * w[0] + g[1][1] * w[1] + g[2][1] * w[2],
    ]
}

pub fn estimator_oracle(
    mesh: &Mesh<f64>,
    u: &[f64],
    v: &[f64],
    p: &ModelParams<f64>,
    dirichlet: impl Fn([f64; 2], [f64; 2]) -> bool,
    excluded: &[[usize; 2]],
) -> EstimatorOracle {
    let ne = mesh.n_elements();
    let tris: Vec<[usize; 3]> = mesh.elements().iter().map(|e| e.vertices).collect();
    let mut owners: HashMap<[usize; 2], Vec<usize>> = HashMap::new();
    for (e, t) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            owners.entry([a.min(b), a.max(b)]).or_default().push(e);
        }
    }
    let pts = |e: usize| tris[e].map(|i| mesh.vertex(i));
    let grads: Vec<[[f64; 2]; 3]> = (0..ne).map(|e| p1_gradients(pts(e))).collect();
    let gu: Vec<[f64; 2]> = (0..ne).map(|e| grad_of(&grads[e], tris[e].map(|i| u[i]))).collect();
    let gv: Vec<[f64; 2]> = (0..ne).map(|e| grad_of(&grads[e], tris[e].map(|i| v[i]))).collect();
    let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];

    let (k, al, ba) = (p.kappa, p.alpha, p.beta.powf(p.alpha));
    // |T|^{2 alpha} and the denominator at a phase-field value
    let t2a = |vq: f64, g2: f64| ((1.0 - k) * vq * vq + k) * g2;
    let den = |vq: f64, g2: f64| 1.0 + ba * t2a(vq, g2).powf(al);

    let rule = dunavant8();
    let line = gauss5();
    let mut tilde = vec![0.0; ne];
    let mut hat = vec![0.0; ne];
    for e in 0..ne {
        let x = pts(e);
        let area = tri_area(x).abs();
        let h = (0..3)
            .map(|i| {
                let (a, b) = (x[i], x[(i + 1) % 3]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        let (gue, gve) = (gu[e], gv[e]);
        let g2 = dot(gue, gue);
        let sup_gv2 = dot(gve, gve);
        let vn = tris[e].map(|i| v[i]);
        let mut vol_t = 0.0;
        let mut vol_h = 0.0;
        for &(l, w) in &rule {
            let vq = l[0] * vn[0] + l[1] * vn[1] + l[2] * vn[2];
            let d = den(vq, g2);
            let m = (1.0 - k) / d.powf(1.0 / al + 1.0);
            let first = sup_gv2 * sup_gv2 * h.powi(4) * m * m * g2;
            let tb = ba * t2a(vq, g2).powf(al);
            let second = 2.0 * (k - 1.0) * vq * dot(gve, gue) * (1.0 - al * tb) / d.powf(1.0 / al + 2.0);
            vol_t += w * (first + h * h * second * second);
            let drive = (1.0 - k) * g2 / d.powf(1.0 / al + 1.0);
            vol_h += w * (sup_gv2 * h.powi(4) * drive * drive + h * h * (drive * vq - p.delta).powi(2));
        }
        tilde[e] = area * vol_t;
        hat[e] = area * vol_h;

        for i in 0..3 {
            let (a, b) = (tris[e][i], tris[e][(i + 1) % 3]);
            let key = [a.min(b), a.max(b)];
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let he = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            let n = [(pb[1] - pa[1]) / he, (pa[0] - pb[0]) / he];
            let other = owners[&key].iter().copied().find(|&o| o != e);
            let jump = |g: &[[f64; 2]]| match other {
                Some(o) => dot([g[e][0] - g[o][0], g[e][1] - g[o][1]], n),
                None => dot(g[e], n),
            };
            if other.is_some() || !dirichlet(pa, pb) {
                let j = jump(&gu);
                let mut acc = 0.0;
                for &(s, w) in &line {
                    let vq = v[a] + s * (v[b] - v[a]);
                    let f = ((1.0 - k) * vq * vq + k) / den(vq, g2).powf(1.0 / al + 1.0);
                    acc += w * f * f;
                }
                tilde[e] += he * he * acc * j * j;
            }
            if !excluded.contains(&key) {
                let j = jump(&gv);
                hat[e] += p.rho * p.rho * he * he * j * j;
            }
        }
    }
    EstimatorOracle {
        eta_tilde_sq: tilde,
        eta_hat_sq: hat,
    }
}

/// Loaded top edge of the unit square.
pub fn on_top_edge(a: [f64; 2], b: [f64; 2]) -> bool {
    a[1] == 1.0 && b[1] == 1.0
}

fn random_field(mesh: &Mesh<f64>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> NodalField<f64> {
    let vals = (0..mesh.n_vertices()).map(|_| rng.gen_range(lo..hi)).collect();
    NodalField::new(mesh, vals).expect("length matches")
}

fn zero_on_dirichlet(mesh: &Mesh<f64>, mut f: NodalField<f64>) -> NodalField<f64> {
    for (i, _) in mesh.dirichlet_vertices() {
        f.values_mut()[i] = 0.0;
    }
    f
}

fn quadrature_suite() -> Vec<OracleReport> {
    let mesh = match build_unit_square_with_slit::<f64>(8, 0.5) {
        Ok(m) => m,
        Err(e) => return vec![OracleReport::failed("quadrature", e)],
    };
    let one = quadrature_oracle(|_| 1.0, &mesh, 0).unwrap_or(f64::NAN);
    let xy = quadrature_oracle(|x| x[0] * x[1], &mesh, 2).unwrap_or(f64::NAN);
    // degree-8 monomials on the reference triangle: int x^a y^b = a! b! / (a+b+2)!
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let reference = Mesh::from_triangles(
        vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        &[[0, 1, 2]],
        |_, _| crate::mesh::BoundaryTag::NeumannOuter,
    );
    let mut mono = 0.0f64;
    let mut count = 0;
    if let Ok(r) = &reference {
        for a in 0..=8u32 {
            for b in 0..=(8 - a) {
                let q = quadrature_oracle(|x| x[0].powi(a as i32) * x[1].powi(b as i32), r, 8).unwrap_or(f64::NAN);
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                mono = mono.max((q - exact).abs() / exact);
                count += 1;
            }
        }
    } else {
        mono = f64::INFINITY;
    }
    // the production degree-2 rule against the reference on a quadratic
    let prod_rule = crate::quadrature::triangle_rule::<f64>();
    let quad = |x: [f64; 2]| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1];
    let mut prod = 0.0;
    for e in 0..mesh.n_elements() {
        let pts = mesh.element_points(e);
        let area = mesh.geometry(e).area;
        for (l, w) in prod_rule {
            let x = [
                l[0] * pts[0][0] + l[1] * pts[1][0] + l[2] * pts[2][0],
                l[0] * pts[0][1] + l[1] * pts[1][1] + l[2] * pts[2][1],
            ];
            prod += area * w * quad(x);
        }
    }
    let refq = quadrature_oracle(quad, &mesh, 2).unwrap_or(f64::NAN);
    vec![
        OracleReport::new("quadrature_constant", mesh.n_elements(), (one - 1.0).abs(), 1e-14),
        OracleReport::new("quadrature_xy", mesh.n_elements(), (xy - 0.25).abs(), 1e-14),
        OracleReport::new("quadrature_degree8_monomials", count, mono, 1e-12),
        OracleReport::new("quadrature_production_rule", mesh.n_elements(), (prod - refq).abs(), 1e-13),
    ]
}

/// Finite-difference order on a slit mesh of about 200 elements with random fields.
pub fn gradient_suite(seed: u64) -> Vec<OracleReport> {
    let mesh = match build_unit_square_with_slit::<f64>(8, 0.5) {
        Ok(m) => m,
        Err(e) => return vec![OracleReport::failed("gradient", e)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = [1e-2, 1e-3, 1e-4, 1e-5];
    let mut out = Vec::new();
    for (name, beta, du, dv) in [
        ("gradient_check_linear_u", 0.0, true, false),
        ("gradient_check_full", 1.0, true, true),
    ] {
        let p = match ModelParams::new(1.0, beta, 1e-2, 0.3, 2.7, 8.0 / 3.0) {
            Ok(p) => p,
            Err(e) => {
                out.push(OracleReport::failed(name, e));
                continue;
            }
        };
        let u = random_field(&mesh, &mut rng, -1.0, 1.0);
        let v = random_field(&mesh, &mut rng, 0.1, 1.0);
        let psi = if du {
            zero_on_dirichlet(&mesh, random_field(&mesh, &mut rng, -1.0, 1.0))
        } else {
            NodalField::constant(&mesh, 0.0)
        };
        let phi = if dv {
            random_field(&mesh, &mut rng, -1.0, 1.0)
        } else {
            NodalField::constant(&mesh, 0.0)
        };
        out.push(match gradient_check(&mesh, &u, &v, &psi, &phi, &p, &ts) {
            Ok(g) => g.report(name),
            Err(e) => OracleReport::failed(name, e),
        });
    }
    out
}

pub fn marking_suite(seed: u64, instances: usize) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.gen_range(1..=12);
        let eta: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(0.0..4.0) })
            .collect();
        let theta = rng.gen_range(0.05..=1.0);
        let oracle = marking_oracle(&eta, theta).unwrap_or(usize::MAX);
        let prod = dorfler_mark_values(&eta, theta).len();
        worst = worst.max((oracle as f64 - prod as f64).abs());
    }
    OracleReport::new("marking_minimality", instances, worst, 0.0)
}

/// Production indicators against [`estimator_oracle`] on random fields,
/// with `beta = 0` so every integrand is a polynomial both rules integrate exactly.
pub fn estimator_suite(seed: u64) -> Vec<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in [4usize, 8, 12] {
        let name = format!("estimator_oracle_n{n}");
        let mesh = match build_unit_square_with_slit::<f64>(n, 0.5)
            .and_then(|m| m.bisect(&crate::mesh::MarkedSet::new((0..m.n_elements()).step_by(5).collect())))
        {
            Ok(m) => m,
            Err(e) => {
                out.push(OracleReport::failed(&name, e));
                continue;
            }
        };
        let p = match ModelParams::new(1.0, 0.0, 1e-3, 0.2, 2.7, 8.0 / 3.0) {
            Ok(p) => p,
            Err(e) => {
                out.push(OracleReport::failed(&name, e));
                continue;
            }
        };
        let u = random_field(&mesh, &mut rng, -1.0, 1.0);
        let mut v = random_field(&mesh, &mut rng, 0.0, 1.0);
        for i in 0..mesh.n_vertices() {
            if rng.gen_bool(0.05) {
                v.values_mut()[i] = 0.0;
            }
        }
        let crack = crate::estimator::crack_edges(&mesh, &v, 1e-4);
        let excluded: Vec<[usize; 2]> = crack.iter().map(|&e| mesh.edges()[e].vertices).collect();
        let reference = estimator_oracle(&mesh, u.values(), v.values(), &p, on_top_edge, &excluded);
        match compute_indicators_excluding(&mesh, &u, &v, &p, &crack) {
            Ok(ind) => {
                let mut worst = 0.0f64;
                for e in 0..mesh.n_elements() {
                    for (a, b) in [
                        (ind.eta_tilde_sq[e], reference.eta_tilde_sq[e]),
                        (ind.eta_hat_sq[e], reference.eta_hat_sq[e]),
                    ] {
                        worst = worst.max((a - b).abs() / b.abs().max(1e-300));
                    }
                }
                out.push(OracleReport::new(name, mesh.n_elements(), worst, 1e-10));
            }
            Err(e) => out.push(OracleReport::failed(&name, e)),
        }
    }
    out
}

/// Everything the `verify` command runs.
pub fn run_suites() -> Vec<OracleReport> {
    let mut out = quadrature_suite();
    out.extend(gradient_suite(11));
    out.push(marking_suite(7, 50));
    out.extend(estimator_suite(3));
    out
}
