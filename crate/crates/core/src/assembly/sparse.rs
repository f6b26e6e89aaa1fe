//! Compressed-row matrices and Jacobi-preconditioned conjugate gradients.

use crate::mesh::Adjacency;
use crate::scalar::Scalar;

use super::SolveError;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Zero matrix with the sparsity of a mesh's vertex adjacency.
    pub fn from_adjacency(adj: &Adjacency) -> Self {
        Self {
            n: adj.row_ptr.len() - 1,
            row_ptr: adj.row_ptr.clone(),
            col_idx: adj.col_idx.clone(),
            values: vec![T::zero(); adj.col_idx.len()],
        }
    }

    /// Dense rows given as `(col, value)` lists; columns need not be sorted.
    pub fn from_rows(rows: &[Vec<(usize, T)>]) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for row in rows {
            let mut row = row.clone();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n: rows.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi].binary_search(&j).ok().map(|k| lo + k)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.position(i, j).map_or(T::zero(), |k| self.values[k])
    }

    /// Adds to an existing structural entry; panics if `(i, j)` is not in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, val: T) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += val;
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Symmetric elimination of prescribed values.
    ///
    /// Constrained rows and columns are zeroed with a unit diagonal; the
    /// removed column contributions move to the right-hand side.
    pub(crate) fn eliminate(&mut self, rhs: &mut [T], fixed: &[Option<T>]) {
        for i in 0..self.n {
            if let Some(g) = fixed[i] {
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    self.values[k] = if self.col_idx[k] == i { T::one() } else { T::zero() };
                }
                rhs[i] = g;
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if let Some(g) = fixed[self.col_idx[k]] {
                    rhs[i] -= self.values[k] * g;
                    self.values[k] = T::zero();
                }
            }
        }
    }
}

/// Convergence information of one CG solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats<T> {
    pub iterations: usize,
    pub relative_residual: T,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

/// Preconditioned CG for a symmetric positive definite matrix.
///
/// Stops once `||b - A x||_2 <= tol * ||b||_2`. `x` holds the initial guess on
/// entry and the solution on success.
pub fn conjugate_gradient<T: Scalar>(
    a: &CsrMatrix<T>,
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iter: usize,
) -> Result<CgStats<T>, SolveError> {
    let n = a.nrows();
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        x.iter_mut().for_each(|xi| *xi = T::zero());
        return Ok(CgStats {
            iterations: 0,
            relative_residual: T::zero(),
        });
    }
    let inv_diag: Vec<T> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > T::zero() { d.recip() } else { T::one() })
        .collect();
    let mut r = vec![T::zero(); n];
    a.mul_vec(x, &mut r);
    for (ri, &bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&ri, &d)| ri * d).collect();
    let mut p = z.clone();
    let mut ap = vec![T::zero(); n];
    let mut rz = dot(&r, &z);
    let target = tol * b_norm;
    let mut res = dot(&r, &r).sqrt();
    let mut it = 0;
    while res > target {
        if it >= max_iter {
            return Err(SolveError::CgNotConverged {
                iterations: it,
                relative_residual: (res / b_norm).to_f64_lossy(),
            });
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(SolveError::Breakdown(it));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = dot(&r, &r).sqrt();
        it += 1;
    }
    Ok(CgStats {
        iterations: it,
        relative_residual: res / b_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let a = CsrMatrix::<f64>::identity(4);
        let b = [1.0, -2.0, 3.0, 0.5];
        let mut x = [0.0; 4];
        conjugate_gradient(&a, &b, &mut x, 1e-12, 10).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_by_hand() {
        let a = CsrMatrix::<f64>::from_rows(&[vec![(0, 2.0), (1, 1.0)], vec![(0, 1.0), (1, 2.0)]]);
        let mut x = [0.0; 2];
        conjugate_gradient(&a, &[3.0, 3.0], &mut x, 1e-14, 10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13 && (x[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn random_spd_meets_residual_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        // A = B^T B + n I, dense
        let bm: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut s: f64 = (0..n).map(|k| bm[k][i] * bm[k][j]).sum();
                        if i == j {
                            s += n as f64;
                        }
                        (j, s)
                    })
                    .collect()
            })
            .collect();
        let a = CsrMatrix::from_rows(&rows);
        assert!(a.is_symmetric(1e-12));
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = vec![0.0; n];
        let tol = 1e-10;
        conjugate_gradient(&a, &b, &mut x, tol, 500).unwrap();
        let mut ax = vec![0.0; n];
        a.mul_vec(&x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        assert!(res / bn <= tol);
    }

    #[test]
    fn indefinite_matrix_breaks_down() {
        let a = CsrMatrix::from_rows(&[vec![(0, -1.0)], vec![(1, -1.0)]]);
        let mut x = [0.0; 2];
        assert!(matches!(
            conjugate_gradient(&a, &[1.0, 1.0], &mut x, 1e-12, 10),
            Err(SolveError::Breakdown(0))
        ));
    }

    #[test]
    fn iteration_cap_reported() {
        let a = CsrMatrix::from_rows(&[
            vec![(0, 4.0), (1, 1.0)],
            vec![(0, 1.0), (1, 3.0), (2, 1.0)],
            vec![(1, 1.0), (2, 2.0)],
        ]);
        let mut x = [0.0; 3];
        assert!(matches!(
            conjugate_gradient(&a, &[1.0, 2.0, 3.0], &mut x, 1e-14, 1),
            Err(SolveError::CgNotConverged { iterations: 1, .. })
        ));
    }
}
