//! Dense helpers on top of nalgebra, plus a Lanczos estimate of the largest
//! eigenvalue of a sparse symmetric operator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::sparse::CsrMatrix;

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
pub fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of a symmetric positive semi-definite sparse matrix by
/// Lanczos with full reorthogonalization. Exact (to rounding) once the
/// Krylov space is the whole space.
pub fn lanczos_max_eigenvalue(a: &CsrMatrix, max_steps: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let steps = max_steps.min(n).max(1);
    // deterministic start vector with no special symmetry
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0).collect();
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut prev_estimate = f64::NAN;
    for k in 0..steps {
        let mut w = a.matvec(&q);
        let a_k = dot(&w, &q);
        alpha.push(a_k);
        basis.push(q.clone());
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let b_k = norm(&w);
        let estimate = tridiagonal_max(&alpha, &beta);
        if b_k <= 1e-14 * a_k.abs().max(1.0) || k + 1 == steps {
            return estimate;
        }
        if k >= 10 && (estimate - prev_estimate).abs() <= 1e-14 * estimate.abs() {
            return estimate;
        }
        prev_estimate = estimate;
        beta.push(b_k);
        q = w.iter().map(|v| v / b_k).collect();
    }
    tridiagonal_max(&alpha, &beta)
}

fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    t.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral norm of a sparse (rectangular) matrix via Lanczos on `B^T B`.
pub fn spectral_norm(b: &CsrMatrix) -> f64 {
    let gram = normal_matrix(b);
    lanczos_max_eigenvalue(&gram, 200).max(0.0).sqrt()
}

/// `B^T B` as a sparse matrix.
pub fn normal_matrix(b: &CsrMatrix) -> CsrMatrix {
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in 0..b.nrows() {
        let (c, v) = b.row(r);
        for (&i, &vi) in c.iter().zip(v) {
            for (&j, &vj) in c.iter().zip(v) {
                rows.push(i);
                cols.push(j);
                vals.push(vi * vj);
            }
        }
    }
    CsrMatrix::from_triplets(b.ncols(), b.ncols(), &rows, &cols, &vals).expect("in range")
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanczos_matches_dense() {
        let n = 60;
        let mut r = vec![];
        let mut c = vec![];
        let mut v = vec![];
        for i in 0..n {
            r.push(i);
            c.push(i);
            v.push(2.0 + (i as f64) * 0.01);
            if i + 1 < n {
                r.extend([i, i + 1]);
                c.extend([i + 1, i]);
                v.extend([-1.0, -1.0]);
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &r, &c, &v).unwrap();
        let dense = sorted_eigenvalues(&a.to_dense());
        let est = lanczos_max_eigenvalue(&a, 100);
        assert!((est - dense[n - 1]).abs() < 1e-10 * dense[n - 1]);
    }

    #[test]
    fn sorted_eigen_orders_ascending() {
        let m = DMatrix::from_row_slice(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let (vals, vecs) = sorted_eigen(m);
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }
}
