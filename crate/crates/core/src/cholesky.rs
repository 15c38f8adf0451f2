//! Envelope (skyline) Cholesky factorization for sparse SPD matrices with
//! reverse Cuthill-McKee ordering.
//!
//! The symbolic part ([`EnvelopeSymbolic`]) depends only on the sparsity
//! pattern and can be reused across many numeric factorizations with the same
//! pattern, which is the situation for stiffness matrices of one mesh under
//! different parameter vectors.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Reverse Cuthill-McKee permutation of a structurally symmetric pattern.
/// `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let bfs_levels = |start: usize, visited: &[bool]| -> (usize, usize) {
        // returns (last node reached, eccentricity)
        let mut level = vec![usize::MAX; n];
        let mut queue = VecDeque::from([start]);
        level[start] = 0;
        let mut last = start;
        while let Some(u) = queue.pop_front() {
            last = u;
            for &v in a.row(u).0 {
                if !visited[v] && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (last, level[last])
    };

    while order.len() < n {
        // lowest-degree unvisited node, then walk towards a pseudo-peripheral node
        let mut start = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| (degree[i], i)).unwrap();
        let (mut far, mut ecc) = bfs_levels(start, &visited);
        for _ in 0..4 {
            let (far2, ecc2) = bfs_levels(far, &visited);
            if ecc2 <= ecc {
                break;
            }
            start = far;
            far = far2;
            ecc = ecc2;
        }
        let _ = far;
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a.row(u).0.iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Ordering and envelope layout for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct EnvelopeSymbolic {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    /// first[i]: first column of row i (permuted) inside the envelope.
    first: Vec<usize>,
    /// start of row i in the packed storage; row i holds columns first[i]..=i.
    offset: Vec<usize>,
}

impl EnvelopeSymbolic {
    pub fn new(pattern: &CsrMatrix) -> Result<Self> {
        if pattern.nrows() != pattern.ncols() {
            return Err(Error::ShapeMismatch { what: "square matrix", expected: pattern.nrows(), got: pattern.ncols() });
        }
        let n = pattern.nrows();
        let perm = reverse_cuthill_mckee(pattern);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for old in 0..n {
            let i = inv[old];
            for &c in pattern.row(old).0 {
                let j = inv[c];
                if j < i {
                    first[i] = first[i].min(j);
                } else {
                    first[j] = first[j].min(i);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        offset.push(0);
        for i in 0..n {
            offset.push(offset[i] + (i - first[i] + 1));
        }
        Ok(EnvelopeSymbolic { n, perm, inv, first, offset })
    }

    /// Number of stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.offset[self.n]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Numeric factorization of a matrix with (a subset of) the analysed pattern.
    pub fn factor(&self, a: &CsrMatrix) -> Result<EnvelopeCholesky> {
        if a.nrows() != self.n || a.ncols() != self.n {
            return Err(Error::ShapeMismatch { what: "factor matrix", expected: self.n, got: a.nrows() });
        }
        let mut l = vec![0.0; self.envelope_size()];
        for old in 0..self.n {
            let i = self.inv[old];
            let (cols, vals) = a.row(old);
            for (&c, &v) in cols.iter().zip(vals) {
                let j = self.inv[c];
                if j <= i {
                    if j < self.first[i] {
                        return Err(Error::Inconsistent("matrix entry outside analysed pattern".into()));
                    }
                    l[self.offset[i] + j - self.first[i]] = v;
                }
            }
        }
        for i in 0..self.n {
            let fi = self.first[i];
            let row_i = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let row_j = self.offset[j];
                let mut s = l[row_i + j - fi];
                for k in k0..j {
                    s -= l[row_i + k - fi] * l[row_j + k - fj];
                }
                l[row_i + j - fi] = s / l[row_j + j - fj];
            }
            let mut d = l[row_i + i - fi];
            for k in fi..i {
                let v = l[row_i + k - fi];
                d -= v * v;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: self.perm[i], value: d });
            }
            l[row_i + i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky { symbolic: self.clone(), l })
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    symbolic: EnvelopeSymbolic,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        EnvelopeSymbolic::new(a)?.factor(a)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        assert_eq!(b.len(), s.n, "rhs dimension mismatch");
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        // L y = Pb
        for i in 0..s.n {
            let fi = s.first[i];
            let row = &self.l[s.offset[i]..s.offset[i + 1]];
            let mut v = y[i];
            for k in fi..i {
                v -= row[k - fi] * y[k];
            }
            y[i] = v / row[i - fi];
        }
        // L^T x = y
        for i in (0..s.n).rev() {
            let fi = s.first[i];
            let row = &self.l[s.offset[i]..s.offset[i + 1]];
            y[i] /= row[i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= row[k - fi] * yi;
            }
        }
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
