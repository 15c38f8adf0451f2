//! Laplacian eigenvector basis and the parameter-independent offline bundle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{GradientFactor, LoadVector, ProblemKind};
use crate::cholesky::EnvelopeCholesky;
use crate::error::{Error, Result};
use crate::linalg::{lanczos_max_eigenvalue, normal_matrix, norm, sorted_eigen};
use crate::mesh::ElementVolumes;
use crate::rng::query_rng;
use crate::sparse::CsrMatrix;

/// Largest `n_dof` handled by the dense eigendecomposition.
pub const DENSE_EIGEN_LIMIT: usize = 2000;
/// Accepted eigenpair residual relative to `||Delta||`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// Eigenvalues closer than this (relative to `||Delta||`) form one cluster.
pub const CLUSTER_TOL: f64 = 1e-10;

/// Discrete Laplacian `Delta = D^T D`.
pub fn laplacian(dm: &GradientFactor) -> CsrMatrix {
    normal_matrix(dm.matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenStrategy {
    /// Dense up to [`DENSE_EIGEN_LIMIT`], shift-invert above.
    #[default]
    Auto,
    Dense,
    ShiftInvert,
}

/// Orthonormal eigenvectors of `Delta` for its `rho` smallest eigenvalues,
/// in ascending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    psi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    residuals: Vec<f64>,
}

impl Basis {
    /// Wraps given columns; no checks beyond shapes.
    pub fn from_parts(psi: DMatrix<f64>, eigenvalues: Vec<f64>, residuals: Vec<f64>) -> Result<Self> {
        if eigenvalues.len() != psi.ncols() || residuals.len() != psi.ncols() {
            return Err(Error::ShapeMismatch { what: "basis eigenvalues", expected: psi.ncols(), got: eigenvalues.len() });
        }
        Ok(Basis { psi, eigenvalues, residuals })
    }

    pub fn identity(n: usize) -> Self {
        Basis { psi: DMatrix::identity(n, n), eigenvalues: vec![0.0; n], residuals: vec![0.0; n] }
    }

    pub fn rho(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `||Delta psi - lambda psi||` per column.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// `Psi^T u`.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.psi.tr_mul(&DVector::from_column_slice(u)).iter().copied().collect()
    }

    /// `Psi r`.
    pub fn reconstruct(&self, r: &[f64]) -> Vec<f64> {
        (&self.psi * DVector::from_column_slice(r)).iter().copied().collect()
    }

    /// `Pi u = Psi Psi^T u`.
    pub fn apply_projector(&self, u: &[f64]) -> Vec<f64> {
        self.reconstruct(&self.project(u))
    }

    /// The first `rho` columns (a nested basis).
    pub fn truncated(&self, rho: usize) -> Result<Basis> {
        if rho == 0 || rho > self.rho() {
            return Err(Error::RhoOutOfRange { rho, max: self.rho() });
        }
        Ok(Basis {
            psi: self.psi.columns(0, rho).into_owned(),
            eigenvalues: self.eigenvalues[..rho].to_vec(),
            residuals: self.residuals[..rho].to_vec(),
        })
    }
}

/// Column-norm ordering of `D Psi`: `||D psi_i||` should be non-decreasing in `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub column_norms: Vec<f64>,
    /// adjacent pairs that decrease beyond rounding
    pub violations: usize,
    /// adjacent pairs that are equal to rounding (strict ordering fails)
    pub ties: usize,
}

impl OrderingCheck {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn strict(&self) -> bool {
        self.violations == 0 && self.ties == 0
    }
}

pub fn ordering_check(dpsi_column_norms: Vec<f64>) -> OrderingCheck {
    let scale = dpsi_column_norms.iter().copied().fold(0.0, f64::max);
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut violations = 0;
    let mut ties = 0;
    for w in dpsi_column_norms.windows(2) {
        if w[1] < w[0] - tol {
            violations += 1;
        } else if (w[1] - w[0]).abs() <= tol {
            ties += 1;
        }
    }
    OrderingCheck { column_norms: dpsi_column_norms, violations, ties }
}

/// The `rho` smallest eigenpairs of a sparse symmetric positive definite `Delta`.
pub fn smallest_eigvecs(delta: &CsrMatrix, rho: usize) -> Result<Basis> {
    smallest_eigvecs_with(delta, rho, EigenStrategy::Auto)
}

pub fn smallest_eigvecs_with(delta: &CsrMatrix, rho: usize, strategy: EigenStrategy) -> Result<Basis> {
    let n = delta.nrows();
    if delta.ncols() != n {
        return Err(Error::ShapeMismatch { what: "square Laplacian", expected: n, got: delta.ncols() });
    }
    if rho == 0 || rho > n {
        return Err(Error::RhoOutOfRange { rho, max: n });
    }
    let dense = match strategy {
        EigenStrategy::Auto => n <= DENSE_EIGEN_LIMIT,
        EigenStrategy::Dense => true,
        EigenStrategy::ShiftInvert => false,
    };
    let scale = lanczos_max_eigenvalue(delta, 300).max(f64::MIN_POSITIVE);
    let (values, vectors) = if dense {
        let (vals, vecs) = sorted_eigen(delta.to_dense());
        (vals[..rho].to_vec(), vecs.columns(0, rho).into_owned())
    } else {
        shift_invert(delta, rho, scale)?
    };
    let mut basis = finish_basis(delta, values, vectors, scale);
    let worst = basis.residuals.iter().copied().fold(0.0, f64::max);
    if worst > EIGEN_RESIDUAL_TOL * scale {
        return Err(Error::EigenNonConvergence { iterations: 0, residual: worst, tolerance: EIGEN_RESIDUAL_TOL * scale });
    }
    basis.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(basis)
}

fn residual(delta: &CsrMatrix, v: &[f64], lambda: f64) -> f64 {
    let dv = delta.matvec(v);
    dv.iter().zip(v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt()
}

/// Orders clusters of equal eigenvalues by `||D psi||^2 = psi^T Delta psi`
/// ascending, fixes signs and records residuals.
fn finish_basis(delta: &CsrMatrix, values: Vec<f64>, vectors: DMatrix<f64>, scale: f64) -> Basis {
    let rho = values.len();
    let n = vectors.nrows();
    let rayleigh: Vec<f64> = (0..rho)
        .map(|j| {
            let v: Vec<f64> = vectors.column(j).iter().copied().collect();
            let q: f64 = v.iter().zip(delta.matvec(&v)).map(|(a, b)| a * b).sum();
            q / v.iter().map(|x| x * x).sum::<f64>()
        })
        .collect();
    let mut order: Vec<usize> = (0..rho).collect();
    let mut start = 0;
    while start < rho {
        let mut end = start + 1;
        while end < rho && values[end] - values[start] <= CLUSTER_TOL * scale {
            end += 1;
        }
        order[start..end].sort_by(|&a, &b| rayleigh[a].total_cmp(&rayleigh[b]).then(a.cmp(&b)));
        start = end;
    }
    let mut psi = DMatrix::zeros(n, rho);
    let mut eigenvalues = Vec::with_capacity(rho);
    let mut residuals = Vec::with_capacity(rho);
    for (new, &old) in order.iter().enumerate() {
        let mut col: Vec<f64> = vectors.column(old).iter().copied().collect();
        let nrm = norm(&col);
        col.iter_mut().for_each(|v| *v /= nrm);
        let pivot = col.iter().enumerate().fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        residuals.push(residual(delta, &col, rayleigh[old]));
        eigenvalues.push(rayleigh[old]);
        psi.set_column(new, &nalgebra::DVector::from_vec(col));
    }
    Basis { psi, eigenvalues, residuals }
}

/// Block inverse iteration (shift 0) with Rayleigh-Ritz on a guard-padded block.
fn shift_invert(delta: &CsrMatrix, rho: usize, scale: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    const MAX_ITER: usize = 1000;
    let n = delta.nrows();
    let block = (2 * rho + 10).min(n);
    let chol = EnvelopeCholesky::new(delta)?;
    let mut rng = query_rng(0x5eed, 0);
    let mut v = DMatrix::from_fn(n, block, |_, _| rng.gen::<f64>() - 0.5);
    v = v.qr().q();
    let mut worst = f64::INFINITY;
    for iter in 0..MAX_ITER {
        let mut w = DMatrix::zeros(n, block);
        for j in 0..block {
            let col: Vec<f64> = v.column(j).iter().copied().collect();
            w.set_column(j, &nalgebra::DVector::from_vec(chol.solve(&col)));
        }
        let q = w.qr().q();
        let mut aq = DMatrix::zeros(n, block);
        for j in 0..block {
            let col: Vec<f64> = q.column(j).iter().copied().collect();
            aq.set_column(j, &nalgebra::DVector::from_vec(delta.matvec(&col)));
        }
        let h = q.transpose() * &aq;
        let h = (&h + h.transpose()) * 0.5;
        let (theta, y) = sorted_eigen(h);
        v = &q * &y;
        let av = &aq * &y;
        worst = (0..rho)
            .map(|j| (av.column(j) - v.column(j) * theta[j]).norm())
            .fold(0.0, f64::max);
        if worst <= 1e-3 * EIGEN_RESIDUAL_TOL * scale || (iter > 20 && worst <= EIGEN_RESIDUAL_TOL * scale * 1e-2) {
            return Ok((theta[..rho].to_vec(), v.columns(0, rho).into_owned()));
        }
    }
    if worst <= EIGEN_RESIDUAL_TOL * scale {
        return Ok(shift_invert_final(delta, &v, rho));
    }
    Err(Error::EigenNonConvergence { iterations: MAX_ITER, residual: worst, tolerance: EIGEN_RESIDUAL_TOL * scale })
}

fn shift_invert_final(delta: &CsrMatrix, v: &DMatrix<f64>, rho: usize) -> (Vec<f64>, DMatrix<f64>) {
    let theta = (0..rho)
        .map(|j| {
            let col: Vec<f64> = v.column(j).iter().copied().collect();
            col.iter().zip(delta.matvec(&col)).map(|(a, b)| a * b).sum()
        })
        .collect();
    (theta, v.columns(0, rho).into_owned())
}

/// `||u - Pi u||` and its relative value (`None` for `u = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionError {
    pub absolute: f64,
    pub relative: Option<f64>,
}

pub fn projection_error(u: &[f64], basis: &Basis) -> Result<ProjectionError> {
    if u.len() != basis.n() {
        return Err(Error::ShapeMismatch { what: "projected vector", expected: basis.n(), got: u.len() });
    }
    let pu = basis.apply_projector(u);
    let absolute = u.iter().zip(&pu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let nu = norm(u);
    Ok(ProjectionError { absolute, relative: (nu > 0.0).then(|| absolute / nu) })
}

/// JSON header of an offline artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub dim: usize,
    pub n_nodes: usize,
    pub n_elements: usize,
    pub n_rows: usize,
    pub n_dof: usize,
    pub rho: usize,
    pub d_nnz: usize,
    pub problem: Option<ProblemKind>,
    pub fingerprint: String,
    pub data_hash: Option<String>,
    pub eigenvalues: Vec<f64>,
    pub eigen_residuals: Vec<f64>,
    /// node -> free column, -1 Dirichlet, -2 pinned
    pub dof_map: Vec<i64>,
    pub endianness: String,
}

/// Parameter-independent data reused by every online query.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineArtifact {
    pub header: ArtifactHeader,
    pub d: CsrMatrix,
    /// `D Psi`, row-major `n_rows x rho`
    pub dpsi: Vec<f64>,
    pub basis: Basis,
    pub psi_tb: Vec<f64>,
    pub row_norms: Vec<f64>,
    pub omega: ElementVolumes,
    /// load vector over free dofs
    pub b: Vec<f64>,
}

impl OfflineArtifact {
    pub fn rho(&self) -> usize {
        self.header.rho
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn n_rows(&self) -> usize {
        self.header.n_rows
    }

    pub fn n_elements(&self) -> usize {
        self.header.n_elements
    }

    pub fn n_dof(&self) -> usize {
        self.header.n_dof
    }

    #[inline]
    pub fn dpsi_row(&self, r: usize) -> &[f64] {
        let rho = self.header.rho;
        &self.dpsi[r * rho..(r + 1) * rho]
    }

    /// Norms of the columns of `D Psi`.
    pub fn dpsi_column_norms(&self) -> Vec<f64> {
        let rho = self.rho();
        let mut s = vec![0.0; rho];
        for row in self.dpsi.chunks_exact(rho.max(1)) {
            for (a, v) in s.iter_mut().zip(row) {
                *a += v * v;
            }
        }
        s.into_iter().map(f64::sqrt).collect()
    }

    pub fn ordering_check(&self) -> OrderingCheck {
        ordering_check(self.dpsi_column_norms())
    }

    /// Same artifact restricted to the first `rho` basis vectors.
    pub fn truncated(&self, rho: usize) -> Result<OfflineArtifact> {
        if rho == self.rho() {
            return Ok(self.clone());
        }
        let basis = self.basis.truncated(rho)?;
        let old = self.rho();
        let dpsi: Vec<f64> = self.dpsi.chunks_exact(old).flat_map(|row| row[..rho].iter().copied()).collect();
        let row_norms = dpsi.chunks_exact(rho).map(norm).collect();
        let mut header = self.header.clone();
        header.rho = rho;
        header.eigenvalues.truncate(rho);
        header.eigen_residuals.truncate(rho);
        Ok(OfflineArtifact {
            header,
            d: self.d.clone(),
            dpsi,
            basis,
            psi_tb: self.psi_tb[..rho].to_vec(),
            row_norms,
            omega: self.omega.clone(),
            b: self.b.clone(),
        })
    }
}

/// Builds the offline bundle. `b` must not depend on the parameter (no
/// Dirichlet lifting), since `Psi^T b` is cached.
pub fn precompute(
    dm: &GradientFactor,
    basis: &Basis,
    b: &LoadVector,
    omega: &ElementVolumes,
    data_hash: Option<String>,
) -> Result<OfflineArtifact> {
    if b.fingerprint != dm.fingerprint() {
        return Err(Error::FingerprintMismatch { left: "load vector", right: "gradient factor" });
    }
    if basis.n() != dm.n_dof() {
        return Err(Error::ShapeMismatch { what: "basis rows", expected: dm.n_dof(), got: basis.n() });
    }
    if b.b.len() != dm.n_dof() {
        return Err(Error::ShapeMismatch { what: "load vector", expected: dm.n_dof(), got: b.b.len() });
    }
    if omega.len() != dm.n_elements() {
        return Err(Error::ShapeMismatch { what: "element volumes", expected: dm.n_elements(), got: omega.len() });
    }
    let rho = basis.rho();
    let d = dm.matrix();
    let psi = basis.psi();
    let mut dpsi = vec![0.0; d.nrows() * rho];
    for r in 0..d.nrows() {
        let out = &mut dpsi[r * rho..(r + 1) * rho];
        let (cols, vals) = d.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (j, o) in out.iter_mut().enumerate() {
                *o += v * psi[(c, j)];
            }
        }
    }
    let row_norms = if rho == 0 { vec![0.0; d.nrows()] } else { dpsi.chunks_exact(rho).map(norm).collect() };
    let header = ArtifactHeader {
        dim: dm.dim(),
        n_nodes: dm.dof_map().n_nodes(),
        n_elements: dm.n_elements(),
        n_rows: d.nrows(),
        n_dof: dm.n_dof(),
        rho,
        d_nnz: d.nnz(),
        problem: dm.problem(),
        fingerprint: dm.fingerprint().to_string(),
        data_hash,
        eigenvalues: basis.eigenvalues().to_vec(),
        eigen_residuals: basis.residuals().to_vec(),
        dof_map: dm.dof_map().dofs().iter().map(|d| d.code()).collect(),
        endianness: "little".into(),
    };
    Ok(OfflineArtifact {
        header,
        d: d.clone(),
        dpsi,
        psi_tb: basis.project(&b.b),
        basis: basis.clone(),
        row_norms,
        omega: omega.clone(),
        b: b.b.clone(),
    })
}
