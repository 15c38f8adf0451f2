//! Galerkin assembly for `-div(p grad u) = f` with linear simplices.
//!
//! The stiffness matrix is formed as the product `A = D^T Z D`, where `D`
//! stacks the shape-function gradients of every element (d rows per element)
//! and `Z = z (x) I_d` with `z_l = p_l |Omega_l|`. Only `Z` depends on the
//! parameter vector, so `D` and the sparsity pattern of `A` are built once.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::cholesky::{EnvelopeCholesky, EnvelopeSymbolic};
use crate::data::LoadData;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mesh::{BoundaryTag, ElementVolumes, Mesh};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Nodes on Dirichlet-tagged facets are eliminated (mixed tagging allowed).
    Dirichlet,
    /// Pure Neumann: all nodes free except the lowest-index node, pinned to 0.
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Free(usize),
    Dirichlet,
    Pinned,
}

impl Dof {
    /// Compact integer code: column index, -1 Dirichlet, -2 pinned.
    pub fn code(self) -> i64 {
        match self {
            Dof::Free(c) => c as i64,
            Dof::Dirichlet => -1,
            Dof::Pinned => -2,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            -1 => Some(Dof::Dirichlet),
            -2 => Some(Dof::Pinned),
            c if c >= 0 => Some(Dof::Free(c as usize)),
            _ => None,
        }
    }
}

/// Node index -> free column or eliminated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    dofs: Vec<Dof>,
    n_free: usize,
}

impl DofMap {
    pub fn new(dofs: Vec<Dof>) -> Self {
        let n_free = dofs.iter().filter(|d| matches!(d, Dof::Free(_))).count();
        DofMap { dofs, n_free }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_nodes(&self) -> usize {
        self.dofs.len()
    }

    pub fn get(&self, node: usize) -> Dof {
        self.dofs[node]
    }

    pub fn column(&self, node: usize) -> Option<usize> {
        match self.dofs[node] {
            Dof::Free(c) => Some(c),
            _ => None,
        }
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    /// Expands a vector over free dofs to all nodes; eliminated nodes take
    /// `eliminated(node)`.
    pub fn expand(&self, u: &[f64], eliminated: impl Fn(usize) -> f64) -> Vec<f64> {
        self.dofs
            .iter()
            .enumerate()
            .map(|(i, d)| match d {
                Dof::Free(c) => u[*c],
                _ => eliminated(i),
            })
            .collect()
    }
}

/// Shape-function gradients per element and the stacked sparse matrix `D`
/// restricted to free columns.
#[derive(Debug, Clone)]
pub struct GradientFactor {
    dim: usize,
    problem: Option<ProblemKind>,
    connectivity: Vec<usize>,
    /// per element, per local vertex, `dim` gradient components
    grads: Vec<f64>,
    dof_map: DofMap,
    matrix: CsrMatrix,
    fingerprint: String,
}

fn element_gradients(mesh: &Mesh, l: usize) -> Result<Vec<f64>> {
    let d = mesh.dim();
    let e = mesh.edge_matrix(l);
    // grad(phi_{i+1}) = column i of E^{-1}, with E holding edge vectors as rows
    let cols: Vec<[f64; 3]> = match d {
        2 => {
            let m = Matrix2::new(e[0][0], e[0][1], e[1][0], e[1][1]);
            let inv = m.try_inverse().ok_or(Error::DegenerateElement { element: l, volume: 0.0, tolerance: 0.0 })?;
            (0..2).map(|i| [inv[(0, i)], inv[(1, i)], 0.0]).collect()
        }
        _ => {
            let m = Matrix3::new(
                e[0][0], e[0][1], e[0][2], e[1][0], e[1][1], e[1][2], e[2][0], e[2][1], e[2][2],
            );
            let inv = m.try_inverse().ok_or(Error::DegenerateElement { element: l, volume: 0.0, tolerance: 0.0 })?;
            (0..3).map(|i| [inv[(0, i)], inv[(1, i)], inv[(2, i)]]).collect()
        }
    };
    let mut g = vec![0.0; (d + 1) * d];
    for (i, c) in cols.iter().enumerate() {
        for q in 0..d {
            g[(i + 1) * d + q] = c[q];
            g[q] -= c[q];
        }
    }
    Ok(g)
}

impl GradientFactor {
    /// `D` for the given boundary treatment. Dirichlet requires at least one
    /// Dirichlet facet; Neumann requires none.
    pub fn new(mesh: &Mesh, problem: ProblemKind) -> Result<Self> {
        let dofs = match problem {
            ProblemKind::Dirichlet => {
                if !mesh.has_dirichlet() {
                    return Err(Error::InvalidArgument("Dirichlet problem on a mesh without Dirichlet facets".into()));
                }
                let mask = mesh.dirichlet_nodes();
                let mut next = 0;
                mask.iter()
                    .map(|&fixed| {
                        if fixed {
                            Dof::Dirichlet
                        } else {
                            next += 1;
                            Dof::Free(next - 1)
                        }
                    })
                    .collect()
            }
            ProblemKind::Neumann => {
                if mesh.has_dirichlet() {
                    return Err(Error::InvalidArgument("Neumann problem on a mesh with Dirichlet facets".into()));
                }
                (0..mesh.n_nodes()).map(|i| if i == 0 { Dof::Pinned } else { Dof::Free(i - 1) }).collect()
            }
        };
        Self::with_dofs(mesh, DofMap::new(dofs), Some(problem))
    }

    /// `D` over all nodes with nothing eliminated (singular Laplacian for
    /// connected meshes).
    pub fn unconstrained(mesh: &Mesh) -> Result<Self> {
        Self::with_dofs(mesh, DofMap::new((0..mesh.n_nodes()).map(Dof::Free).collect()), None)
    }

    fn with_dofs(mesh: &Mesh, dof_map: DofMap, problem: Option<ProblemKind>) -> Result<Self> {
        let d = mesh.dim();
        let k = mesh.n_elements();
        let mut grads = Vec::with_capacity(k * (d + 1) * d);
        for l in 0..k {
            grads.extend(element_gradients(mesh, l)?);
        }
        let mut rows = Vec::with_capacity(k * d * (d + 1));
        let mut cols = Vec::with_capacity(rows.capacity());
        let mut vals = Vec::with_capacity(rows.capacity());
        for l in 0..k {
            for (i, &v) in mesh.element(l).iter().enumerate() {
                if let Some(c) = dof_map.column(v) {
                    for q in 0..d {
                        rows.push(l * d + q);
                        cols.push(c);
                        vals.push(grads[(l * (d + 1) + i) * d + q]);
                    }
                }
            }
        }
        let matrix = CsrMatrix::from_triplets(k * d, dof_map.n_free(), &rows, &cols, &vals)?;
        Ok(GradientFactor {
            dim: d,
            problem,
            connectivity: mesh.connectivity().to_vec(),
            grads,
            dof_map,
            matrix,
            fingerprint: mesh.fingerprint(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `None` for the unconstrained factor.
    pub fn problem(&self) -> Option<ProblemKind> {
        self.problem
    }

    pub fn n_elements(&self) -> usize {
        self.connectivity.len() / (self.dim + 1)
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_dof(&self) -> usize {
        self.dof_map.n_free()
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dof_map
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn element_nodes(&self, l: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.connectivity[l * s..(l + 1) * s]
    }

    /// Gradient of the shape function of local vertex `i` on element `l`.
    pub fn gradient(&self, l: usize, i: usize) -> &[f64] {
        let d = self.dim;
        let base = (l * (d + 1) + i) * d;
        &self.grads[base..base + d]
    }
}

/// Positive per-element parameter vector `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterQuery {
    p: Vec<f64>,
}

impl ParameterQuery {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some((element, &value)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Admissibility { element, value });
        }
        Ok(ParameterQuery { p })
    }

    pub fn uniform(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete integral `p_Omega = sum_l p_l |Omega_l|`.
    pub fn integral(&self, omega: &ElementVolumes) -> f64 {
        self.p.iter().zip(&omega.omega).map(|(p, w)| p * w).sum()
    }
}

/// `z_l = p_l |Omega_l|`; `Z = z (x) I_d` is applied implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub z: Vec<f64>,
}

impl Scaling {
    /// Diagonal entry of `Z` for stacked row `row` of `D`.
    #[inline]
    pub fn row_weight(&self, row: usize, dim: usize) -> f64 {
        self.z[row / dim]
    }

    pub fn ones(k: usize) -> Self {
        Scaling { z: vec![1.0; k] }
    }
}

pub fn assemble_scaling(p: &ParameterQuery, omega: &ElementVolumes) -> Result<Scaling> {
    if p.len() != omega.len() {
        return Err(Error::ShapeMismatch { what: "parameter vector", expected: omega.len(), got: p.len() });
    }
    let z = p
        .values()
        .iter()
        .zip(&omega.omega)
        .enumerate()
        .map(|(element, (&pl, &wl))| {
            let z = pl * wl;
            if z.is_finite() && z > 0.0 {
                Ok(z)
            } else {
                Err(Error::Admissibility { element, value: pl })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scaling { z })
}

/// Sparse symmetric positive definite `A = D^T Z D`.
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    pub matrix: CsrMatrix,
}

impl StiffnessMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Precomputed sparsity pattern of `D^T Z D` with a scatter map from every
/// row-pair product of `D` into the value array.
#[derive(Debug, Clone)]
pub struct StiffnessAssembler {
    dim: usize,
    d: CsrMatrix,
    pattern: CsrMatrix,
    scatter: Vec<usize>,
}

impl StiffnessAssembler {
    pub fn new(dm: &GradientFactor) -> Result<Self> {
        Self::from_matrix(dm.matrix().clone(), dm.dim())
    }

    pub fn from_matrix(d: CsrMatrix, dim: usize) -> Result<Self> {
        let n = d.ncols();
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for r in 0..d.nrows() {
            let (c, _) = d.row(r);
            for &i in c {
                for &j in c {
                    rows.push(i);
                    cols.push(j);
                }
            }
        }
        let zeros = vec![0.0; rows.len()];
        let pattern = CsrMatrix::from_triplets(n, n, &rows, &cols, &zeros)?;
        let scatter = rows
            .iter()
            .zip(&cols)
            .map(|(&i, &j)| {
                let (pc, _) = pattern.row(i);
                pattern.indptr()[i] + pc.binary_search(&j).expect("entry in pattern")
            })
            .collect();
        Ok(StiffnessAssembler { dim, d, pattern, scatter })
    }

    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// `A = sum over rows r of D: z_{r/d} D_r^T D_r`.
    pub fn assemble(&self, s: &Scaling) -> Result<StiffnessMatrix> {
        if s.z.len() * self.dim != self.d.nrows() {
            return Err(Error::ShapeMismatch { what: "scaling", expected: self.d.nrows() / self.dim, got: s.z.len() });
        }
        let mut a = self.pattern.clone();
        let data = a.data_mut();
        let mut t = 0;
        for r in 0..self.d.nrows() {
            let z = s.row_weight(r, self.dim);
            let (c, v) = self.d.row(r);
            for a_val in v {
                let zv = z * a_val;
                for b_val in v {
                    data[self.scatter[t]] += zv * b_val;
                    t += 1;
                }
            }
            debug_assert!(c.len() * c.len() <= t);
        }
        Ok(StiffnessMatrix { matrix: a })
    }
}

pub fn assemble_stiffness(dm: &GradientFactor, s: &Scaling) -> Result<StiffnessMatrix> {
    StiffnessAssembler::new(dm)?.assemble(s)
}

/// Right-hand side over free dofs, with Dirichlet lifting folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadVector {
    pub b: Vec<f64>,
    pub fingerprint: String,
}

/// Centroid-rule load vector: `f_l |Omega_l| / (d+1)` to each free vertex,
/// `g_t |facet_t| / d` to each free vertex of Neumann facets, and
/// `b_i -= sum_l z_l grad(phi_i) . grad(phi_j) g^D_j` for Dirichlet nodes `j`.
pub fn assemble_load(
    mesh: &Mesh,
    data: &LoadData,
    dm: &GradientFactor,
    s: &Scaling,
) -> Result<LoadVector> {
    if dm.fingerprint() != mesh.fingerprint() {
        return Err(Error::FingerprintMismatch { left: "gradient factor", right: "mesh" });
    }
    let d = mesh.dim();
    let k = mesh.n_elements();
    if data.forcing.len() != k {
        return Err(Error::ShapeMismatch { what: "forcing", expected: k, got: data.forcing.len() });
    }
    if data.neumann_flux.len() != mesh.n_facets() {
        return Err(Error::MissingBoundaryData(format!(
            "Neumann flux has {} values for {} facets",
            data.neumann_flux.len(),
            mesh.n_facets()
        )));
    }
    if data.dirichlet_value.len() != mesh.n_nodes() {
        return Err(Error::MissingBoundaryData(format!(
            "Dirichlet data has {} values for {} nodes",
            data.dirichlet_value.len(),
            mesh.n_nodes()
        )));
    }
    if s.z.len() != k {
        return Err(Error::ShapeMismatch { what: "scaling", expected: k, got: s.z.len() });
    }
    let omega = mesh.element_volumes()?;
    let map = dm.dof_map();
    let mut b = vec![0.0; map.n_free()];
    for l in 0..k {
        let share = data.forcing[l] * omega.omega[l] / (d + 1) as f64;
        let nodes = mesh.element(l);
        for (i, &vi) in nodes.iter().enumerate() {
            let Some(ci) = map.column(vi) else { continue };
            b[ci] += share;
            for (j, &vj) in nodes.iter().enumerate() {
                if map.get(vj) == Dof::Dirichlet {
                    let g = data.dirichlet_value[vj];
                    if g != 0.0 {
                        let gi = dm.gradient(l, i);
                        let gj = dm.gradient(l, j);
                        let dot: f64 = gi.iter().zip(gj).map(|(a, b)| a * b).sum();
                        b[ci] -= s.z[l] * dot * g;
                    }
                }
            }
        }
    }
    for t in 0..mesh.n_facets() {
        if mesh.facet_tag(t) != BoundaryTag::Neumann {
            continue;
        }
        let share = data.neumann_flux[t] * mesh.facet_measure(t) / d as f64;
        for &v in mesh.facet(t) {
            if let Some(c) = map.column(v) {
                b[c] += share;
            }
        }
    }
    Ok(LoadVector { b, fingerprint: mesh.fingerprint() })
}

pub const EXACT_SOLVE_RTOL: f64 = 1e-10;

/// Direct sparse Cholesky solve `u* = A^{-1} b` with residual check.
pub fn exact_solve(a: &StiffnessMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n() {
        return Err(Error::ShapeMismatch { what: "load vector", expected: a.n(), got: b.len() });
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let chol = EnvelopeCholesky::new(&a.matrix)?;
    solve_checked(&chol, &a.matrix, b)
}

fn solve_checked(chol: &EnvelopeCholesky, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let mut u = chol.solve(b);
    let tol = EXACT_SOLVE_RTOL * norm(b);
    let mut residual = residual_norm(a, &u, b);
    if residual > tol {
        // one step of iterative refinement
        let r: Vec<f64> = b.iter().zip(a.matvec(&u)).map(|(b, au)| b - au).collect();
        let du = chol.solve(&r);
        u.iter_mut().zip(du).for_each(|(u, d)| *u += d);
        residual = residual_norm(a, &u, b);
    }
    if residual > tol {
        return Err(Error::SolverResidual { residual, tolerance: tol });
    }
    Ok(u)
}

fn residual_norm(a: &CsrMatrix, u: &[f64], b: &[f64]) -> f64 {
    let au = a.matvec(u);
    au.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Assemble-and-solve baseline for repeated queries on one mesh; the
/// ordering and envelope are computed once.
#[derive(Debug, Clone)]
pub struct ExactSolver {
    assembler: StiffnessAssembler,
    symbolic: EnvelopeSymbolic,
}

impl ExactSolver {
    pub fn new(assembler: StiffnessAssembler) -> Result<Self> {
        let symbolic = EnvelopeSymbolic::new(assembler.pattern())?;
        Ok(ExactSolver { assembler, symbolic })
    }

    pub fn assembler(&self) -> &StiffnessAssembler {
        &self.assembler
    }

    pub fn solve(&self, s: &Scaling, b: &[f64]) -> Result<Vec<f64>> {
        let a = self.assembler.assemble(s)?;
        self.solve_assembled(&a, b)
    }

    pub fn solve_assembled(&self, a: &StiffnessMatrix, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != a.n() {
            return Err(Error::ShapeMismatch { what: "load vector", expected: a.n(), got: b.len() });
        }
        if b.is_empty() {
            return Ok(Vec::new());
        }
        let chol = self.symbolic.factor(&a.matrix)?;
        solve_checked(&chol, &a.matrix, b)
    }
}
