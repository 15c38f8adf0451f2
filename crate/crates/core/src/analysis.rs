//! Diagnostics: leverage vs row-norm distributions, their distance bounds,
//! stiffness spectrum checks, sample budgets and the error decomposition of a
//! sketched solution. Dense factorizations are gated to desk scale.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{Scaling, StiffnessMatrix};
use crate::error::{Error, Result};
use crate::linalg::{lanczos_max_eigenvalue, norm, sorted_eigenvalues, sub};
use crate::mesh::ElementVolumes;
use crate::sketch::{exact_gram, sampling_distribution, variance_terms};
use crate::subspace::{Basis, OfflineArtifact};

/// Row limit for dense SVD based diagnostics.
pub const DESK_MAX_ROWS: usize = 50_000;
/// Column limit for dense SVD / eigendecomposition based diagnostics.
pub const DESK_MAX_COLS: usize = 5_000;
/// Slack used when comparing computed quantities with analytic bounds.
pub const BOUND_SLACK: f64 = 1e-9;

fn desk_gate(rows: usize, cols: usize) -> Result<()> {
    if rows > DESK_MAX_ROWS {
        return Err(Error::TooLarge { what: "row count", size: rows, limit: DESK_MAX_ROWS });
    }
    if cols > DESK_MAX_COLS {
        return Err(Error::TooLarge { what: "column count", size: cols, limit: DESK_MAX_COLS });
    }
    Ok(())
}

/// Leverage and row-norm scores of a tall matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub leverage: Vec<f64>,
    pub rownorm: Vec<f64>,
    pub xi_leverage: Vec<f64>,
    pub xi_rownorm: Vec<f64>,
    /// descending
    pub singular_values: Vec<f64>,
    pub rank: usize,
}

pub fn scores(b: &DMatrix<f64>) -> Result<ScoreSet> {
    let (m, n) = b.shape();
    desk_gate(m, n)?;
    if m < n {
        return Err(Error::InvalidArgument(format!("scores need a tall matrix, got {m} x {n}")));
    }
    if n == 0 {
        return Err(Error::RankDeficient { rank: 0, cols: 0 });
    }
    let qr = b.clone().qr();
    let r = qr.r();
    let mut sv: Vec<f64> = r.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let tol = m.max(n) as f64 * f64::EPSILON * sv[0];
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < n {
        return Err(Error::RankDeficient { rank, cols: n });
    }
    let q = qr.q();
    let leverage: Vec<f64> = (0..m).map(|i| q.row(i).norm_squared()).collect();
    let rownorm: Vec<f64> = (0..m).map(|i| b.row(i).norm_squared()).collect();
    let lev_sum: f64 = leverage.iter().sum();
    let rn_sum: f64 = rownorm.iter().sum();
    Ok(ScoreSet {
        xi_leverage: leverage.iter().map(|v| v / lev_sum).collect(),
        xi_rownorm: rownorm.iter().map(|v| v / rn_sum).collect(),
        leverage,
        rownorm,
        singular_values: sv,
        rank,
    })
}

/// Bounds of the homogeneous model `Z = z I` in terms of the trailing `rho`
/// singular values of `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousBounds {
    pub max_norm: f64,
    pub euclidean: f64,
    /// largest normalized trailing value minus `1/rho`
    pub f_rho: f64,
}

pub fn homogeneous_bounds(sigma_d: &[f64], rho: usize) -> Result<HomogeneousBounds> {
    if rho == 0 || rho > sigma_d.len() {
        return Err(Error::RhoOutOfRange { rho, max: sigma_d.len() });
    }
    let mut s = sigma_d.to_vec();
    s.sort_by(f64::total_cmp);
    let trailing = &s[..rho];
    let total: f64 = trailing.iter().map(|v| v * v).sum();
    if !(total > 0.0) {
        return Err(Error::Inconsistent("trailing singular values are all zero".into()));
    }
    let zeta: Vec<f64> = trailing.iter().map(|v| v * v / total).collect();
    let u = 1.0 / rho as f64;
    let zmax = zeta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zmin = zeta.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(HomogeneousBounds {
        max_norm: (zmax - u).max(u - zmin),
        euclidean: zeta.iter().map(|z| (z - u) * (z - u)).sum::<f64>().sqrt(),
        f_rho: zmax - u,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousBounds {
    pub max_norm: f64,
    pub euclidean: f64,
    /// `sigma_i^2 / ||X||_F^2` for the `rho` largest singular values
    pub pi: Vec<f64>,
}

/// `fro2`, when given, must agree with the sum of squared singular values.
pub fn inhomogeneous_bounds(sigma_x: &[f64], rho: usize, fro2: Option<f64>) -> Result<InhomogeneousBounds> {
    if rho == 0 || rho > sigma_x.len() {
        return Err(Error::RhoOutOfRange { rho, max: sigma_x.len() });
    }
    let total: f64 = sigma_x.iter().map(|v| v * v).sum();
    if let Some(f) = fro2 {
        if (total - f).abs() > 1e-10 * f.abs().max(total) {
            return Err(Error::Inconsistent(format!("sum of squared singular values {total} differs from ||X||_F^2 = {f}")));
        }
    }
    if !(total > 0.0) {
        return Err(Error::Inconsistent("singular values are all zero".into()));
    }
    let mut s = sigma_x.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let pi: Vec<f64> = s[..rho].iter().map(|v| v * v / total).collect();
    let u = 1.0 / rho as f64;
    let pmax = pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pmin = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let sum_sq: f64 = pi.iter().map(|p| p * p).sum();
    Ok(InhomogeneousBounds {
        max_norm: (pmax - u).max(u - pmin),
        euclidean: (sum_sq - u).max(0.0).sqrt(),
        pi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixTag {
    X,
    Y,
}

/// Distance between the leverage and row-norm distributions of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub matrix: MatrixTag,
    pub rho: usize,
    pub two_norm: f64,
    pub max_norm: f64,
    pub bound_two: f64,
    pub bound_max: f64,
    pub pi: Vec<f64>,
    /// descending
    pub singular_values: Vec<f64>,
}

impl DistanceReport {
    pub fn within_bounds(&self) -> bool {
        self.two_norm <= self.bound_two + BOUND_SLACK && self.max_norm <= self.bound_max + BOUND_SLACK
    }
}

/// Distances for a tall full-rank matrix, bounded with all its columns.
pub fn matrix_distance(b: &DMatrix<f64>, tag: MatrixTag) -> Result<DistanceReport> {
    let sc = scores(b)?;
    let diff: Vec<f64> = sub(&sc.xi_leverage, &sc.xi_rownorm);
    let rho = b.ncols();
    let bounds = inhomogeneous_bounds(&sc.singular_values, rho, Some(b.norm_squared()))?;
    Ok(DistanceReport {
        matrix: tag,
        rho,
        two_norm: norm(&diff),
        max_norm: diff.iter().fold(0.0, |m, v| m.max(v.abs())),
        bound_two: bounds.euclidean,
        bound_max: bounds.max_norm,
        pi: bounds.pi,
        singular_values: sc.singular_values,
    })
}

/// `X = Z^{1/2} (D Psi)_{:, 1..rho}` as a dense matrix.
pub fn projected_matrix(art: &OfflineArtifact, s: &Scaling, rho: usize) -> Result<DMatrix<f64>> {
    if rho == 0 || rho > art.rho() {
        return Err(Error::RhoOutOfRange { rho, max: art.rho() });
    }
    desk_gate(art.n_rows(), rho)?;
    let dim = art.dim();
    Ok(DMatrix::from_fn(art.n_rows(), rho, |r, j| s.row_weight(r, dim).sqrt() * art.dpsi_row(r)[j]))
}

/// `Y = Z^{1/2} D` as a dense matrix.
pub fn weighted_gradient_matrix(art: &OfflineArtifact, s: &Scaling) -> Result<DMatrix<f64>> {
    desk_gate(art.n_rows(), art.n_dof())?;
    let dim = art.dim();
    let mut y = art.d.to_dense();
    for r in 0..y.nrows() {
        let w = s.row_weight(r, dim).sqrt();
        y.row_mut(r).iter_mut().for_each(|v| *v *= w);
    }
    Ok(y)
}

/// Distances for `X` and `Y` under one scaling, with the two additional
/// spectral quantities of the inhomogeneous analysis (reported only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePair {
    pub x: DistanceReport,
    pub y: DistanceReport,
    /// `|1 - sigma_1(X)^2| max |1 - sigma_rho(X)^2|`
    pub x_spectral_deviation: f64,
    /// `|n - sum_i sigma_i(Y)^2| / kd`
    pub y_trace_deviation: f64,
    /// present when `z` is constant
    pub homogeneous: Option<HomogeneousBounds>,
}

impl DistancePair {
    /// `dist(X) <= dist(Y)` in the 2-norm and max-norm.
    pub fn x_not_worse(&self) -> (bool, bool) {
        (self.x.two_norm <= self.y.two_norm + BOUND_SLACK, self.x.max_norm <= self.y.max_norm + BOUND_SLACK)
    }
}

pub fn distribution_distance(art: &OfflineArtifact, s: &Scaling, rho: usize) -> Result<DistancePair> {
    let y = matrix_distance(&weighted_gradient_matrix(art, s)?, MatrixTag::Y)?;
    distribution_distance_with_y(art, s, rho, y)
}

/// As [`distribution_distance`] with a precomputed report for `Y` (which does
/// not depend on `rho`).
pub fn distribution_distance_with_y(
    art: &OfflineArtifact,
    s: &Scaling,
    rho: usize,
    y: DistanceReport,
) -> Result<DistancePair> {
    let x = matrix_distance(&projected_matrix(art, s, rho)?, MatrixTag::X)?;
    let s1 = x.singular_values[0];
    let sr = x.singular_values[rho - 1];
    let x_spectral_deviation = (1.0 - s1 * s1).abs().max((1.0 - sr * sr).abs());
    let y_sum: f64 = y.singular_values.iter().map(|v| v * v).sum();
    let y_trace_deviation = (art.n_dof() as f64 - y_sum).abs() / art.n_rows() as f64;
    let z0 = s.z[0];
    let homogeneous = if s.z.iter().all(|z| (z - z0).abs() <= 1e-12 * z0) {
        let sigma_d: Vec<f64> = art.header.eigenvalues[..rho].iter().map(|l| l.max(0.0).sqrt()).collect();
        Some(homogeneous_bounds(&sigma_d, rho)?)
    } else {
        None
    };
    Ok(DistancePair { x, y, x_spectral_deviation, y_trace_deviation, homogeneous })
}

/// Extreme eigenvalues of `A` with the diagonal sandwich check and the
/// mesh-dependent lower-bound factor (constant taken as 1, never asserted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StiffnessSpectrum {
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub max_diag: f64,
    pub sandwich_lower: bool,
    pub sandwich_upper: bool,
    pub lower_bound_factor: f64,
}

impl StiffnessSpectrum {
    pub fn sandwich_holds(&self) -> bool {
        self.sandwich_lower && self.sandwich_upper
    }
}

/// `p_min / k` times `(1 + log(mean/min))^{-1}` in 2D or
/// `((1/k) sum (mean/omega_l)^{1/2})^{-2/3}` in 3D.
pub fn lower_bound_factor(omega: &ElementVolumes, p_min: f64, dim: usize) -> f64 {
    let k = omega.len() as f64;
    let mean = omega.total() / k;
    let shape = if dim == 2 {
        let min = omega.omega.iter().copied().fold(f64::INFINITY, f64::min);
        1.0 / (1.0 + (mean / min).ln())
    } else {
        let avg: f64 = omega.omega.iter().map(|w| (mean / w).sqrt()).sum::<f64>() / k;
        avg.powf(-2.0 / 3.0)
    };
    p_min / k * shape
}

pub fn stiffness_spectral_report(
    a: &StiffnessMatrix,
    omega: &ElementVolumes,
    p_min: f64,
    dim: usize,
) -> Result<StiffnessSpectrum> {
    let n = a.n();
    desk_gate(n, n)?;
    if n == 0 {
        return Err(Error::InvalidArgument("empty stiffness matrix".into()));
    }
    let eig = sorted_eigenvalues(&a.matrix.to_dense());
    let lambda_max = eig[n - 1];
    let max_diag = a.matrix.diagonal().into_iter().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * lambda_max.abs();
    Ok(StiffnessSpectrum {
        lambda_max,
        lambda_min: eig[0],
        max_diag,
        sandwich_lower: max_diag <= lambda_max + tol,
        sandwich_upper: lambda_max <= (dim + 1) as f64 * max_diag + tol,
        lower_bound_factor: lower_bound_factor(omega, p_min, dim),
    })
}

/// Which variance numerator the budget uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetForm {
    /// `(sum_l z_l |a_l|)^2 - ||G||_F^2`
    #[default]
    Published,
    /// `(sum_l z_l |a_l|^2)^2 - ||G||_F^2`, the exact second moment under the
    /// optimal distribution
    ExactVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub c: usize,
    /// unrounded value
    pub c_real: f64,
    pub form: BudgetForm,
    pub numerator: f64,
    /// `(1 + 1/eps)^2`
    pub prefactor: f64,
    pub lambda_min_g: f64,
    pub kappa_g: f64,
}

/// `c >= (1 + 1/eps)^2 numerator / (lambda_min(G)^2 delta)`, at least 1.
pub fn budget_from_terms(
    epsilon: f64,
    delta: f64,
    numerator: f64,
    g_eigenvalues: &[f64],
    form: BudgetForm,
) -> Result<SampleBudget> {
    if !(epsilon > 0.0 && epsilon.is_finite()) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("need epsilon > 0 and delta in (0, 1), got {epsilon}, {delta}")));
    }
    let lmin = g_eigenvalues.first().copied().unwrap_or(0.0);
    let lmax = g_eigenvalues.last().copied().unwrap_or(0.0);
    let kappa_g = lmax / lmin;
    if !(lmin > 1e-12 * lmax) {
        return Err(Error::IllConditioned { lambda_min: lmin, kappa: kappa_g });
    }
    let prefactor = (1.0 + 1.0 / epsilon).powi(2);
    let c_real = prefactor * numerator.max(0.0) / (lmin * lmin * delta);
    let c = if c_real >= usize::MAX as f64 { usize::MAX } else { (c_real.ceil() as usize).max(1) };
    Ok(SampleBudget { c, c_real, form, numerator, prefactor, lambda_min_g: lmin, kappa_g })
}

pub fn sample_budget(
    epsilon: f64,
    delta: f64,
    s: &Scaling,
    art: &OfflineArtifact,
    g: &DMatrix<f64>,
    form: BudgetForm,
) -> Result<SampleBudget> {
    let dist = sampling_distribution(s, &art.row_norms, art.dim())?;
    let t = variance_terms(art, s, &dist, g);
    let lead = match form {
        BudgetForm::Published => t.sum_z_norm,
        BudgetForm::ExactVariance => t.sum_z_norm2,
    };
    budget_from_terms(epsilon, delta, lead * lead - t.g_fro2, &sorted_eigenvalues(g), form)
}

/// Convenience: the budget for a parameter vector directly from the artifact.
pub fn sample_budget_for(
    epsilon: f64,
    delta: f64,
    s: &Scaling,
    art: &OfflineArtifact,
    form: BudgetForm,
) -> Result<SampleBudget> {
    let g = exact_gram(art, s)?;
    sample_budget(epsilon, delta, s, art, &g, form)
}

/// Error components of one sketched solution with the bounds they satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// `||u - Pi u||`
    pub projection: f64,
    /// `||Pi u - Psi r||`
    pub subspace: f64,
    /// `||Psi r - Psi r_hat||`
    pub simulation: f64,
    /// `||Psi r_hat - u||`
    pub total: f64,
    pub rel_projection: f64,
    pub rel_subspace: f64,
    pub rel_simulation: f64,
    pub rel_total: f64,
    pub kappa_g: f64,
    pub lambda_max_a: f64,
    pub lambda_min_g: f64,
    pub lambda_max_g: f64,
    pub psi_r_norm: f64,
    pub pi_u_norm: f64,
    /// `||Psi r - Psi r_hat|| / ||Psi r||`
    pub realized_epsilon: f64,
    /// `(lambda_max(A) / lambda_min(G)) ||u - Pi u||`
    pub subspace_bound: f64,
    pub subspace_bound_holds: bool,
    /// `subspace_bound + realized_epsilon ||Psi r||`
    pub total_bound: f64,
    pub total_bound_holds: bool,
    /// `||Pi u|| + (kappa(G) + (lambda_max(A) - lambda_max(G)) / lambda_min(G)) ||(I - Pi) u||`
    pub psi_r_bound: f64,
    pub psi_r_bound_holds: bool,
    /// `kappa_rho(A) ||u - Pi u|| + eps ||Psi r||` (needs the spectrum of A)
    pub best_case_bound: Option<f64>,
    /// `kappa(A) ||u - Pi u|| + eps ||Psi r||` (needs the spectrum of A)
    pub worst_case_bound: Option<f64>,
}

impl ErrorBreakdown {
    /// Total-error bound for a prescribed `eps`.
    pub fn total_bound_at(&self, epsilon: f64) -> f64 {
        self.subspace_bound + epsilon * self.psi_r_norm
    }

    pub fn triangle_holds(&self) -> bool {
        self.total <= self.projection + self.subspace + self.simulation + BOUND_SLACK
    }
}

fn relative(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else if x == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `a_spectrum` (ascending eigenvalues of `A`) enables the best and worst
/// case total bounds.
pub fn error_breakdown(
    u_star: &[f64],
    basis: &Basis,
    r: &[f64],
    r_hat: &[f64],
    a: &StiffnessMatrix,
    g: &DMatrix<f64>,
    a_spectrum: Option<&[f64]>,
) -> Result<ErrorBreakdown> {
    if a.n() != basis.n() {
        return Err(Error::ShapeMismatch { what: "stiffness matrix", expected: basis.n(), got: a.n() });
    }
    let lambda_max_a = match a_spectrum {
        Some(e) if !e.is_empty() => e[e.len() - 1],
        _ => lanczos_max_eigenvalue(&a.matrix, 300),
    };
    breakdown(u_star, basis, r, r_hat, lambda_max_a, g, a_spectrum)
}

/// As [`error_breakdown`] with `lambda_max(A)` already known, for callers
/// that evaluate many reduced solutions against one stiffness matrix.
pub fn error_breakdown_with(
    u_star: &[f64],
    basis: &Basis,
    r: &[f64],
    r_hat: &[f64],
    lambda_max_a: f64,
    g: &DMatrix<f64>,
) -> Result<ErrorBreakdown> {
    breakdown(u_star, basis, r, r_hat, lambda_max_a, g, None)
}

fn breakdown(
    u_star: &[f64],
    basis: &Basis,
    r: &[f64],
    r_hat: &[f64],
    lambda_max_a: f64,
    g: &DMatrix<f64>,
    a_spectrum: Option<&[f64]>,
) -> Result<ErrorBreakdown> {
    let n = basis.n();
    let rho = basis.rho();
    if u_star.len() != n {
        return Err(Error::ShapeMismatch { what: "exact solution", expected: n, got: u_star.len() });
    }
    if r.len() != rho || r_hat.len() != rho || g.nrows() != rho {
        return Err(Error::ShapeMismatch { what: "reduced solution", expected: rho, got: r.len() });
    }
    let pi_u = basis.apply_projector(u_star);
    let psi_r = basis.reconstruct(r);
    let psi_r_hat = basis.reconstruct(r_hat);
    let projection = norm(&sub(u_star, &pi_u));
    let subspace = norm(&sub(&pi_u, &psi_r));
    let simulation = norm(&sub(&psi_r, &psi_r_hat));
    let total = norm(&sub(&psi_r_hat, u_star));
    let un = norm(u_star);
    let g_eig = sorted_eigenvalues(g);
    let lambda_min_g = g_eig[0];
    let lambda_max_g = g_eig[rho - 1];
    let kappa_g = lambda_max_g / lambda_min_g;
    let psi_r_norm = norm(&psi_r);
    let pi_u_norm = norm(&pi_u);
    let realized_epsilon = relative(simulation, psi_r_norm);
    let subspace_bound = lambda_max_a / lambda_min_g * projection;
    let total_bound = subspace_bound + realized_epsilon * psi_r_norm;
    let psi_r_bound = pi_u_norm + (kappa_g + (lambda_max_a - lambda_max_g) / lambda_min_g) * projection;
    let slack = |b: f64| BOUND_SLACK * b.abs().max(1.0);
    let (best_case_bound, worst_case_bound) = match a_spectrum {
        Some(e) if e.len() >= rho && rho > 0 => {
            let eps_term = realized_epsilon * psi_r_norm;
            let top = e[e.len() - 1];
            (Some(top / e[rho - 1] * projection + eps_term), Some(top / e[0] * projection + eps_term))
        }
        _ => (None, None),
    };
    Ok(ErrorBreakdown {
        projection,
        subspace,
        simulation,
        total,
        rel_projection: relative(projection, un),
        rel_subspace: relative(subspace, un),
        rel_simulation: relative(simulation, un),
        rel_total: relative(total, un),
        kappa_g,
        lambda_max_a,
        lambda_min_g,
        lambda_max_g,
        psi_r_norm,
        pi_u_norm,
        realized_epsilon,
        subspace_bound,
        subspace_bound_holds: subspace <= subspace_bound + slack(subspace_bound),
        total_bound,
        total_bound_holds: total <= total_bound + slack(total_bound),
        psi_r_bound,
        psi_r_bound_holds: psi_r_norm <= psi_r_bound + slack(psi_r_bound),
        best_case_bound,
        worst_case_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_load, assemble_scaling, assemble_stiffness, exact_solve, GradientFactor, ParameterQuery,
        ProblemKind,
    };
    use crate::data::ProblemData;
    use crate::mesh::{generate_structured, BcLayout};
    use crate::rng::query_rng;
    use crate::sketch::{solve_gram, solve_query, DistributionMode};
    use crate::subspace::{laplacian, precompute, smallest_eigvecs};
    use rand::Rng;

    #[test]
    fn homogeneous_example() {
        let b = homogeneous_bounds(&[5.0, 2.0, 1.0], 2).unwrap();
        assert!((b.max_norm - 0.3).abs() < 1e-12);
        assert!((b.euclidean - 0.18f64.sqrt()).abs() < 1e-12);
        assert!((b.euclidean - 0.4243).abs() < 1e-4);
        let one = homogeneous_bounds(&[3.0, 1.0], 1).unwrap();
        assert_eq!((one.max_norm, one.euclidean), (0.0, 0.0));
        let flat = homogeneous_bounds(&[2.0, 2.0, 2.0], 3).unwrap();
        assert!(flat.max_norm.abs() < 1e-15 && flat.euclidean.abs() < 1e-15);
        assert!(homogeneous_bounds(&[1.0], 2).is_err());
    }

    #[test]
    fn inhomogeneous_example() {
        let b = inhomogeneous_bounds(&[3f64.sqrt(), 1.0], 2, Some(4.0)).unwrap();
        assert!((b.pi[0] - 0.75).abs() < 1e-15 && (b.pi[1] - 0.25).abs() < 1e-15);
        assert!((b.max_norm - 0.25).abs() < 1e-15);
        assert!((b.euclidean - 0.125f64.sqrt()).abs() < 1e-15);
        assert!((b.euclidean - 0.3536).abs() < 1e-4);
        let eq = inhomogeneous_bounds(&[1.0, 1.0, 1.0], 3, None).unwrap();
        assert!(eq.max_norm.abs() < 1e-15 && eq.euclidean.abs() < 1e-7);
        assert!(matches!(inhomogeneous_bounds(&[1.0, 1.0], 2, Some(3.0)), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn score_examples() {
        let id = scores(&DMatrix::identity(4, 4)).unwrap();
        assert!(id.xi_leverage.iter().chain(&id.xi_rownorm).all(|&x| (x - 0.25).abs() < 1e-14));
        let mut rng = query_rng(3, 0);
        let b = DMatrix::from_fn(20, 5, |_, _| rng.gen::<f64>() - 0.5);
        let sc = scores(&b).unwrap();
        assert!((sc.leverage.iter().sum::<f64>() - 5.0).abs() < 1e-10);
        assert!(sc.leverage.iter().all(|&l| (-1e-12..=1.0 + 1e-12).contains(&l)));
        let q = b.clone().qr().q();
        let sq = scores(&q).unwrap();
        for (a, b) in sq.xi_leverage.iter().zip(&sq.xi_rownorm) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut rd = b.clone();
        let c0 = rd.column(0).into_owned();
        rd.set_column(1, &c0);
        assert!(matches!(scores(&rd), Err(Error::RankDeficient { rank: 4, cols: 5 })));
    }

    #[test]
    fn budget_scaling() {
        let eig = [0.5, 2.0];
        let b1 = budget_from_terms(0.5, 0.2, 10.0, &eig, BudgetForm::Published).unwrap();
        let b2 = budget_from_terms(0.5, 0.1, 10.0, &eig, BudgetForm::Published).unwrap();
        assert!((b2.c_real / b1.c_real - 2.0).abs() < 1e-12);
        let e1 = budget_from_terms(1.0, 0.2, 10.0, &eig, BudgetForm::Published).unwrap();
        let e3 = budget_from_terms(1.0 / 3.0, 0.2, 10.0, &eig, BudgetForm::Published).unwrap();
        assert!((e1.c_real / e3.c_real - 0.25).abs() < 1e-12);
        let zero = budget_from_terms(0.5, 0.2, 0.0, &eig, BudgetForm::Published).unwrap();
        assert_eq!(zero.c, 1);
        assert!(matches!(
            budget_from_terms(0.5, 0.2, 1.0, &[0.0, 1.0], BudgetForm::Published),
            Err(Error::IllConditioned { .. })
        ));
        assert!(budget_from_terms(0.5, 1.0, 1.0, &eig, BudgetForm::Published).is_err());
    }

    #[test]
    fn identity_spectrum() {
        let a = StiffnessMatrix { matrix: crate::sparse::CsrMatrix::identity(3) };
        let omega = ElementVolumes { omega: vec![1.0; 2] };
        let r = stiffness_spectral_report(&a, &omega, 1.0, 2).unwrap();
        assert_eq!((r.lambda_max, r.max_diag), (1.0, 1.0));
        assert!(r.sandwich_holds());
    }

    struct Instance {
        art: OfflineArtifact,
        a: StiffnessMatrix,
        s: Scaling,
        u: Vec<f64>,
    }

    fn instance(rho: usize, seed: u64) -> Instance {
        let mesh = generate_structured(2, 6, BcLayout::AllDirichlet).unwrap();
        let dm = GradientFactor::new(&mesh, ProblemKind::Dirichlet).unwrap();
        let omega = mesh.element_volumes().unwrap();
        let data = ProblemData::desk_dirichlet();
        let b = assemble_load(&mesh, &data.sample(&mesh), &dm, &Scaling::ones(mesh.n_elements())).unwrap();
        let basis = smallest_eigvecs(&laplacian(&dm), rho).unwrap();
        let art = precompute(&dm, &basis, &b, &omega, None).unwrap();
        let mut rng = query_rng(seed, 0);
        let p = ParameterQuery::new((0..mesh.n_elements()).map(|_| rng.gen_range(0.1..10.0)).collect()).unwrap();
        let s = assemble_scaling(&p, &omega).unwrap();
        let a = assemble_stiffness(&dm, &s).unwrap();
        let u = exact_solve(&a, &b.b).unwrap();
        Instance { art, a, s, u }
    }

    #[test]
    fn breakdown_bounds_hold() {
        let inst = instance(8, 1);
        let g = exact_gram(&inst.art, &inst.s).unwrap();
        let r = solve_gram(&g, &inst.art.psi_tb, 0).unwrap();
        let p = ParameterQuery::new(inst.s.z.iter().zip(&inst.art.omega.omega).map(|(z, w)| z / w).collect()).unwrap();
        let out = solve_query(&inst.art, &p, 2000, DistributionMode::Prop33, 5, 0).unwrap();
        let spec = sorted_eigenvalues(&inst.a.matrix.to_dense());
        let e = error_breakdown(&inst.u, &inst.art.basis, &r, &out.solution.r_hat, &inst.a, &g, Some(&spec)).unwrap();
        assert!(e.subspace_bound_holds && e.total_bound_holds && e.psi_r_bound_holds && e.triangle_holds());
        assert!(e.best_case_bound.unwrap() <= e.worst_case_bound.unwrap());
        // interlacing
        assert!(spec[0] <= e.lambda_min_g * (1.0 + 1e-12) && e.lambda_min_g <= spec[7] * (1.0 + 1e-12));
        let lanczos = error_breakdown(&inst.u, &inst.art.basis, &r, &r, &inst.a, &g, None).unwrap();
        assert_eq!(lanczos.simulation, 0.0);
        assert!((lanczos.lambda_max_a - e.lambda_max_a).abs() < 1e-10 * e.lambda_max_a);
    }

    #[test]
    fn complete_basis_breakdown() {
        let mesh = generate_structured(2, 5, BcLayout::AllDirichlet).unwrap();
        let dm = GradientFactor::new(&mesh, ProblemKind::Dirichlet).unwrap();
        let n = dm.n_dof();
        let omega = mesh.element_volumes().unwrap();
        let b = assemble_load(
            &mesh,
            &ProblemData::desk_dirichlet().sample(&mesh),
            &dm,
            &Scaling::ones(mesh.n_elements()),
        )
        .unwrap();
        let basis = smallest_eigvecs(&laplacian(&dm), n).unwrap();
        let art = precompute(&dm, &basis, &b, &omega, None).unwrap();
        let s = Scaling { z: omega.omega.clone() };
        let a = assemble_stiffness(&dm, &s).unwrap();
        let u = exact_solve(&a, &b.b).unwrap();
        let g = exact_gram(&art, &s).unwrap();
        let r = solve_gram(&g, &art.psi_tb, 0).unwrap();
        let r_hat: Vec<f64> = r.iter().map(|v| v * 1.01).collect();
        let e = error_breakdown(&u, &art.basis, &r, &r_hat, &a, &g, None).unwrap();
        assert!(e.projection < 1e-12 && e.subspace < 1e-10 * norm(&u));
        assert!((e.total - e.simulation).abs() < 1e-10 * norm(&u));
    }

    #[test]
    fn distances_within_bounds() {
        let inst = instance(12, 3);
        let y = matrix_distance(&weighted_gradient_matrix(&inst.art, &inst.s).unwrap(), MatrixTag::Y).unwrap();
        assert!(y.within_bounds());
        for rho in 1..=12 {
            let pair = distribution_distance_with_y(&inst.art, &inst.s, rho, y.clone()).unwrap();
            assert!(pair.x.within_bounds(), "rho {rho}");
            if rho == 1 {
                assert!(pair.x.two_norm < 1e-10 && pair.x.max_norm < 1e-10);
                assert_eq!(pair.x_not_worse(), (true, true));
            }
        }
    }

    #[test]
    fn homogeneous_bounds_match_inhomogeneous_for_constant_z() {
        let inst = instance(6, 4);
        let s = Scaling { z: vec![0.7; inst.art.n_elements()] };
        let pair = distribution_distance(&inst.art, &s, 6).unwrap();
        let h = pair.homogeneous.unwrap();
        assert!((h.max_norm - pair.x.bound_max).abs() < 1e-9);
        assert!((h.euclidean - pair.x.bound_two).abs() < 1e-9);
    }

    #[test]
    fn sandwich_on_assembled_matrix() {
        let inst = instance(1, 5);
        let p_min = 0.1;
        let r = stiffness_spectral_report(&inst.a, &inst.art.omega, p_min, 2).unwrap();
        assert!(r.sandwich_holds());
        assert!(r.lambda_min > 0.0 && r.lower_bound_factor > 0.0);
    }
}
