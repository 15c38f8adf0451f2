//! Online row-sampling solver.
//!
//! Per query: `z = p * omega`, a sampling distribution over the `k d` rows of
//! `X = Z^{1/2} D Psi`, `c` iid draws, the reweighted Gram estimate
//! `G_hat = sum_t (z_t / (c xi_t)) a_t^T a_t` with `a_t` a row of `D Psi`, and
//! the `rho x rho` solve `G_hat r_hat = Psi^T b`. `X` is never formed.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_scaling, ParameterQuery, Scaling};
use crate::error::{Error, Result};
use crate::linalg::sorted_eigenvalues;
use crate::rng::query_rng;
use crate::subspace::{Basis, OfflineArtifact};

/// Relative eigenvalue floor below which `G_hat` counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionMode {
    /// `xi ~ z |a|^2`, the squared row norms of `X` (variance optimal).
    #[default]
    Prop33,
    /// `xi ~ z^{1/2} |a|`.
    Alg1,
    /// `xi = 1 / kd`.
    Uniform,
}

impl std::str::FromStr for DistributionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prop33" => Ok(Self::Prop33),
            "alg1" => Ok(Self::Alg1),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::InvalidArgument(format!("unknown distribution mode {other:?} (prop33, alg1, uniform)"))),
        }
    }
}

impl std::fmt::Display for DistributionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Prop33 => "prop33",
            Self::Alg1 => "alg1",
            Self::Uniform => "uniform",
        })
    }
}

/// Probability vector over rows with its cumulative table.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    xi: Vec<f64>,
    cdf: Vec<f64>,
}

impl SamplingDistribution {
    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("sampling weight {w} is not finite and nonnegative")));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyDistribution);
        }
        let xi: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cdf = xi
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(SamplingDistribution { xi, cdf })
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Inverse CDF at `u` in `[0, 1)`. Never returns a zero-probability index.
    pub fn index_at(&self, u: f64) -> usize {
        let target = u * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&v| v <= target);
        let mut i = i.min(self.len() - 1);
        while self.xi[i] == 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

pub fn sampling_distribution(s: &Scaling, row_norms: &[f64], dim: usize) -> Result<SamplingDistribution> {
    sampling_distribution_with(DistributionMode::Prop33, s, row_norms, dim)
}

pub fn sampling_distribution_with(
    mode: DistributionMode,
    s: &Scaling,
    row_norms: &[f64],
    dim: usize,
) -> Result<SamplingDistribution> {
    if s.z.len() * dim != row_norms.len() {
        return Err(Error::ShapeMismatch { what: "row norms", expected: s.z.len() * dim, got: row_norms.len() });
    }
    if row_norms.iter().all(|&r| r == 0.0) {
        return Err(Error::EmptyDistribution);
    }
    let weights = match mode {
        DistributionMode::Prop33 => {
            row_norms.iter().enumerate().map(|(r, &a)| s.row_weight(r, dim) * a * a).collect()
        }
        DistributionMode::Alg1 => {
            row_norms.iter().enumerate().map(|(r, &a)| s.row_weight(r, dim).sqrt() * a).collect()
        }
        DistributionMode::Uniform => vec![1.0; row_norms.len()],
    };
    SamplingDistribution::from_weights(weights)
}

/// `c` iid row indices drawn from stream `stream` of `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchPlan {
    pub c: usize,
    pub seed: u64,
    pub stream: u64,
    pub indices: Vec<usize>,
}

impl SketchPlan {
    /// `(row, count)` pairs in increasing row order.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut sorted = self.indices.clone();
        sorted.sort_unstable();
        let mut out: Vec<(usize, usize)> = Vec::new();
        for i in sorted {
            match out.last_mut() {
                Some((r, n)) if *r == i => *n += 1,
                _ => out.push((i, 1)),
            }
        }
        out
    }
}

pub fn draw(dist: &SamplingDistribution, c: usize, seed: u64, stream: u64) -> Result<SketchPlan> {
    if c == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = query_rng(seed, stream);
    let indices = (0..c).map(|_| dist.index_at(rng.gen::<f64>())).collect();
    Ok(SketchPlan { c, seed, stream, indices })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchedGram {
    pub ghat: DMatrix<f64>,
    pub c: usize,
    /// distinct rows touched
    pub distinct: usize,
}

/// `sum_t w_t a_t^T a_t` over `(row, w_t)` pairs, formed as `W^T W` with the
/// rows `sqrt(w_t) a_t` gathered as the columns of `W^T`; the result is
/// exactly symmetric.
fn weighted_gram(art: &OfflineArtifact, rows: &[(usize, f64)]) -> DMatrix<f64> {
    let rho = art.rho();
    let mut wt = DMatrix::<f64>::zeros(rho, rows.len());
    for (t, &(r, weight)) in rows.iter().enumerate() {
        let sw = weight.sqrt();
        for (x, &a) in wt.column_mut(t).iter_mut().zip(art.dpsi_row(r)) {
            *x = sw * a;
        }
    }
    let w = wt.transpose();
    let mut g = &wt * &w;
    for j in 0..rho {
        for i in 0..j {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

/// `G_hat = sum over distinct rows of (count / c) (z / xi) a a^T`.
pub fn sketch_gram(
    art: &OfflineArtifact,
    s: &Scaling,
    plan: &SketchPlan,
    dist: &SamplingDistribution,
) -> Result<SketchedGram> {
    if dist.len() != art.n_rows() {
        return Err(Error::ShapeMismatch { what: "sampling distribution", expected: art.n_rows(), got: dist.len() });
    }
    if s.z.len() != art.n_elements() {
        return Err(Error::ShapeMismatch { what: "scaling", expected: art.n_elements(), got: s.z.len() });
    }
    let dim = art.dim();
    let counts = plan.counts();
    let mut rows = Vec::with_capacity(counts.len());
    for &(r, n) in &counts {
        if r >= art.n_rows() {
            return Err(Error::IndexOutOfRange { what: "sample", index: r, len: art.n_rows() });
        }
        rows.push((r, n as f64 / plan.c as f64 * s.row_weight(r, dim) / dist.xi()[r]));
    }
    Ok(SketchedGram { ghat: weighted_gram(art, &rows), c: plan.c, distinct: counts.len() })
}

/// `G = X^T X = sum_l z_l a_l^T a_l`.
pub fn exact_gram(art: &OfflineArtifact, s: &Scaling) -> Result<DMatrix<f64>> {
    if s.z.len() != art.n_elements() {
        return Err(Error::ShapeMismatch { what: "scaling", expected: art.n_elements(), got: s.z.len() });
    }
    let rows: Vec<(usize, f64)> = (0..art.n_rows()).map(|r| (r, s.row_weight(r, art.dim()))).collect();
    Ok(weighted_gram(art, &rows))
}

/// Wall-clock nanoseconds per stage of one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub distribution: u64,
    pub sampling: u64,
    pub gram: u64,
    pub solve: u64,
    pub reconstruct: u64,
}

impl StageTimings {
    pub fn total(&self) -> u64 {
        self.distribution + self.sampling + self.gram + self.solve + self.reconstruct
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchedSolution {
    pub r_hat: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub timings: StageTimings,
    pub c: usize,
    pub distinct: usize,
    /// distinct rows over `k d`
    pub ratio: f64,
}

/// Solves `G r = rhs` for a symmetric `G` after a numerical rank check.
/// `samples` is reported in the error when the rank check fails.
pub fn solve_gram(g: &DMatrix<f64>, rhs: &[f64], samples: usize) -> Result<Vec<f64>> {
    let rho = g.nrows();
    if rhs.len() != rho {
        return Err(Error::ShapeMismatch { what: "Psi^T b", expected: rho, got: rhs.len() });
    }
    let deficient = || {
        let eig = sorted_eigenvalues(g);
        let top = eig.last().copied().unwrap_or(0.0).abs();
        let rank = eig.iter().filter(|&&l| l > RANK_TOL * top).count();
        Error::InsufficientSamples { rank: rank.min(rho - 1), rho, samples }
    };
    if rho == 0 {
        return Ok(Vec::new());
    }
    let chol = Cholesky::new(g.clone()).ok_or_else(deficient)?;
    let (lmin, lmax) = extreme_eigenvalues(g, &chol);
    if !(lmin > RANK_TOL * lmax) {
        return Err(deficient());
    }
    Ok(chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect())
}

/// Estimates of `(lambda_min, lambda_max)` of an SPD matrix by inverse and
/// direct power iteration, the former through its Cholesky factor.
fn extreme_eigenvalues(g: &DMatrix<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> (f64, f64) {
    let n = g.nrows();
    let start = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 101) as f64 / 101.0).normalize();
    let mut v = start.clone();
    let mut lmax = 0.0;
    for _ in 0..40 {
        let w = g * &v;
        let est = v.dot(&w);
        let nw = w.norm();
        if nw == 0.0 {
            break;
        }
        v = w / nw;
        if (est - lmax).abs() <= 1e-6 * est.abs() {
            lmax = est;
            break;
        }
        lmax = est;
    }
    let mut v = start;
    let mut inv = 0.0;
    for _ in 0..40 {
        let w = chol.solve(&v);
        let est = v.dot(&w);
        let nw = w.norm();
        if !nw.is_finite() || nw == 0.0 {
            return (0.0, lmax);
        }
        v = w / nw;
        if (est - inv).abs() <= 1e-6 * est.abs() {
            inv = est;
            break;
        }
        inv = est;
    }
    let lmin = if inv > 0.0 { 1.0 / inv } else { 0.0 };
    (lmin, lmax)
}

pub fn solve_sketched(g: &SketchedGram, psi_tb: &[f64], basis: &Basis) -> Result<SketchedSolution> {
    let rho = g.ghat.nrows();
    if g.distinct < rho {
        return Err(Error::InsufficientSamples { rank: g.distinct, rho, samples: g.c });
    }
    let t = Instant::now();
    let r_hat = solve_gram(&g.ghat, psi_tb, g.c)?;
    let solve = t.elapsed().as_nanos() as u64;
    let t = Instant::now();
    let u_hat = basis.reconstruct(&r_hat);
    let reconstruct = t.elapsed().as_nanos() as u64;
    Ok(SketchedSolution {
        r_hat,
        u_hat,
        timings: StageTimings { solve, reconstruct, ..Default::default() },
        c: g.c,
        distinct: g.distinct,
        ratio: 0.0,
    })
}

/// Everything produced by one sketched query, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub scaling: Scaling,
    pub dist: SamplingDistribution,
    pub plan: SketchPlan,
    pub gram: SketchedGram,
    pub solution: SketchedSolution,
}

/// Algorithm for one parameter vector: scaling, distribution, draws, Gram,
/// solve and reconstruction, each timed.
pub fn solve_query(
    art: &OfflineArtifact,
    p: &ParameterQuery,
    c: usize,
    mode: DistributionMode,
    seed: u64,
    stream: u64,
) -> Result<QueryOutcome> {
    let t = Instant::now();
    let scaling = assemble_scaling(p, &art.omega)?;
    let dist = sampling_distribution_with(mode, &scaling, &art.row_norms, art.dim())?;
    let t_dist = t.elapsed().as_nanos() as u64;
    let t = Instant::now();
    let plan = draw(&dist, c, seed, stream)?;
    let t_sample = t.elapsed().as_nanos() as u64;
    let t = Instant::now();
    let gram = sketch_gram(art, &scaling, &plan, &dist)?;
    let t_gram = t.elapsed().as_nanos() as u64;
    let mut solution = solve_sketched(&gram, &art.psi_tb, &art.basis)?;
    solution.timings.distribution = t_dist;
    solution.timings.sampling = t_sample;
    solution.timings.gram = t_gram;
    solution.ratio = gram.distinct as f64 / art.n_rows() as f64;
    Ok(QueryOutcome { scaling, dist, plan, gram, solution })
}

/// Closed-form second moments of the estimator for one `(Z, xi)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceTerms {
    /// `sum_l z_l |a_l|`
    pub sum_z_norm: f64,
    /// `sum_l z_l |a_l|^2 = ||X||_F^2`
    pub sum_z_norm2: f64,
    /// `sum_l z_l^2 |a_l|^4 / xi_l` (infinite if a nonzero row has `xi = 0`)
    pub weighted_fourth: f64,
    /// `||G||_F^2`
    pub g_fro2: f64,
}

impl VarianceTerms {
    /// `E ||G - G_hat||_F^2 = (1/c)(sum z^2 |a|^4 / xi - ||G||_F^2)`.
    pub fn exact_variance(&self, c: usize) -> f64 {
        (self.weighted_fourth - self.g_fro2) / c as f64
    }

    /// `(1/c)((sum_l z_l |a_l|)^2 - ||G||_F^2)`.
    pub fn published_bound(&self, c: usize) -> f64 {
        (self.sum_z_norm * self.sum_z_norm - self.g_fro2) / c as f64
    }

    /// Exact variance of the optimal distribution: `(1/c)(||X||_F^4 - ||G||_F^2)`.
    pub fn optimal_variance(&self, c: usize) -> f64 {
        (self.sum_z_norm2 * self.sum_z_norm2 - self.g_fro2) / c as f64
    }
}

pub fn variance_terms(
    art: &OfflineArtifact,
    s: &Scaling,
    dist: &SamplingDistribution,
    g: &DMatrix<f64>,
) -> VarianceTerms {
    let dim = art.dim();
    let mut t = VarianceTerms { sum_z_norm: 0.0, sum_z_norm2: 0.0, weighted_fourth: 0.0, g_fro2: g.norm_squared() };
    for (r, &a) in art.row_norms.iter().enumerate() {
        let z = s.row_weight(r, dim);
        t.sum_z_norm += z * a;
        t.sum_z_norm2 += z * a * a;
        let num = z * z * a.powi(4);
        if num > 0.0 {
            let xi = dist.xi()[r];
            t.weighted_fourth += if xi > 0.0 { num / xi } else { f64::INFINITY };
        }
    }
    t
}

/// Entrywise `Var[G_hat_ij] = (1/c)(sum_l z_l^2 a_li^2 a_lj^2 / xi_l - G_ij^2)`.
pub fn entry_variance(
    art: &OfflineArtifact,
    s: &Scaling,
    dist: &SamplingDistribution,
    g: &DMatrix<f64>,
    c: usize,
) -> DMatrix<f64> {
    let rho = art.rho();
    let mut m = DMatrix::<f64>::zeros(rho, rho);
    for r in 0..art.n_rows() {
        let xi = dist.xi()[r];
        let a = art.dpsi_row(r);
        let z = s.row_weight(r, art.dim());
        if xi == 0.0 {
            continue;
        }
        let w = z * z / xi;
        for j in 0..rho {
            for i in 0..rho {
                m[(i, j)] += w * a[i] * a[i] * a[j] * a[j];
            }
        }
    }
    m.zip_map(g, |s2, gij| (s2 - gij * gij) / c as f64)
}

/// Upper bounds on `sigma_1(G_hat)`: `sum_l z_l |a_l|^2` and `d p_Omega ||D||^2`.
pub fn spectral_caps(art: &OfflineArtifact, s: &Scaling, d_norm: f64) -> (f64, f64) {
    let dim = art.dim();
    let first: f64 = art.row_norms.iter().enumerate().map(|(r, a)| s.row_weight(r, dim) * a * a).sum();
    let p_omega: f64 = s.z.iter().sum();
    (first, dim as f64 * p_omega * d_norm * d_norm)
}
