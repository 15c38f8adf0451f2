use std::path::{Path, PathBuf};

use serde::Serialize;
use sketchfem::artifact;
use sketchfem::assembly::{assemble_load, GradientFactor, ProblemKind, Scaling};
use sketchfem::subspace::{laplacian, precompute, smallest_eigvecs, OfflineArtifact, OrderingCheck};

use crate::config::{resolve_problem, DataChoice, MeshSource, Problem, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::write_json;

#[derive(Debug, Clone, Serialize)]
pub struct PrecomputeConfig {
    pub mesh: MeshSource,
    pub problem: Option<Problem>,
    /// defaults to the desk preset matching the problem
    pub data: Option<DataChoice>,
    pub rho: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrecomputeReport {
    pub problem: ProblemKind,
    pub n_dof: usize,
    pub n_rows: usize,
    pub rho: usize,
    pub data_hash: Option<String>,
    pub eigenvalues: Vec<f64>,
    pub eigen_residuals: Vec<f64>,
    pub max_eigen_residual: f64,
    pub ordering: OrderingCheck,
}

/// Sidecar report path: the artifact path with `.json` appended.
pub fn report_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Builds the artifact in memory without writing anything.
pub fn build(cfg: &PrecomputeConfig) -> CliResult<(OfflineArtifact, PrecomputeReport)> {
    if cfg.rho == 0 {
        return Err(CliError::Usage("--rho must be at least 1".into()));
    }
    let mesh = cfg.mesh.load()?;
    let problem = resolve_problem(cfg.problem, &mesh);
    let data = cfg.data.clone().unwrap_or_else(|| DataChoice::default_for(problem)).resolve()?;
    if !data.dirichlet_value.is_zero() {
        return Err(CliError::Data(
            "nonzero Dirichlet data makes the load vector depend on the parameter; only homogeneous Dirichlet data can be precomputed".into(),
        ));
    }
    let dm = GradientFactor::new(&mesh, problem)?;
    let b = assemble_load(&mesh, &data.sample(&mesh), &dm, &Scaling::ones(mesh.n_elements()))?;
    let basis = smallest_eigvecs(&laplacian(&dm), cfg.rho)?;
    let art = precompute(&dm, &basis, &b, &mesh.element_volumes()?, Some(data.hash()))?;
    let residuals = art.header.eigen_residuals.clone();
    let report = PrecomputeReport {
        problem,
        n_dof: art.n_dof(),
        n_rows: art.n_rows(),
        rho: art.rho(),
        data_hash: art.header.data_hash.clone(),
        eigenvalues: art.header.eigenvalues.clone(),
        max_eigen_residual: residuals.iter().copied().fold(0.0, f64::max),
        eigen_residuals: residuals,
        ordering: art.ordering_check(),
    };
    Ok((art, report))
}

pub fn run(cfg: &PrecomputeConfig) -> CliResult<PrecomputeReport> {
    let (art, report) = build(cfg)?;
    log::info!(
        "basis: rho = {}, n_dof = {}, max eigen residual {:e}",
        report.rho,
        report.n_dof,
        report.max_eigen_residual
    );
    let ord = &report.ordering;
    if ord.holds() {
        log::info!("column norms of D Psi are non-decreasing ({} ties)", ord.ties);
    } else {
        log::warn!("column norms of D Psi decrease at {} adjacent pairs", ord.violations);
    }
    crate::output::ensure_parent(&cfg.out)?;
    artifact::save(&art, &cfg.out)?;
    write_json(&report_path(&cfg.out), &RunConfig::Precompute(cfg.clone()), &report)?;
    Ok(report)
}
