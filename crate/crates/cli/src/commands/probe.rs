//! Sweep of the distance between leverage-score and row-norm sampling
//! distributions over the basis size, averaged over random parameters.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use sketchfem::analysis::{
    distribution_distance_with_y, matrix_distance, weighted_gradient_matrix, DistancePair, MatrixTag,
};
use sketchfem::assembly::{assemble_scaling, GradientFactor, LoadVector, ParameterQuery};
use sketchfem::subspace::{laplacian, precompute, smallest_eigvecs};

use crate::config::{resolve_problem, worker_pool, MeshSource, Problem, RunConfig, Sampler};
use crate::error::{CliError, CliResult};
use crate::output::{mean, num, write_csv};

#[derive(Debug, Clone, Serialize)]
pub struct ProbeConfig {
    pub mesh: MeshSource,
    pub problem: Option<Problem>,
    /// empty means 1, 5, 10, ... up to half the dof count
    pub rho: Vec<usize>,
    pub sampler: Sampler,
    pub draws: usize,
    pub seed: u64,
    pub out: PathBuf,
}

/// Draw-averaged distances and bounds at one `rho`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub rho: usize,
    pub dist_x_2: f64,
    pub dist_x_max: f64,
    pub dist_y_2: f64,
    pub dist_y_max: f64,
    pub bound_x_2: f64,
    pub bound_x_max: f64,
}

pub const HEADER: [&str; 7] = ["rho", "dist_X_2", "dist_X_max", "dist_Y_2", "dist_Y_max", "bound_X_2", "bound_X_max"];

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub n_dof: usize,
    pub rows: Vec<ProbeRow>,
    /// `pairs[d][j]`: draw `d` at the `j`-th swept `rho`
    pub pairs: Vec<Vec<DistancePair>>,
}

pub fn default_sweep(n_dof: usize) -> Vec<usize> {
    let top = (n_dof / 2).max(1);
    std::iter::once(1).chain((5..=top).step_by(5)).collect()
}

pub fn execute(cfg: &ProbeConfig) -> CliResult<ProbeReport> {
    if cfg.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let mesh = cfg.mesh.load()?;
    let dm = GradientFactor::new(&mesh, resolve_problem(cfg.problem, &mesh))?;
    let n_dof = dm.n_dof();
    let sweep = if cfg.rho.is_empty() { default_sweep(n_dof) } else { cfg.rho.clone() };
    let max_rho = sweep.iter().copied().max().unwrap_or(1);
    if sweep.contains(&0) || max_rho > n_dof {
        return Err(CliError::Usage(format!("--rho values must lie in 1..={n_dof}")));
    }
    let basis = smallest_eigvecs(&laplacian(&dm), max_rho)?;
    let zero = LoadVector { b: vec![0.0; n_dof], fingerprint: mesh.fingerprint() };
    let art = precompute(&dm, &basis, &zero, &mesh.element_volumes()?, None)?;
    let pairs: CliResult<Vec<Vec<DistancePair>>> = worker_pool()?.install(|| {
        (0..cfg.draws)
            .into_par_iter()
            .map(|d| {
                let p = ParameterQuery::new(cfg.sampler.draw(art.n_elements(), cfg.seed, d as u64))?;
                let s = assemble_scaling(&p, &art.omega)?;
                let y = matrix_distance(&weighted_gradient_matrix(&art, &s)?, MatrixTag::Y)?;
                let row = sweep
                    .iter()
                    .map(|&rho| distribution_distance_with_y(&art, &s, rho, y.clone()))
                    .collect::<sketchfem::Result<Vec<_>>>()?;
                Ok(row)
            })
            .collect()
    });
    let pairs = pairs?;
    let rows = sweep
        .iter()
        .enumerate()
        .map(|(j, &rho)| {
            let avg = |f: fn(&DistancePair) -> f64| mean(&pairs.iter().map(|d| f(&d[j])).collect::<Vec<_>>());
            ProbeRow {
                rho,
                dist_x_2: avg(|p| p.x.two_norm),
                dist_x_max: avg(|p| p.x.max_norm),
                dist_y_2: avg(|p| p.y.two_norm),
                dist_y_max: avg(|p| p.y.max_norm),
                bound_x_2: avg(|p| p.x.bound_two),
                bound_x_max: avg(|p| p.x.bound_max),
            }
        })
        .collect();
    Ok(ProbeReport { n_dof, rows, pairs })
}

pub fn run(cfg: &ProbeConfig) -> CliResult<ProbeReport> {
    let report = execute(cfg)?;
    let rows = report.rows.iter().map(|r| {
        vec![
            r.rho.to_string(),
            num(r.dist_x_2),
            num(r.dist_x_max),
            num(r.dist_y_2),
            num(r.dist_y_max),
            num(r.bound_x_2),
            num(r.bound_x_max),
        ]
    });
    write_csv(&cfg.out, &RunConfig::Probe(cfg.clone()), &HEADER, rows)?;
    Ok(report)
}
