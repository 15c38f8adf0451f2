use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sketchfem::analysis::{error_breakdown, sample_budget, BudgetForm, ErrorBreakdown};
use sketchfem::artifact;
use sketchfem::assembly::{assemble_scaling, ExactSolver, ParameterQuery, StiffnessAssembler};
use sketchfem::sketch::{exact_gram, solve_gram, solve_query, DistributionMode, StageTimings};
use sketchfem::subspace::OfflineArtifact;

use crate::config::{worker_pool, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{mean, median, num, write_csv, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct SolveConfig {
    pub artifact: PathBuf,
    pub queries: PathBuf,
    /// fixed sample count; when absent it comes from the sample budget
    pub samples: Option<usize>,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub dist_mode: DistributionMode,
    pub exact: bool,
    /// use the exact Gram matrix instead of a sketch
    pub exact_gram: bool,
    pub out: PathBuf,
}

/// Reads one parameter vector per CSV record; `#` lines and an optional
/// non-numeric header row are skipped. Errors name the file line.
pub fn read_queries(path: &Path, k: usize) -> CliResult<Vec<ParameterQuery>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut out = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = raw.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(_) => {
                return Err(CliError::Data(format!("{}:{line}: non-numeric parameter value", path.display())));
            }
        };
        first = false;
        if values.len() != k {
            return Err(CliError::Data(format!(
                "{}:{line}: query has {} values, the mesh has {k} elements",
                path.display(),
                values.len()
            )));
        }
        let q = ParameterQuery::new(values).map_err(|e| CliError::Data(format!("{}:{line}: {e}", path.display())))?;
        out.push(q);
    }
    if out.is_empty() {
        return Err(CliError::Data(format!("{}: no queries", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExactComparison {
    pub breakdown: ErrorBreakdown,
    /// `||u_hat - u*|| / ||u*||`
    pub rel_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryResult {
    pub query: usize,
    pub ok: bool,
    pub error: Option<String>,
    pub c: usize,
    pub distinct: usize,
    pub ratio: f64,
    pub exact: Option<ExactComparison>,
    #[serde(skip)]
    pub u_hat: Option<Vec<f64>>,
    #[serde(skip)]
    pub timings: StageTimings,
    #[serde(skip)]
    pub exact_ns: Option<u64>,
}

impl QueryResult {
    fn failed(query: usize, c: usize, e: &sketchfem::Error) -> Self {
        QueryResult {
            query,
            ok: false,
            error: Some(e.to_string()),
            c,
            distinct: 0,
            ratio: 0.0,
            exact: None,
            u_hat: None,
            timings: StageTimings::default(),
            exact_ns: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub queries: Vec<QueryResult>,
}

#[derive(Serialize)]
struct TimingRecord {
    query: usize,
    stages_ns: StageTimings,
    sketch_ns: u64,
    exact_ns: Option<u64>,
}

#[derive(Serialize)]
struct TimingReport {
    queries: Vec<TimingRecord>,
    mean_sketch_ns: f64,
    median_sketch_ns: f64,
    mean_exact_ns: Option<f64>,
    median_exact_ns: Option<f64>,
}

fn budget_or_fixed(cfg: &SolveConfig, art: &OfflineArtifact, p: &ParameterQuery) -> sketchfem::Result<usize> {
    if let Some(c) = cfg.samples {
        return Ok(c);
    }
    let s = assemble_scaling(p, &art.omega)?;
    let g = exact_gram(art, &s)?;
    Ok(sample_budget(cfg.epsilon, cfg.delta, &s, art, &g, BudgetForm::Published)?.c)
}

fn solve_one(
    cfg: &SolveConfig,
    art: &OfflineArtifact,
    solver: Option<&ExactSolver>,
    i: usize,
    p: &ParameterQuery,
) -> CliResult<QueryResult> {
    let c = match budget_or_fixed(cfg, art, p) {
        Ok(c) => c,
        Err(e) if e.is_numerical() => return Ok(QueryResult::failed(i, 0, &e)),
        Err(e) => return Err(e.into()),
    };
    let (r_hat, u_hat, timings, distinct) = if cfg.exact_gram {
        let t = Instant::now();
        let s = assemble_scaling(p, &art.omega)?;
        let g = exact_gram(art, &s)?;
        let r_hat = match solve_gram(&g, &art.psi_tb, art.n_rows()) {
            Ok(r) => r,
            Err(e) if e.is_numerical() => return Ok(QueryResult::failed(i, art.n_rows(), &e)),
            Err(e) => return Err(e.into()),
        };
        let u_hat = art.basis.reconstruct(&r_hat);
        let timings = StageTimings { solve: t.elapsed().as_nanos() as u64, ..Default::default() };
        (r_hat, u_hat, timings, art.n_rows())
    } else {
        match solve_query(art, p, c, cfg.dist_mode, cfg.seed, i as u64) {
            Ok(o) => (o.solution.r_hat, o.solution.u_hat, o.solution.timings, o.solution.distinct),
            Err(e) if e.is_numerical() => return Ok(QueryResult::failed(i, c, &e)),
            Err(e) => return Err(e.into()),
        }
    };
    let c = if cfg.exact_gram { art.n_rows() } else { c };
    let (exact, exact_ns) = match solver {
        Some(solver) => {
            let s = assemble_scaling(p, &art.omega)?;
            let t = Instant::now();
            let a = solver.assembler().assemble(&s)?;
            let u = solver.solve_assembled(&a, &art.b)?;
            let ns = t.elapsed().as_nanos() as u64;
            let g = exact_gram(art, &s)?;
            let r = solve_gram(&g, &art.psi_tb, 0)?;
            let breakdown = error_breakdown(&u, &art.basis, &r, &r_hat, &a, &g, None)?;
            (Some(ExactComparison { rel_total: breakdown.rel_total, breakdown }), Some(ns))
        }
        None => (None, None),
    };
    Ok(QueryResult {
        query: i,
        ok: true,
        error: None,
        c,
        distinct,
        ratio: distinct as f64 / art.n_rows() as f64,
        exact,
        u_hat: Some(u_hat),
        timings,
        exact_ns,
    })
}

/// Nodal values with eliminated nodes set to zero.
fn nodal(art: &OfflineArtifact, u: &[f64]) -> Vec<f64> {
    art.header.dof_map.iter().map(|&code| if code >= 0 { u[code as usize] } else { 0.0 }).collect()
}

/// Solves every query without writing output.
pub fn execute(cfg: &SolveConfig, art: &OfflineArtifact, queries: &[ParameterQuery]) -> CliResult<SolveReport> {
    if cfg.samples == Some(0) {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let solver = if cfg.exact {
        Some(ExactSolver::new(StiffnessAssembler::from_matrix(art.d.clone(), art.dim())?)?)
    } else {
        None
    };
    let results: CliResult<Vec<QueryResult>> = worker_pool()?.install(|| {
        queries.par_iter().enumerate().map(|(i, p)| solve_one(cfg, art, solver.as_ref(), i, p)).collect()
    });
    let queries = results?;
    for q in queries.iter().filter(|q| !q.ok) {
        log::warn!("query {}: {}", q.query, q.error.as_deref().unwrap_or("failed"));
    }
    Ok(SolveReport { queries })
}

pub fn run(cfg: &SolveConfig) -> CliResult<SolveReport> {
    let art = artifact::load(&cfg.artifact)?;
    let queries = read_queries(&cfg.queries, art.n_elements())?;
    let report = execute(cfg, &art, &queries)?;
    let config = RunConfig::Solve(cfg.clone());
    let rows = report.queries.iter().filter_map(|q| q.u_hat.as_ref().map(|u| (q.query, nodal(&art, u))));
    let rows = rows.flat_map(|(q, u)| {
        u.into_iter().enumerate().map(move |(node, v)| vec![q.to_string(), node.to_string(), num(v)])
    });
    write_csv(&cfg.out.join("u_hat.csv"), &config, &["query", "node", "value"], rows)?;
    write_json(&cfg.out.join("diagnostics.json"), &config, &report)?;
    let sketch: Vec<f64> = report.queries.iter().filter(|q| q.ok).map(|q| q.timings.total() as f64).collect();
    let exact: Vec<f64> = report.queries.iter().filter_map(|q| q.exact_ns.map(|t| t as f64)).collect();
    let timing = TimingReport {
        queries: report
            .queries
            .iter()
            .map(|q| TimingRecord {
                query: q.query,
                stages_ns: q.timings,
                sketch_ns: q.timings.total(),
                exact_ns: q.exact_ns,
            })
            .collect(),
        mean_sketch_ns: mean(&sketch),
        median_sketch_ns: median(&sketch),
        mean_exact_ns: (!exact.is_empty()).then(|| mean(&exact)),
        median_exact_ns: (!exact.is_empty()).then(|| median(&exact)),
    };
    write_json(&cfg.out.join("timing.json"), &config, &timing)?;
    let failed = report.queries.iter().filter(|q| !q.ok).count();
    log::info!("solved {} of {} queries", report.queries.len() - failed, report.queries.len());
    Ok(report)
}
