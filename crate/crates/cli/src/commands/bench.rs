//! Many-query benchmark: random parameters, sketched and exact solves, and
//! per-configuration error statistics.
//!
//! `bench.csv`, `queries.csv` and `histograms.csv` hold only quantities that
//! are a function of the config and seed. Wall-clock measurements go to
//! `bench_timing.json`.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sketchfem::analysis::{error_breakdown_with, sample_budget, BudgetForm};
use sketchfem::artifact;
use sketchfem::assembly::{assemble_scaling, ExactSolver, ParameterQuery, StiffnessAssembler};
use sketchfem::linalg::{lanczos_max_eigenvalue, norm, sorted_eigenvalues, sub};
use sketchfem::sketch::{exact_gram, solve_gram, solve_query, DistributionMode, StageTimings};
use sketchfem::subspace::OfflineArtifact;

use crate::config::{worker_pool, RunConfig, Sampler};
use crate::error::{CliError, CliResult};
use crate::output::{histogram, mean, median, num, write_csv, write_json};

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub artifact: PathBuf,
    pub label: String,
    /// basis sizes; empty means the artifact's own
    pub rho: Vec<usize>,
    pub samples: Vec<usize>,
    pub queries: usize,
    pub sampler: Sampler,
    pub seed: u64,
    pub dist_mode: DistributionMode,
    pub epsilon: f64,
    pub delta: f64,
    pub bins: usize,
    pub out: PathBuf,
}

impl BenchConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.samples.is_empty() || self.samples.contains(&0) {
            return Err(CliError::Usage("--samples needs one or more positive counts".into()));
        }
        if self.queries == 0 {
            return Err(CliError::Usage("--queries must be at least 1".into()));
        }
        if self.rho.contains(&0) {
            return Err(CliError::Usage("--rho values must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CliError::Usage("--epsilon must be positive and --delta in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One sketched solve of one query under one `(rho, c)` configuration.
#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub rho: usize,
    pub c: usize,
    pub error: Option<String>,
    pub distinct: usize,
    pub ratio: f64,
    pub rel_projection: f64,
    pub rel_subspace: f64,
    pub rel_simulation: f64,
    pub rel_total: f64,
    /// `||G_hat - G||_F / ||G||_F`
    pub rel_gram_error: f64,
    /// `||r_hat - r|| / ||r||`
    pub rel_r_error: f64,
    pub kappa_g: f64,
    pub realized_epsilon: f64,
    /// `(lambda_max(A) / lambda_min(G)) ||u - Pi u|| + realized_eps ||Psi r||`
    pub total_bound: f64,
    pub total_bound_holds: bool,
    pub subspace_bound_holds: bool,
    /// published-form budget for `(epsilon, delta)`; absent when `G` is too
    /// ill-conditioned
    pub budget: Option<usize>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl Sample {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn sketch_ns(&self) -> u64 {
        self.timings.total()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRun {
    pub query: usize,
    pub samples: Vec<Sample>,
    #[serde(skip)]
    pub exact_ns: u64,
}

/// Means over the queries that solved successfully.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub label: String,
    pub rho: usize,
    pub c: usize,
    pub queries: usize,
    pub failures: usize,
    /// sum of per-query sketched solve times, seconds
    pub wall_time_s: f64,
    pub ratio: f64,
    pub rel_projection: f64,
    pub rel_gram_error: f64,
    pub kappa_g: f64,
    pub rel_r_error: f64,
    pub rel_total: f64,
    pub rel_subspace: f64,
    pub rel_simulation: f64,
    /// queries whose total error is within the per-query bound
    pub total_bound_holds: usize,
    /// queries with realized epsilon at most the configured epsilon
    pub epsilon_holds: usize,
    pub mean_budget: f64,
}

const ROW_HEADER: [&str; 16] = [
    "label",
    "rho",
    "c",
    "queries",
    "failures",
    "ratio",
    "rel_projection",
    "rel_gram_error",
    "kappa_g",
    "rel_r_error",
    "rel_total",
    "rel_subspace",
    "rel_simulation",
    "total_bound_holds",
    "epsilon_holds",
    "mean_budget",
];

impl BenchRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.label.clone(),
            self.rho.to_string(),
            self.c.to_string(),
            self.queries.to_string(),
            self.failures.to_string(),
            num(self.ratio),
            num(self.rel_projection),
            num(self.rel_gram_error),
            num(self.kappa_g),
            num(self.rel_r_error),
            num(self.rel_total),
            num(self.rel_subspace),
            num(self.rel_simulation),
            self.total_bound_holds.to_string(),
            self.epsilon_holds.to_string(),
            num(self.mean_budget),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub runs: Vec<QueryRun>,
    /// exact assemble-and-solve time per query, nanoseconds
    pub exact_ns: Vec<u64>,
}

impl BenchReport {
    /// Samples of configuration `idx` (in row order) across queries.
    pub fn samples(&self, idx: usize) -> impl Iterator<Item = &Sample> {
        self.runs.iter().map(move |r| &r.samples[idx])
    }
}

fn relative(x: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        x / scale
    } else {
        0.0
    }
}

fn run_query(
    cfg: &BenchConfig,
    arts: &[OfflineArtifact],
    solver: &ExactSolver,
    b: &[f64],
    i: usize,
) -> CliResult<QueryRun> {
    let k = arts[0].n_elements();
    let p = ParameterQuery::new(cfg.sampler.draw(k, cfg.seed, i as u64))?;
    let s = assemble_scaling(&p, &arts[0].omega)?;
    let t = Instant::now();
    let a = solver.assembler().assemble(&s)?;
    let u = solver.solve_assembled(&a, b)?;
    let exact_ns = t.elapsed().as_nanos() as u64;
    let lambda_max_a = lanczos_max_eigenvalue(&a.matrix, 300);
    let mut samples = Vec::new();
    for art in arts {
        let g = exact_gram(art, &s)?;
        let g_eig = sorted_eigenvalues(&g);
        let kappa_g = g_eig[g_eig.len() - 1] / g_eig[0];
        let budget = sample_budget(cfg.epsilon, cfg.delta, &s, art, &g, BudgetForm::Published).ok().map(|b| b.c);
        let r = solve_gram(&g, &art.psi_tb, 0)?;
        for &c in &cfg.samples {
            let sample = match solve_query(art, &p, c, cfg.dist_mode, cfg.seed, i as u64) {
                Ok(o) => {
                    let bd = error_breakdown_with(&u, &art.basis, &r, &o.solution.r_hat, lambda_max_a, &g)?;
                    Sample {
                        rho: art.rho(),
                        c,
                        error: None,
                        distinct: o.solution.distinct,
                        ratio: o.solution.ratio,
                        rel_projection: bd.rel_projection,
                        rel_subspace: bd.rel_subspace,
                        rel_simulation: bd.rel_simulation,
                        rel_total: bd.rel_total,
                        rel_gram_error: relative((&o.gram.ghat - &g).norm(), g.norm()),
                        rel_r_error: relative(norm(&sub(&o.solution.r_hat, &r)), norm(&r)),
                        kappa_g,
                        realized_epsilon: bd.realized_epsilon,
                        total_bound: bd.total_bound,
                        total_bound_holds: bd.total_bound_holds,
                        subspace_bound_holds: bd.subspace_bound_holds,
                        budget,
                        timings: o.solution.timings,
                    }
                }
                Err(e) if e.is_numerical() => Sample {
                    rho: art.rho(),
                    c,
                    error: Some(e.to_string()),
                    distinct: 0,
                    ratio: f64::NAN,
                    rel_projection: f64::NAN,
                    rel_subspace: f64::NAN,
                    rel_simulation: f64::NAN,
                    rel_total: f64::NAN,
                    rel_gram_error: f64::NAN,
                    rel_r_error: f64::NAN,
                    kappa_g,
                    realized_epsilon: f64::NAN,
                    total_bound: f64::NAN,
                    total_bound_holds: false,
                    subspace_bound_holds: false,
                    budget,
                    timings: StageTimings::default(),
                },
                Err(e) => return Err(e.into()),
            };
            samples.push(sample);
        }
    }
    Ok(QueryRun { query: i, samples, exact_ns })
}

fn aggregate(cfg: &BenchConfig, runs: &[QueryRun], idx: usize) -> BenchRow {
    let all: Vec<&Sample> = runs.iter().map(|r| &r.samples[idx]).collect();
    let ok: Vec<&Sample> = all.iter().copied().filter(|s| s.ok()).collect();
    let m = |f: fn(&Sample) -> f64| mean(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
    let budgets: Vec<f64> = all.iter().filter_map(|s| s.budget.map(|b| b as f64)).collect();
    BenchRow {
        label: cfg.label.clone(),
        rho: all[0].rho,
        c: all[0].c,
        queries: all.len(),
        failures: all.len() - ok.len(),
        wall_time_s: ok.iter().map(|s| s.sketch_ns()).sum::<u64>() as f64 * 1e-9,
        ratio: m(|s| s.ratio),
        rel_projection: m(|s| s.rel_projection),
        rel_gram_error: m(|s| s.rel_gram_error),
        kappa_g: mean(&all.iter().map(|s| s.kappa_g).collect::<Vec<_>>()),
        rel_r_error: m(|s| s.rel_r_error),
        rel_total: m(|s| s.rel_total),
        rel_subspace: m(|s| s.rel_subspace),
        rel_simulation: m(|s| s.rel_simulation),
        total_bound_holds: ok.iter().filter(|s| s.total_bound_holds).count(),
        epsilon_holds: ok.iter().filter(|s| s.realized_epsilon <= cfg.epsilon).count(),
        mean_budget: mean(&budgets),
    }
}

/// Runs the benchmark on a loaded artifact without writing output.
pub fn execute(cfg: &BenchConfig, art: &OfflineArtifact) -> CliResult<BenchReport> {
    cfg.validate()?;
    let rhos = if cfg.rho.is_empty() { vec![art.rho()] } else { cfg.rho.clone() };
    let arts = rhos.iter().map(|&r| art.truncated(r)).collect::<sketchfem::Result<Vec<_>>>()?;
    let solver = ExactSolver::new(StiffnessAssembler::from_matrix(art.d.clone(), art.dim())?)?;
    let runs: CliResult<Vec<QueryRun>> = worker_pool()?.install(|| {
        (0..cfg.queries).into_par_iter().map(|i| run_query(cfg, &arts, &solver, &art.b, i)).collect()
    });
    let runs = runs?;
    let n_configs = rhos.len() * cfg.samples.len();
    let rows = (0..n_configs).map(|idx| aggregate(cfg, &runs, idx)).collect();
    let exact_ns = runs.iter().map(|r| r.exact_ns).collect();
    Ok(BenchReport { rows, runs, exact_ns })
}

const HIST_QUANTITIES: [(&str, fn(&Sample) -> f64); 5] = [
    ("rel_projection", |s| s.rel_projection),
    ("rel_subspace", |s| s.rel_subspace),
    ("rel_simulation", |s| s.rel_simulation),
    ("rel_total", |s| s.rel_total),
    ("kappa_g", |s| s.kappa_g),
];

#[derive(Serialize)]
struct ConfigTiming {
    rho: usize,
    c: usize,
    wall_time_s: f64,
    mean_sketch_ns: f64,
    median_sketch_ns: f64,
    median_distribution_ns: f64,
    median_sampling_ns: f64,
    median_gram_ns: f64,
    median_solve_ns: f64,
    median_reconstruct_ns: f64,
    /// median exact time over median sketched time
    speedup: f64,
}

#[derive(Serialize)]
struct TimingReport {
    exact_wall_time_s: f64,
    mean_exact_ns: f64,
    median_exact_ns: f64,
    configs: Vec<ConfigTiming>,
}

pub fn run(cfg: &BenchConfig) -> CliResult<BenchReport> {
    cfg.validate()?;
    let art = artifact::load(&cfg.artifact)?;
    let report = execute(cfg, &art)?;
    let config = RunConfig::Bench(cfg.clone());
    write_csv(&cfg.out.join("bench.csv"), &config, &ROW_HEADER, report.rows.iter().map(BenchRow::record))?;

    let header = [
        "query",
        "rho",
        "c",
        "status",
        "distinct",
        "ratio",
        "rel_projection",
        "rel_subspace",
        "rel_simulation",
        "rel_total",
        "rel_gram_error",
        "rel_r_error",
        "kappa_g",
        "realized_epsilon",
        "total_bound",
        "total_bound_holds",
    ];
    let rows = report.runs.iter().flat_map(|run| {
        run.samples.iter().map(move |s| {
            vec![
                run.query.to_string(),
                s.rho.to_string(),
                s.c.to_string(),
                if s.ok() { "ok".into() } else { "insufficient".into() },
                s.distinct.to_string(),
                num(s.ratio),
                num(s.rel_projection),
                num(s.rel_subspace),
                num(s.rel_simulation),
                num(s.rel_total),
                num(s.rel_gram_error),
                num(s.rel_r_error),
                num(s.kappa_g),
                num(s.realized_epsilon),
                num(s.total_bound),
                s.total_bound_holds.to_string(),
            ]
        })
    });
    write_csv(&cfg.out.join("queries.csv"), &config, &header, rows)?;

    let mut hist = Vec::new();
    for (idx, row) in report.rows.iter().enumerate() {
        for (name, f) in HIST_QUANTITIES {
            let values: Vec<f64> = report.samples(idx).filter(|s| s.ok() || name == "kappa_g").map(f).collect();
            for (b, bin) in histogram(&values, cfg.bins).into_iter().enumerate() {
                hist.push(vec![
                    row.label.clone(),
                    row.rho.to_string(),
                    row.c.to_string(),
                    name.to_string(),
                    b.to_string(),
                    num(bin.lower),
                    num(bin.upper),
                    bin.count.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &cfg.out.join("histograms.csv"),
        &config,
        &["label", "rho", "c", "quantity", "bin", "lower", "upper", "count"],
        hist,
    )?;

    let exact: Vec<f64> = report.exact_ns.iter().map(|&t| t as f64).collect();
    let median_exact = median(&exact);
    let configs = report
        .rows
        .iter()
        .enumerate()
        .map(|(idx, row)| {
            let ok: Vec<&Sample> = report.samples(idx).filter(|s| s.ok()).collect();
            let total: Vec<f64> = ok.iter().map(|s| s.sketch_ns() as f64).collect();
            let stage = |f: fn(&StageTimings) -> u64| median(&ok.iter().map(|s| f(&s.timings) as f64).collect::<Vec<_>>());
            let med_sketch = median(&total);
            ConfigTiming {
                rho: row.rho,
                c: row.c,
                wall_time_s: row.wall_time_s,
                mean_sketch_ns: mean(&total),
                median_sketch_ns: med_sketch,
                median_distribution_ns: stage(|t| t.distribution),
                median_sampling_ns: stage(|t| t.sampling),
                median_gram_ns: stage(|t| t.gram),
                median_solve_ns: stage(|t| t.solve),
                median_reconstruct_ns: stage(|t| t.reconstruct),
                speedup: median_exact / med_sketch,
            }
        })
        .collect();
    let timing = TimingReport {
        exact_wall_time_s: exact.iter().sum::<f64>() * 1e-9,
        mean_exact_ns: mean(&exact),
        median_exact_ns: median_exact,
        configs,
    };
    write_json(&cfg.out.join("bench_timing.json"), &config, &timing)?;
    for row in &report.rows {
        log::info!(
            "{} rho={} c={}: rel |G_hat - G| {:.4}, rel total {:.4}, kappa(G) {:.2}, {} failures",
            row.label,
            row.rho,
            row.c,
            row.rel_gram_error,
            row.rel_total,
            row.kappa_g,
            row.failures
        );
    }
    Ok(report)
}
