//! End-to-end acceptance checks. Each criterion prints one line; the process
//! exits nonzero when any of them fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use sketchfem::analysis::{sample_budget, BudgetForm};
use sketchfem::assembly::{
    assemble_load, assemble_scaling, assemble_stiffness, exact_solve, GradientFactor, ParameterQuery, ProblemKind,
    Scaling,
};
use sketchfem::data::LoadData;
use sketchfem::linalg::{norm, sorted_eigenvalues, sub};
use sketchfem::mesh::{generate_structured, BcLayout, Mesh};
use sketchfem::sketch::{
    draw, exact_gram, sampling_distribution, sketch_gram, solve_gram, solve_query, spectral_caps, variance_terms,
    DistributionMode,
};
use sketchfem::subspace::OfflineArtifact;
use sketchfem_cli::commands::{bench, precompute, probe};
use sketchfem_cli::config::{Bc, MeshSource, Sampler};
use sketchfem_cli::output::{mean, median};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn artifact(dim: usize, m: usize, bc: Bc, rho: usize) -> OfflineArtifact {
    let cfg = precompute::PrecomputeConfig {
        mesh: MeshSource::structured(dim, m, bc).unwrap(),
        problem: None,
        data: None,
        rho,
        out: "unused".into(),
    };
    precompute::build(&cfg).unwrap().0
}

fn sampler(s: &str) -> Sampler {
    s.parse().unwrap()
}

fn query(art: &OfflineArtifact, spec: &str, seed: u64, i: u64) -> (ParameterQuery, Scaling) {
    let p = ParameterQuery::new(sampler(spec).draw(art.n_elements(), seed, i)).unwrap();
    let s = assemble_scaling(&p, &art.omega).unwrap();
    (p, s)
}

/// m = 8 Dirichlet square, rho = 10, one parameter draw from U[0.1, 100].
fn fixture() -> (OfflineArtifact, ParameterQuery, Scaling) {
    let art = artifact(2, 8, Bc::Dirichlet, 10);
    let (p, s) = query(&art, "uniform:0.1:100", 0, 0);
    (art, p, s)
}

fn l2_error(mesh: &Mesh, dm: &GradientFactor, u: &[f64], exact: impl Fn(&[f64]) -> f64) -> f64 {
    let full = dm.dof_map().expand(u, |_| 0.0);
    let mut err = 0.0;
    for l in 0..mesh.n_elements() {
        let v = mesh.element(l);
        let w = mesh.signed_volume(l).abs();
        for (a, b) in [(0, 1), (1, 2), (2, 0)] {
            let x: Vec<f64> = (0..2).map(|q| 0.5 * (mesh.node(v[a])[q] + mesh.node(v[b])[q])).collect();
            let uh = 0.5 * (full[v[a]] + full[v[b]]);
            err += w / 3.0 * (uh - exact(&x)).powi(2);
        }
    }
    err.sqrt()
}

fn fem_convergence() -> Outcome {
    let t = Instant::now();
    let pi = std::f64::consts::PI;
    let exact = |x: &[f64]| (pi * x[0]).sin() * (pi * x[1]).sin();
    let mut errors = Vec::new();
    let mut oracle_gap: f64 = 0.0;
    for m in [8, 16, 32] {
        let mesh = generate_structured(2, m, BcLayout::AllDirichlet).unwrap();
        let dm = GradientFactor::new(&mesh, ProblemKind::Dirichlet).unwrap();
        let s = Scaling { z: mesh.element_volumes().unwrap().omega };
        let data = LoadData {
            forcing: (0..mesh.n_elements()).map(|l| 2.0 * pi * pi * exact(&mesh.centroid(l))).collect(),
            neumann_flux: vec![0.0; mesh.n_facets()],
            dirichlet_value: vec![0.0; mesh.n_nodes()],
        };
        let b = assemble_load(&mesh, &data, &dm, &s).unwrap();
        let a = assemble_stiffness(&dm, &s).unwrap();
        let u = exact_solve(&a, &b.b).unwrap();
        let dense = a.matrix.to_dense().lu().solve(&DVector::from_column_slice(&b.b)).unwrap();
        let gap = (DVector::from_column_slice(&u) - &dense).norm() / dense.norm();
        oracle_gap = oracle_gap.max(gap);
        errors.push(l2_error(&mesh, &dm, &u, exact));
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let secs = t.elapsed().as_secs_f64();
    let pass = ratios.iter().all(|r| (3.0..=5.0).contains(r)) && oracle_gap <= 1e-10 && secs < 10.0;
    outcome(pass, format!("L2 ratios {ratios:.3?}, sparse vs dense gap {oracle_gap:.1e}, {secs:.2} s"))
}

fn unbiasedness() -> Outcome {
    let t = Instant::now();
    let (art, _, s) = fixture();
    let g = exact_gram(&art, &s).unwrap();
    let dist = sampling_distribution(&s, &art.row_norms, art.dim()).unwrap();
    let seeds = 5000;
    let mut acc = DMatrix::zeros(art.rho(), art.rho());
    for seed in 0..seeds {
        acc += sketch_gram(&art, &s, &draw(&dist, 200, seed, 0).unwrap(), &dist).unwrap().ghat;
    }
    acc /= seeds as f64;
    let rel = (&acc - &g).norm() / g.norm();
    let secs = t.elapsed().as_secs_f64();
    outcome(rel <= 0.02 && secs < 60.0, format!("|mean(G_hat) - G| / |G| = {rel:.2e} over {seeds} seeds, {secs:.2} s"))
}

fn empirical_variance(art: &OfflineArtifact, s: &Scaling, g: &DMatrix<f64>, c: usize, trials: u64) -> f64 {
    let dist = sampling_distribution(s, &art.row_norms, art.dim()).unwrap();
    let total: f64 = (0..trials)
        .map(|t| (sketch_gram(art, s, &draw(&dist, c, 1000 + t, 1).unwrap(), &dist).unwrap().ghat - g).norm_squared())
        .sum();
    total / trials as f64
}

fn variance_bound() -> Outcome {
    let (art, _, s) = fixture();
    let g = exact_gram(&art, &s).unwrap();
    let dist = sampling_distribution(&s, &art.row_norms, art.dim()).unwrap();
    let terms = variance_terms(&art, &s, &dist, &g);
    let cs = [50, 200, 800];
    let emp: Vec<f64> = cs.iter().map(|&c| empirical_variance(&art, &s, &g, c, 4000)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (&c, &e) in cs.iter().zip(&emp) {
        let bound = terms.published_bound(c);
        pass &= e <= bound;
        parts.push(format!("c={c}: {e:.3e} vs bound {bound:.3e} (exact {:.3e})", terms.exact_variance(c)));
    }
    let ratios: Vec<f64> = emp.windows(2).map(|w| w[0] / w[1]).collect();
    pass &= ratios.iter().all(|r| (3.0..=5.0).contains(r));
    outcome(pass, format!("{}; c->4c ratios {ratios:.3?}", parts.join(", ")))
}

fn spectral_cap() -> Outcome {
    let fixtures = [
        (2, 8, Bc::Dirichlet, 10),
        (2, 6, Bc::Neumann, 8),
        (2, 7, Bc::Mixed, 15),
        (3, 3, Bc::Mixed, 6),
    ];
    let per = 2600;
    let mut draws = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for (f, &(dim, m, bc, rho)) in fixtures.iter().enumerate() {
        let art = artifact(dim, m, bc, rho);
        for q in 0..4u64 {
            let (_, s) = query(&art, "uniform:0.1:100", f as u64, q);
            let dist = sampling_distribution(&s, &art.row_norms, art.dim()).unwrap();
            let (cap, _) = spectral_caps(&art, &s, 0.0);
            for t in 0..per / 4 {
                let c = [5, 20, 80, 320][t as usize % 4];
                let gh = sketch_gram(&art, &s, &draw(&dist, c, q, t).unwrap(), &dist).unwrap().ghat;
                let top = *sorted_eigenvalues(&gh).last().unwrap();
                worst = worst.max(top / cap);
                if top > cap * (1.0 + 1e-9) {
                    violations += 1;
                }
                draws += 1;
            }
        }
    }
    outcome(
        violations == 0 && draws >= 10_000,
        format!("{violations} violations in {draws} draws, max sigma_1 / cap = {worst:.4}"),
    )
}

fn spectral_floor() -> Outcome {
    let (art, _, s) = fixture();
    let g = exact_gram(&art, &s).unwrap();
    let smin = sorted_eigenvalues(&g)[0];
    let dist = sampling_distribution(&s, &art.row_norms, art.dim()).unwrap();
    let gamma = 0.5;
    let trials = 2000u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [200, 2000, 20000] {
        let mut hits = 0;
        let mut dev = 0.0;
        for t in 0..trials {
            let gh = sketch_gram(&art, &s, &draw(&dist, c, 77, t).unwrap(), &dist).unwrap().ghat;
            dev += (&gh - &g).norm();
            if sorted_eigenvalues(&gh)[0] >= smin - gamma * smin {
                hits += 1;
            }
        }
        let freq = hits as f64 / trials as f64;
        let bound = 1.0 - (dev / trials as f64 / (gamma * smin)).min(1.0);
        let sd = (bound * (1.0 - bound) / trials as f64).sqrt();
        pass &= freq >= bound - 2.0 * sd;
        parts.push(format!("c={c}: {freq:.3} vs {bound:.3}"));
    }
    outcome(pass, parts.join(", "))
}

fn budget_guarantee() -> Outcome {
    let (art, p, s) = fixture();
    let (eps, delta) = (0.5, 0.2);
    let g = exact_gram(&art, &s).unwrap();
    let budget = sample_budget(eps, delta, &s, &art, &g, BudgetForm::Published).unwrap();
    let r = solve_gram(&g, &art.psi_tb, 0).unwrap();
    let psi_r = art.basis.reconstruct(&r);
    let seeds = 200;
    let failures = (0..seeds)
        .filter(|&seed| match solve_query(&art, &p, budget.c, DistributionMode::Prop33, seed, 0) {
            Ok(o) => norm(&sub(&psi_r, &o.solution.u_hat)) > eps * norm(&psi_r),
            Err(_) => true,
        })
        .count();
    let freq = failures as f64 / seeds as f64;
    let limit = delta + 2.0 * (delta * (1.0 - delta) / seeds as f64).sqrt();
    outcome(freq <= limit, format!("c = {}, failure frequency {freq:.3} (limit {limit:.3})", budget.c))
}

fn distance_bounds() -> Outcome {
    let shapes = [(2, Bc::Dirichlet), (2, Bc::Mixed), (2, Bc::Neumann), (3, Bc::Dirichlet), (3, Bc::Mixed)];
    let samplers = ["uniform:0.1:100", "uniform:0.01:1", "exp:0:3", "uniform:1:1"];
    let mut violations = 0;
    let mut rho_one: f64 = 0.0;
    let mut ineq = true;
    let mut checked = 0;
    for inst in 0..20usize {
        let (dim, bc) = shapes[inst % shapes.len()];
        let m = if dim == 2 { 3 + inst % 5 } else { 2 + inst % 2 };
        let mesh = MeshSource::structured(dim, m, bc).unwrap();
        let n_dof = {
            let mesh = mesh.load().unwrap();
            let problem = sketchfem_cli::config::resolve_problem(None, &mesh);
            GradientFactor::new(&mesh, problem).unwrap().n_dof()
        };
        let mut rho = probe::default_sweep(n_dof);
        rho.push(n_dof.min(2));
        rho.sort_unstable();
        rho.dedup();
        let cfg = probe::ProbeConfig {
            mesh,
            problem: None,
            rho: rho.clone(),
            sampler: sampler(samplers[inst % samplers.len()]),
            draws: 1,
            seed: inst as u64,
            out: "unused".into(),
        };
        let report = probe::execute(&cfg).unwrap();
        for (j, pair) in report.pairs[0].iter().enumerate() {
            checked += 1;
            if !pair.x.within_bounds() || !pair.y.within_bounds() {
                violations += 1;
            }
            if rho[j] == 1 {
                rho_one = rho_one.max(pair.x.two_norm).max(pair.x.max_norm);
                let (two, max) = pair.x_not_worse();
                ineq &= two && max;
            }
        }
    }
    outcome(
        violations == 0 && rho_one <= 1e-10 && ineq,
        format!(
            "{violations} bound violations over {checked} (instance, rho) pairs, rho=1 distance {rho_one:.1e}, dist(X) <= dist(Y) at rho=1: {ineq}"
        ),
    )
}

fn distance_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [8, 16] {
        let n_dof = (m - 1) * (m - 1);
        let cfg = probe::ProbeConfig {
            mesh: MeshSource::structured(2, m, Bc::Dirichlet).unwrap(),
            problem: None,
            rho: (1..=n_dof / 4).collect(),
            sampler: sampler("uniform:0.01:1"),
            draws: 5,
            seed: 0,
            out: "unused".into(),
        };
        let report = probe::execute(&cfg).unwrap();
        let bad: Vec<usize> =
            report.rows.iter().filter(|r| r.dist_x_2 > r.dist_y_2 + 1e-9).map(|r| r.rho).collect();
        pass &= bad.is_empty();
        parts.push(format!("m={m}: dist(X) > dist(Y) at rho {bad:?} of 1..={}", n_dof / 4));
    }
    outcome(pass, parts.join("; "))
}

fn bench_trend() -> Outcome {
    let t = Instant::now();
    let art = artifact(2, 16, Bc::Dirichlet, 50);
    let cfg = bench::BenchConfig {
        artifact: "unused".into(),
        label: "desk".into(),
        rho: vec![],
        samples: vec![1_000, 10_000, 100_000],
        queries: 100,
        sampler: sampler("uniform:0.1:100"),
        seed: 0,
        dist_mode: DistributionMode::Prop33,
        epsilon: 0.5,
        delta: 0.2,
        bins: 20,
        out: "unused".into(),
    };
    let report = bench::execute(&cfg, &art).unwrap();
    let gram: Vec<f64> = report.rows.iter().map(|r| r.rel_gram_error).collect();
    let decreasing = gram.windows(2).all(|w| w[1] < w[0]);
    let holds: Vec<usize> = report.rows.iter().map(|r| r.total_bound_holds).collect();
    let failures: usize = report.rows.iter().map(|r| r.failures).sum();
    let all_hold = holds.iter().all(|&h| h == cfg.queries) && failures == 0;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        decreasing && all_hold && secs < 300.0,
        format!("rel gram error {gram:.3?}, bound holds on {holds:?} of {} queries, {secs:.1} s", cfg.queries),
    )
}

fn mean_kappa(art: &OfflineArtifact, queries: u64) -> f64 {
    let k: Vec<f64> = (0..queries)
        .map(|i| {
            let (_, s) = query(art, "uniform:0.1:100", 3, i);
            let e = sorted_eigenvalues(&exact_gram(art, &s).unwrap());
            e[e.len() - 1] / e[0]
        })
        .collect();
    mean(&k)
}

fn conditioning_contrast() -> Outcome {
    let dir = mean_kappa(&artifact(2, 8, Bc::Dirichlet, 10), 50);
    let neu = mean_kappa(&artifact(2, 8, Bc::Neumann, 10), 50);
    let factor = neu / dir;
    outcome(factor >= 10.0, format!("mean kappa(G) Neumann {neu:.3e}, Dirichlet {dir:.3e}, factor {factor:.1}"))
}

fn performance() -> Outcome {
    let art = artifact(2, 32, Bc::Dirichlet, 50);
    let c = (0.05 * art.n_rows() as f64).round() as usize;
    let cfg = bench::BenchConfig {
        artifact: "unused".into(),
        label: "perf".into(),
        rho: vec![],
        samples: vec![c],
        queries: 50,
        sampler: sampler("uniform:0.1:100"),
        seed: 0,
        dist_mode: DistributionMode::Prop33,
        epsilon: 0.5,
        delta: 0.2,
        bins: 10,
        out: "unused".into(),
    };
    std::env::set_var("SKETCHFEM_THREADS", "1");
    let report = bench::execute(&cfg, &art);
    std::env::remove_var("SKETCHFEM_THREADS");
    let report = report.unwrap();
    let sketch: Vec<f64> = report.samples(0).filter(|s| s.ok()).map(|s| s.sketch_ns() as f64).collect();
    let exact: Vec<f64> = report.exact_ns.iter().map(|&t| t as f64).collect();
    let (ms, me) = (median(&sketch), median(&exact));
    outcome(
        sketch.len() == cfg.queries && ms < me,
        format!("c = {c}, median sketched {:.3} ms, exact {:.3} ms, speedup {:.2}", ms * 1e-6, me * 1e-6, me / ms),
    )
}

fn sketchfem(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_sketchfem"))
        .args(args)
        .env("RUST_LOG", "warn")
        .status()
        .expect("binary runs");
    assert!(status.success(), "sketchfem {args:?} failed");
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["bench.csv", "queries.csv", "histograms.csv"]
        .iter()
        .map(|name| (name.to_string(), std::fs::read(dir.join(name)).unwrap()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let art = tmp.path().join("a.skfem");
    let out = tmp.path().join("bench");
    let (art_s, out_s) = (art.to_str().unwrap(), out.to_str().unwrap());
    sketchfem(&["precompute", "--m", "8", "--rho", "10", "--out", art_s]);
    let bench = ["bench", "--artifact", art_s, "--samples", "50,400", "--queries", "20", "--seed", "9", "--out", out_s];
    sketchfem(&bench);
    let first = read_csvs(&out);
    std::fs::remove_dir_all(&out).unwrap();
    sketchfem(&bench);
    let second = read_csvs(&out);
    let differing: Vec<&str> =
        first.iter().zip(&second).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    outcome(differing.is_empty(), format!("{} CSV files compared, differing: {differing:?}", first.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("FEM convergence", fem_convergence),
        ("unbiased Gram sketch", unbiasedness),
        ("variance bound", variance_bound),
        ("spectral cap", spectral_cap),
        ("spectral floor frequency", spectral_floor),
        ("sample budget guarantee", budget_guarantee),
        ("distribution distance bounds", distance_bounds),
        ("distance trend", distance_trend),
        ("bench trend", bench_trend),
        ("Neumann conditioning contrast", conditioning_contrast),
        ("performance", performance),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {status} {name}: {} [{:.1} s]", i + 1, o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
