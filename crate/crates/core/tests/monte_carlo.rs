use nalgebra::DMatrix;
use rand::Rng;
use sketchfem::analysis::{projected_matrix, scores};
use sketchfem::assembly::{assemble_load, assemble_scaling, GradientFactor, ParameterQuery, ProblemKind, Scaling};
use sketchfem::data::ProblemData;
use sketchfem::linalg::sorted_eigenvalues;
use sketchfem::mesh::{generate_structured, BcLayout};
use sketchfem::rng::query_rng;
use sketchfem::sketch::{
    draw, exact_gram, sampling_distribution_with, sketch_gram, variance_terms, DistributionMode,
    SamplingDistribution,
};
use sketchfem::subspace::{laplacian, precompute, smallest_eigvecs, OfflineArtifact};

fn setup(m: usize, rho: usize, seed: u64) -> (OfflineArtifact, Scaling) {
    let mesh = generate_structured(2, m, BcLayout::AllDirichlet).unwrap();
    let dm = GradientFactor::new(&mesh, ProblemKind::Dirichlet).unwrap();
    let omega = mesh.element_volumes().unwrap();
    let b = assemble_load(&mesh, &ProblemData::desk_dirichlet().sample(&mesh), &dm, &Scaling::ones(mesh.n_elements()))
        .unwrap();
    let basis = smallest_eigvecs(&laplacian(&dm), rho).unwrap();
    let art = precompute(&dm, &basis, &b, &omega, None).unwrap();
    let mut rng = query_rng(seed, 0);
    let p = ParameterQuery::new((0..mesh.n_elements()).map(|_| rng.gen_range(0.1..10.0)).collect()).unwrap();
    let s = assemble_scaling(&p, &omega).unwrap();
    (art, s)
}

#[test]
fn sketched_gram_is_unbiased() {
    let (art, s) = setup(8, 4, 1);
    let g = exact_gram(&art, &s).unwrap();
    let dist = sampling_distribution_with(DistributionMode::Prop33, &s, &art.row_norms, art.dim()).unwrap();
    let trials = 4000;
    let c = 20;
    let mut mean = DMatrix::zeros(4, 4);
    for t in 0..trials {
        let plan = draw(&dist, c, 99, t).unwrap();
        mean += sketch_gram(&art, &s, &plan, &dist).unwrap().ghat;
    }
    mean /= trials as f64;
    let sd = (variance_terms(&art, &s, &dist, &g).exact_variance(c) / trials as f64).sqrt();
    assert!((&mean - &g).norm() <= 5.0 * sd, "{} vs {}", (&mean - &g).norm(), sd);
}

#[test]
fn sampling_matrix_diagonal_averages_to_one() {
    let (art, s) = setup(6, 3, 2);
    let dist = sampling_distribution_with(DistributionMode::Prop33, &s, &art.row_norms, art.dim()).unwrap();
    let trials = 3000;
    let c = 50;
    let mut diag = vec![0.0; art.n_rows()];
    for t in 0..trials {
        for (r, n) in draw(&dist, c, 7, t).unwrap().counts() {
            diag[r] += n as f64 / (c as f64 * dist.xi()[r]);
        }
    }
    let support: Vec<usize> = (0..art.n_rows()).filter(|&r| dist.xi()[r] > 0.0).collect();
    let mean: f64 = support.iter().map(|&r| diag[r] / trials as f64).sum::<f64>() / support.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
}

#[test]
fn exact_variance_matches_empirical() {
    let (art, s) = setup(8, 3, 3);
    let g = exact_gram(&art, &s).unwrap();
    for mode in [DistributionMode::Prop33, DistributionMode::Alg1, DistributionMode::Uniform] {
        let dist = sampling_distribution_with(mode, &s, &art.row_norms, art.dim()).unwrap();
        let c = 30;
        let trials = 3000;
        let emp: f64 = (0..trials)
            .map(|t| (sketch_gram(&art, &s, &draw(&dist, c, 5, t).unwrap(), &dist).unwrap().ghat - &g).norm_squared())
            .sum::<f64>()
            / trials as f64;
        let exact = variance_terms(&art, &s, &dist, &g).exact_variance(c);
        assert!((emp / exact - 1.0).abs() < 0.15, "{mode}: {emp} vs {exact}");
    }
}

#[test]
fn optimal_distribution_minimizes_variance() {
    let (art, s) = setup(10, 5, 4);
    let g = exact_gram(&art, &s).unwrap();
    let var = |dist: &SamplingDistribution| variance_terms(&art, &s, dist, &g).exact_variance(1);
    let opt_dist = sampling_distribution_with(DistributionMode::Prop33, &s, &art.row_norms, art.dim()).unwrap();
    let opt = var(&opt_dist);
    assert!((opt - variance_terms(&art, &s, &opt_dist, &g).optimal_variance(1)).abs() <= 1e-10 * opt);
    for mode in [DistributionMode::Alg1, DistributionMode::Uniform] {
        let d = sampling_distribution_with(mode, &s, &art.row_norms, art.dim()).unwrap();
        assert!(opt <= var(&d), "{mode}");
    }
    let sc = scores(&projected_matrix(&art, &s, 5).unwrap()).unwrap();
    let lev = SamplingDistribution::from_weights(sc.xi_leverage).unwrap();
    assert!(opt <= var(&lev));
}

#[test]
fn sketched_spectrum_floor_holds_often() {
    let (art, s) = setup(8, 4, 6);
    let g = exact_gram(&art, &s).unwrap();
    let lmin = sorted_eigenvalues(&g)[0];
    let dist = sampling_distribution_with(DistributionMode::Prop33, &s, &art.row_norms, art.dim()).unwrap();
    let c = 200;
    let trials = 500;
    let hits = (0..trials)
        .filter(|&t| {
            let gh = sketch_gram(&art, &s, &draw(&dist, c, 11, t).unwrap(), &dist).unwrap().ghat;
            sorted_eigenvalues(&gh)[0] >= 0.5 * lmin
        })
        .count();
    assert!(hits as f64 / trials as f64 >= 0.5, "{hits}/{trials}");
}
