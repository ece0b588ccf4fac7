mod common;

use common::*;
use fapmac::mi_engine::NoiseEnsemble;
use fapmac::optimizer::no_precoding_baseline;
use fapmac::replica::{asymptotic_wsr, solve_fixed_point, ReplicaConfig};

fn tight() -> ReplicaConfig {
    ReplicaConfig {
        tol: 1e-13,
        max_iter: 5000,
        ..Default::default()
    }
}

fn compare_kronecker(seed: u64, users: usize, power: f64) -> (f64, f64) {
    let ku = kronecker_users(seed, users, 2, power);
    let noise = NoiseEnsemble::new(2, 100, seed).unwrap();
    let alphabets = vec![qpsk(2); users];
    let models: Vec<_> = ku.iter().map(|u| u.model.clone()).collect();
    let precoders: Vec<_> = ku.iter().map(|u| u.precoder.clone()).collect();
    let general = asymptotic_wsr(&models, &precoders, &vec![1.0; users], &alphabets, &tight(), &noise, None)
        .unwrap()
        .value_bits;
    (general, kronecker_sum_rate(&ku, &noise, &alphabets))
}

#[test]
fn rank_one_coupling_matches_scalar_kronecker_path_single_user() {
    for seed in 0..3 {
        let (general, scalar) = compare_kronecker(seed, 1, 2.0);
        assert!((general - scalar).abs() < 1e-9, "seed {seed}: {general} vs {scalar}");
    }
}

#[test]
fn rank_one_coupling_matches_scalar_kronecker_path_two_users() {
    for seed in 0..3 {
        let (general, scalar) = compare_kronecker(10 + seed, 2, 1.0);
        assert!((general - scalar).abs() < 1e-9, "seed {seed}: {general} vs {scalar}");
    }
}

#[test]
fn fixed_point_does_not_depend_on_start_seed() {
    for instance in 0..3 {
        let problem = random_problem(instance, 5.0, ReplicaConfig::default(), 100);
        let np = fapmac::optimizer::to_matrices(&no_precoding_baseline(&problem));
        let values: Vec<f64> = (0..5)
            .map(|seed| {
                let cfg = ReplicaConfig {
                    seed,
                    ..Default::default()
                };
                let state =
                    solve_fixed_point(&problem.models, &np, &problem.alphabets, &cfg, &problem.noise, None).unwrap();
                assert!(state.converged && state.residual < 1e-6);
                asymptotic_wsr(&problem.models, &np, &[1.0, 1.0], &problem.alphabets, &cfg, &problem.noise, None)
                    .unwrap()
                    .value_bits
            })
            .collect();
        for v in &values {
            assert!((v - values[0]).abs() < 1e-5, "instance {instance}: {values:?}");
        }
    }
}

#[test]
fn user_one_weight_gives_its_conditional_rate() {
    let problem = random_problem(4, 0.0, ReplicaConfig::default(), 60);
    let np = fapmac::optimizer::to_matrices(&no_precoding_baseline(&problem));
    let cfg = &problem.replica;
    let eval = |mu: &[f64]| {
        asymptotic_wsr(&problem.models, &np, mu, &problem.alphabets, cfg, &problem.noise, None).unwrap()
    };
    let only_first = eval(&[1.0, 0.0]);
    assert_eq!(only_first.terms.len(), 1);
    assert_eq!(only_first.terms[0].k, 1);
    let mixed = eval(&[1.0, 0.4]);
    let sum = eval(&[1.0, 1.0]).value_bits;
    // Σ Δ_k·I_k with Δ = (0.6, 0.4).
    assert!((mixed.value_bits - (0.6 * only_first.value_bits + 0.4 * sum)).abs() < 1e-9);
    assert!(only_first.value_bits < sum);
}
