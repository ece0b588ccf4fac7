mod common;

use common::*;
use fapmac::replica::ReplicaConfig;

fn replica() -> ReplicaConfig {
    ReplicaConfig {
        tol: 1e-10,
        max_iter: 2000,
        ..Default::default()
    }
}

#[test]
fn wsr_gradients_match_central_differences() {
    for seed in 0..3 {
        let snr = [0.0, 5.0, 10.0][seed as usize];
        let problem = random_problem(seed, snr, replica(), 120);
        let pre = random_point(&problem, seed);
        let check = gradient_check(&problem, &pre, seed);
        assert!(check.gamma_rel_err < 1e-3, "seed {seed}: Γ² rel err {}", check.gamma_rel_err);
        assert!(check.v_rel_err < 1e-3, "seed {seed}: V rel err {}", check.v_rel_err);
    }
}

#[test]
fn mi_gamma_partial_matches_central_differences() {
    for seed in 0..6 {
        let check = mmse_identity_check(seed);
        assert!(check.rel_err() < 1e-3, "seed {seed}: {} vs {}", check.analytic, check.finite_difference);
        assert!(check.analytic > 0.0);
    }
}
