mod common;

use common::power_comparison;

#[test]
fn eigen_aligned_precoder_attains_the_rearrangement_bound() {
    for seed in 0..10 {
        let cmp = power_comparison(seed, 3, 20);
        assert!((cmp.aligned - cmp.bound).abs() < 1e-9 * cmp.bound, "seed {seed}");
        for &alt in &cmp.alternatives {
            assert!(cmp.aligned < alt, "seed {seed}: {} vs {alt}", cmp.aligned);
        }
    }
}
