use fapmac::harness::*;
use fapmac::mi_engine::ExactMcConfig;
use fapmac::optimizer::OptimizerConfig;
use fapmac::replica::ReplicaConfig;

fn quick(snr: Vec<f64>) -> ExperimentSpec {
    ExperimentSpec {
        snr_db: snr,
        noise_samples: 60,
        optimizer: OptimizerConfig {
            restarts: 2,
            max_iters: 8,
            ..Default::default()
        },
        replica: ReplicaConfig {
            n_starts: 2,
            ..Default::default()
        },
        seed: 9,
        ..Default::default()
    }
}

#[test]
fn optimized_precoders_never_lose_to_no_precoding() {
    let rows = run_sweep(&quick(vec![-10.0, 5.0, 20.0])).unwrap();
    assert_eq!(rows.len(), 6);
    for pair in rows.chunks(2) {
        let (fap, np) = (&pair[0], &pair[1]);
        assert_eq!((fap.method, np.method), (Method::Fap, Method::Np));
        assert_eq!(fap.snr_db, np.snr_db);
        assert!(fap.wsr_bits >= np.wsr_bits - 1e-9, "{fap:?} vs {np:?}");
        assert_eq!(np.iterations, 0);
        assert!(fap.iterations >= 1);
    }
}

#[test]
fn convergence_traces_are_monotone_and_reproducible() {
    let spec = quick(vec![]);
    let a = run_convergence(&spec, &[-10.0, 10.0]).unwrap();
    let b = run_convergence(&spec, &[-10.0, 10.0]).unwrap();
    assert_eq!(a, b);
    for t in &a {
        assert!(t.wsr.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{t:?}");
    }
    assert_eq!(convergence_csv(&spec, &a), convergence_csv(&spec, &b));
}

#[test]
fn region_boundary_of_fap_dominates_no_precoding() {
    let spec = ExperimentSpec {
        methods: vec![Method::Np, Method::Fap],
        ..quick(vec![])
    };
    let grid = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![0.3, 1.0]];
    let points = run_rate_region(&spec, 5.0, &grid).unwrap();
    assert_eq!(points.len(), 6);
    for w in &grid {
        let at = |m: Method| points.iter().find(|p| &p.weights == w && p.method == m).unwrap();
        let (fap, np) = (at(Method::Fap), at(Method::Np));
        assert!(fap.wsr_bits >= np.wsr_bits - 1e-9, "{fap:?} vs {np:?}");
        for p in [fap, np] {
            let direct: f64 = p.weights.iter().zip(&p.rates).map(|(m, r)| m * r).sum();
            assert!((direct - p.wsr_bits).abs() < 1e-12);
            assert!(p.rates.iter().all(|&r| r > 0.0));
        }
    }
    let csv = region_csv(&spec, &points);
    assert_eq!(csv.lines().nth(1).unwrap(), "mu1,mu2,method,r1,r2,wsr_bits");
}

#[test]
fn validation_at_vanishing_snr_is_near_zero() {
    let spec = ExperimentSpec {
        mc: ExactMcConfig {
            n_channels: 20,
            n_noise: 16,
            ..Default::default()
        },
        gap_tolerance: 0.05,
        ..quick(vec![-30.0])
    };
    let report = run_validation(&spec).unwrap();
    assert_eq!(report.points.len(), 2);
    for p in &report.points {
        assert!(p.asymptotic_bits.abs() < 0.05 && p.exact_bits.abs() < 0.05, "{p:?}");
    }
    assert!(report.passed);
}

#[test]
fn sweep_writes_csv_to_output_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let spec = ExperimentSpec {
        methods: vec![Method::Np, Method::Gp],
        output: Some(path.clone()),
        ..quick(vec![0.0, 10.0])
    };
    let rows = run_sweep(&spec).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, sweep_csv(&spec, &rows));
    assert_eq!(text.lines().count(), 2 + 4);
    assert!(text.lines().skip(2).all(|l| l.contains(",0,0,") && l.ends_with(",ok")));
}
