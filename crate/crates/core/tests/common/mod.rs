//! Oracles shared by the integration tests and the acceptance suite. They
//! only use the library's primitives (channel draws, the virtual-channel
//! statistics, WSR evaluation); the quantities under test are recomputed
//! here by independent routes.
#![allow(dead_code)]

use fapmac::channel::{self, random_models, random_unitary, snr_to_power, WeichselbergerModel};
use fapmac::constellation::{make_constellation, ConstellationKind, VectorAlphabet};
use fapmac::linalg::{self, CMat};
use fapmac::mi_engine::{virtual_channel_stats, Need, NoiseEnsemble};
use fapmac::optimizer::{grad_gamma_sq, grad_v, init_precoders, PrecoderFactors, WsrProblem};
use fapmac::replica::ReplicaConfig;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LOG2_E: f64 = std::f64::consts::LOG2_E;

pub fn qpsk(n_t: usize) -> VectorAlphabet {
    VectorAlphabet::new(make_constellation(ConstellationKind::Psk, 4).unwrap(), n_t).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two users, 2×2 antennas, QPSK, random statistics and weights.
pub fn random_problem(seed: u64, snr_db: f64, replica: ReplicaConfig, noise_samples: usize) -> WsrProblem {
    let models = random_models(2, 2, 2, 1000 + seed).unwrap();
    let powers = models.iter().map(|m| snr_to_power(snr_db, m)).collect();
    let mut r = rng(seed);
    let hi = 1.0;
    let lo: f64 = r.random_range(0.2..0.9);
    WsrProblem::new(
        models,
        vec![hi, lo],
        powers,
        vec![qpsk(2), qpsk(2)],
        NoiseEnsemble::new(2, noise_samples, 77 + seed).unwrap(),
        replica,
    )
    .unwrap()
}

/// A random feasible point with unequal power split and random V.
pub fn random_point(problem: &WsrProblem, seed: u64) -> Vec<PrecoderFactors> {
    let mut r = rng(seed ^ 0xA5A5);
    let mut pre = init_precoders(problem, 2, seed);
    for (f, &p) in pre.iter_mut().zip(&problem.powers) {
        let share: f64 = r.random_range(0.25..0.75);
        f.gamma_diag = vec![(p * share).sqrt(), (p * (1.0 - share)).sqrt()];
    }
    pre
}

fn skew_hermitian(n: usize, seed: u64) -> CMat {
    let mut r = rng(seed);
    let a = CMat::from_fn(n, n, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
    (&a - a.adjoint()) * linalg::c(0.5)
}

pub struct GradientCheck {
    pub gamma_rel_err: f64,
    pub v_rel_err: f64,
}

/// Central differences of the WSR with every fixed point re-solved at the
/// perturbed precoders, against the analytic gradients.
pub fn gradient_check(problem: &WsrProblem, pre: &[PrecoderFactors], seed: u64) -> GradientCheck {
    let eval = problem.evaluate(pre, None).unwrap();
    let wsr = |q: &[PrecoderFactors]| problem.evaluate(q, None).unwrap().value_bits;
    let mut gamma_err: f64 = 0.0;
    let mut v_err: f64 = 0.0;
    for l in 0..problem.k_users() {
        let analytic = grad_gamma_sq(problem, pre, &eval, l).unwrap();
        let h = 1e-5 * problem.powers[l];
        let fd: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let shifted = |s: f64| {
                    let mut q = pre.to_vec();
                    let mut x = q[l].gamma_sq();
                    x[i] += s;
                    q[l].gamma_diag = x.iter().map(|v| v.sqrt()).collect();
                    wsr(&q)
                };
                (shifted(h) - shifted(-h)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        gamma_err = gamma_err.max(diff / norm.max(1e-6));

        let g = grad_v(problem, pre, &eval, l).unwrap();
        let dir = &pre[l].v * skew_hermitian(pre[l].v.nrows(), seed * 31 + l as u64);
        let h = 1e-5;
        let along = |s: f64| {
            let mut q = pre.to_vec();
            q[l].v = &q[l].v + &dir * linalg::c(s);
            wsr(&q)
        };
        let fd = (along(h) - along(-h)) / (2.0 * h);
        let an = linalg::re_inner(&g, &dir);
        v_err = v_err.max((an - fd).abs() / fd.abs().max(1e-6));
    }
    GradientCheck {
        gamma_rel_err: gamma_err,
        v_rel_err: v_err,
    }
}

pub struct MmseCheck {
    pub analytic: f64,
    pub finite_difference: f64,
}

impl MmseCheck {
    pub fn rel_err(&self) -> f64 {
        (self.analytic - self.finite_difference).abs() / self.finite_difference.abs().max(1e-9)
    }
}

/// ∂I/∂γ_n of the virtual-channel MI with `t = Gᵀγ`: the library's analytic
/// value against central differences of the sampled MI.
pub fn mmse_identity_check(seed: u64) -> MmseCheck {
    let mut r = rng(seed ^ 0x5EED);
    let model = channel::random_model(2, 2, 500 + seed).unwrap();
    let alphabet = qpsk(2);
    let noise = NoiseEnsemble::new(2, 200, seed).unwrap();
    let gamma: Vec<f64> = (0..2).map(|_| r.random_range(0.2..1.0)).collect();
    let scale: f64 = r.random_range(0.5..4.0);
    let b = random_unitary(2, seed + 3) * linalg::diag_real(&[scale.sqrt(), (0.6 * scale).sqrt()]) * random_unitary(2, seed + 4);
    let n = r.random_range(0..2usize);
    let g = model.coupling();
    let g_row: Vec<f64> = (0..2).map(|m| g[(n, m)]).collect();
    let t_of = |gam: &[f64]| model.coupling_t_mul(gam);
    let analytic =
        fapmac::mi_engine::mi_gamma_partial(model.u_t(), &t_of(&gamma), &b, &alphabet, &noise, &g_row).unwrap();
    // Unclamped sampled MI along γ_n.
    let mi = |s: f64| {
        let mut gam = gamma.clone();
        gam[n] += s;
        let t = t_of(&gam);
        let roots: Vec<f64> = t.iter().map(|x| x.sqrt()).collect();
        let h = linalg::unitary_congruence(model.u_t(), &roots) * &b;
        virtual_channel_stats(&h, &alphabet, &noise, Need::MutualInformation).unwrap().mi_bits
    };
    let h = 1e-5;
    MmseCheck {
        analytic,
        finite_difference: (mi(h) - mi(-h)) / (2.0 * h),
    }
}

/// Users of a separately-correlated system sharing one receive basis.
pub struct KroneckerUser {
    pub model: WeichselbergerModel,
    /// Receive-side factor `a` of `G = a·bᵀ`.
    pub a: Vec<f64>,
    /// Transmit correlation eigenvalues `b`.
    pub b: Vec<f64>,
    pub precoder: CMat,
}

pub fn kronecker_users(seed: u64, users: usize, n: usize, power: f64) -> Vec<KroneckerUser> {
    let mut r = rng(seed ^ 0xC0FFEE);
    let u_r = random_unitary(n, seed + 100);
    (0..users)
        .map(|k| {
            let mut t: Vec<f64> = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
            let mut rr: Vec<f64> = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
            let st: f64 = t.iter().sum();
            let sr: f64 = rr.iter().sum();
            t.iter_mut().for_each(|x| *x *= n as f64 / st);
            rr.iter_mut().for_each(|x| *x *= n as f64 / sr);
            let total = n as f64;
            let u_t = random_unitary(n, seed + 200 + k as u64);
            let model = channel::kronecker_as_weichselberger(&t, &rr, u_t, u_r.clone()).unwrap();
            let precoder = random_unitary(n, seed + 300 + k as u64) * linalg::c((power / n as f64).sqrt());
            KroneckerUser {
                model,
                a: rr.iter().map(|x| x / total).collect(),
                b: t,
                precoder,
            }
        })
        .collect()
}

/// Asymptotic sum rate of users sharing a receive basis with rank-one
/// couplings. Each user then carries two scalars: `τ` scaling its transmit
/// correlation and `ρ` scaling its receive correlation, with
/// `ρ = dI/dτ` of its virtual channel `√τ·R_T^{1/2}·B`.
pub fn kronecker_sum_rate(users: &[KroneckerUser], noise: &NoiseEnsemble, alphabets: &[VectorAlphabet]) -> f64 {
    let n_r = users[0].a.len();
    let mut rho = vec![0.0; users.len()];
    let mut tau = vec![0.0; users.len()];
    let mut mi = vec![0.0; users.len()];
    for iter in 0..5000 {
        let load: Vec<f64> = (0..n_r)
            .map(|n| users.iter().zip(&rho).map(|(u, p)| p * u.a[n]).sum())
            .collect();
        let gamma: Vec<f64> = load.iter().map(|d| 1.0 / (1.0 + d)).collect();
        let mut change: f64 = 0.0;
        for (k, u) in users.iter().enumerate() {
            tau[k] = u.a.iter().zip(&gamma).map(|(a, g)| a * g).sum();
            let roots: Vec<f64> = u.b.iter().map(|x| x.sqrt()).collect();
            let shaped = linalg::unitary_congruence(u.model.u_t(), &roots) * &u.precoder;
            let h = &shaped * linalg::c(tau[k].sqrt());
            let stats = virtual_channel_stats(&h, &alphabets[k], noise, Need::All).unwrap();
            let sens = stats.sensitivity.unwrap();
            // dI = 2·Re tr(Kᴴ dH) with dH/dτ = shaped/(2√τ).
            let d_tau = linalg::re_inner(&sens, &shaped) / tau[k].sqrt();
            mi[k] = stats.mi_bits;
            let next = 0.5 * rho[k] + 0.5 * d_tau;
            change = change.max((next - rho[k]).abs());
            rho[k] = next;
        }
        if change < 1e-14 && iter > 0 {
            break;
        }
    }
    let load: Vec<f64> = (0..n_r)
        .map(|n| users.iter().zip(&rho).map(|(u, p)| p * u.a[n]).sum())
        .collect();
    let logdet: f64 = load.iter().map(|d| (1.0 + d).log2()).sum();
    mi.iter().sum::<f64>() + logdet - LOG2_E * tau.iter().zip(&rho).map(|(t, r)| t * r).sum::<f64>()
}

/// Transmit power of the eigen-aligned precoder and of `alternatives`
/// random precoders with the same `Bᴴ·T·B`.
pub struct PowerComparison {
    pub aligned: f64,
    pub alternatives: Vec<f64>,
    /// `Σ λ_i(Q)/t_i` with both sorted ascending.
    pub bound: f64,
}

pub fn power_comparison(seed: u64, n: usize, alternatives: usize) -> PowerComparison {
    let mut r = rng(seed ^ 0x7E57);
    let u_t = random_unitary(n, seed + 1);
    let t: Vec<f64> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
    let t_mat = linalg::unitary_congruence(&u_t, &t);
    let b0 = CMat::from_fn(n, n, |_, _| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
    let q = linalg::hermitian_part(&(b0.adjoint() * &t_mat * &b0));
    let aligned = fapmac::optimizer::min_power_precoder(&u_t, &t, &q).unwrap();
    let power = |b: &CMat| b.norm_squared();
    // Every B with BᴴTB = Q is T^{-1/2}·W·Q^{1/2} for a unitary W.
    let t_inv_sqrt = linalg::unitary_congruence(&u_t, &t.iter().map(|x| 1.0 / x.sqrt()).collect::<Vec<_>>());
    let q_sqrt = linalg::psd_sqrt(&q, 1e-12).unwrap();
    let alternatives = (0..alternatives)
        .map(|j| {
            let w = random_unitary(n, seed * 1000 + j as u64 + 7);
            let b = &t_inv_sqrt * w * &q_sqrt;
            assert!((b.adjoint() * &t_mat * &b - &q).norm() < 1e-8 * q.norm());
            power(&b)
        })
        .collect();
    let mut q_eigs: Vec<f64> = linalg::hermitian_eigen(&q).0;
    q_eigs.sort_by(f64::total_cmp);
    let mut t_sorted = t.clone();
    t_sorted.sort_by(f64::total_cmp);
    let bound = q_eigs.iter().zip(&t_sorted).map(|(l, t)| l.max(0.0) / t).sum();
    assert!((aligned.adjoint() * &t_mat * &aligned - &q).norm() < 1e-8 * q.norm());
    PowerComparison {
        aligned: power(&aligned),
        alternatives,
        bound,
    }
}
