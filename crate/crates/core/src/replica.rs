//! Large-system (replica) approximation of the conditional mutual
//! information `I(d_1..d_k; y | d_{k+1}..d_K)` and of the weighted sum rate.
//!
//! For the nested user set `A_k = {1..k}` each user `t` is replaced by a
//! deterministic virtual channel `z_t = √T_t·B_t·d_t + v` whose parameters
//! solve the coupled equations
//!
//! ```text
//! R_t   = U_R,t · diag(G_t ψ_t) · U_R,tᴴ          R_A = Σ_t R_t
//! γ_t,n = u_R,t,nᴴ (I + R_A)⁻¹ u_R,t,n
//! T_t   = U_T,t · diag(G_tᵀ γ_t) · U_T,tᴴ
//! ψ_t,m = ∂I_t/∂t_m  (nats; equals u_T,mᴴ B E Bᴴ u_T,m in expectation)
//! ```
//!
//! and the rate is `Σ_t I_t + log2 det(I + R_A) − log2(e)·Σ_t γ_tᵀ G_t ψ_t`.
//! `ψ` is taken as the exact derivative of the noise-ensemble MI, which makes
//! the fixed point an exact stationary point of the sampled objective; the
//! precoder gradients rely on that (envelope theorem).

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::WeichselbergerModel;
use crate::constellation::VectorAlphabet;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, LOG2_E};
use crate::mi_engine::{DiagonalVirtualChannel, Need, NoiseEnsemble, VirtualChannelStats};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicaConfig {
    /// Convergence threshold on the largest change of any γ or ψ entry.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate: `ψ ← (1−d)·ψ + d·ψ_new`.
    pub damping: f64,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            damping: 0.5,
            n_starts: 4,
            seed: 0,
        }
    }
}

impl ReplicaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || self.n_starts == 0 {
            return Err(Error::invalid("replica config needs tol > 0, max_iter > 0, n_starts > 0"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid("damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Fixed-point quantities of one user inside `A_k`.
#[derive(Debug, Clone)]
pub struct UserFixedPoint {
    pub gamma: Vec<f64>,
    pub psi: Vec<f64>,
    /// Eigenvalues of `T_t` in the `U_T` basis, `G_tᵀ γ_t`.
    pub t_diag: Vec<f64>,
    pub t_matrix: CMat,
    pub r_matrix: CMat,
    /// Unclamped virtual-channel MI in bits.
    pub mi_bits: f64,
    /// Virtual-channel statistics at the returned point (MMSE matrix and
    /// sensitivity), reused by the gradients.
    pub stats: VirtualChannelStats,
}

#[derive(Debug, Clone)]
pub struct FixedPointState {
    pub subset_k: usize,
    pub users: Vec<UserFixedPoint>,
    pub r_a: CMat,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Start index that produced the returned solution.
    pub start: usize,
    pub precoder_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticRate {
    pub value_bits: f64,
    pub per_user_mi: Vec<f64>,
    pub logdet_term: f64,
    pub correction_term: f64,
}

/// Hash of the exact bit patterns of a set of precoders, used to detect
/// stale cached fixed points.
pub fn precoder_hash(precoders: &[CMat]) -> u64 {
    let mut h = DefaultHasher::new();
    for b in precoders {
        b.shape().hash(&mut h);
        for z in b.iter() {
            z.re.to_bits().hash(&mut h);
            z.im.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

fn validate_inputs(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    alphabets: &[VectorAlphabet],
    noise: &NoiseEnsemble,
) -> Result<()> {
    if models.is_empty() {
        return Err(Error::invalid("the user set must be nonempty"));
    }
    if precoders.len() < models.len() || alphabets.len() < models.len() {
        return Err(Error::invalid("need a precoder and an alphabet for every user"));
    }
    let n_r = models[0].n_r();
    for (t, m) in models.iter().enumerate() {
        let n_t = m.n_t();
        if m.n_r() != n_r {
            return Err(Error::invalid("all users must share the receive dimension"));
        }
        if precoders[t].shape() != (n_t, n_t) {
            return Err(Error::invalid(format!("precoder {t} must be {n_t}x{n_t}")));
        }
        if alphabets[t].n_t() != n_t || noise.dim() != n_t {
            return Err(Error::invalid(format!(
                "user {t}: alphabet and noise dimensions must equal n_t = {n_t}"
            )));
        }
    }
    Ok(())
}

/// `(R_A, γ_t for every t)` from the current ψ.
fn gamma_step(models: &[WeichselbergerModel], psi: &[Vec<f64>]) -> Result<(CMat, Vec<CMat>, Vec<Vec<f64>>)> {
    let n_r = models[0].n_r();
    let r: Vec<CMat> = models
        .iter()
        .zip(psi)
        .map(|(m, p)| linalg::unitary_congruence(m.u_r(), &m.coupling_mul(p)))
        .collect();
    let mut r_a = CMat::zeros(n_r, n_r);
    for rt in &r {
        r_a += rt;
    }
    r_a = linalg::hermitian_part(&r_a);
    let chol = (linalg::identity(n_r) + &r_a)
        .cholesky()
        .ok_or_else(|| Error::NumericalRank("I + R_A is not positive definite".into()))?;
    let inv = chol.inverse();
    let gamma = models
        .iter()
        .map(|m| (0..n_r).map(|n| linalg::column_quadratic_form(m.u_r(), n, &inv)).collect())
        .collect();
    Ok((r_a, r, gamma))
}

fn user_stats(
    model: &WeichselbergerModel,
    b: &CMat,
    t_diag: &[f64],
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
) -> Result<(VirtualChannelStats, Vec<f64>)> {
    let ch = DiagonalVirtualChannel {
        basis: model.u_t(),
        t: t_diag,
        b,
    };
    let stats = ch.stats(alphabet, noise, Need::All)?;
    let psi = ch.psi(&stats).into_iter().map(|x| x.max(0.0)).collect();
    Ok((stats, psi))
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

struct StartOutcome {
    state: FixedPointState,
    value: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_start(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    alphabets: &[VectorAlphabet],
    noise: &NoiseEnsemble,
    cfg: &ReplicaConfig,
    mut psi: Vec<Vec<f64>>,
    start: usize,
    hash: u64,
) -> Result<StartOutcome> {
    let k = models.len();
    let mut gamma_prev: Option<Vec<Vec<f64>>> = None;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (_, _, gamma) = gamma_step(models, &psi)?;
        let psi_new = (0..k)
            .into_par_iter()
            .map(|t| {
                let t_diag = models[t].coupling_t_mul(&gamma[t]);
                user_stats(&models[t], &precoders[t], &t_diag, &alphabets[t], noise).map(|(_, p)| p)
            })
            .collect::<Result<Vec<_>>>()?;
        residual = max_abs_diff(&psi_new, &psi);
        if let Some(g) = &gamma_prev {
            residual = residual.max(max_abs_diff(&gamma, g));
        }
        let d = cfg.damping;
        for (p, q) in psi.iter_mut().zip(&psi_new) {
            for (x, y) in p.iter_mut().zip(q) {
                *x = (1.0 - d) * *x + d * y;
            }
        }
        gamma_prev = Some(gamma);
        if residual < cfg.tol {
            break;
        }
    }
    let converged = residual < cfg.tol;

    // Final quantities are evaluated at the last ψ so the stored state is
    // internally consistent.
    let (r_a, r, gamma) = gamma_step(models, &psi)?;
    let users = (0..k)
        .into_par_iter()
        .map(|t| {
            let m = &models[t];
            let t_diag = m.coupling_t_mul(&gamma[t]);
            let ch = DiagonalVirtualChannel {
                basis: m.u_t(),
                t: &t_diag,
                b: &precoders[t],
            };
            let stats = ch.stats(&alphabets[t], noise, Need::All)?;
            Ok(UserFixedPoint {
                gamma: gamma[t].clone(),
                psi: psi[t].clone(),
                t_matrix: ch.t_matrix(),
                t_diag,
                r_matrix: r[t].clone(),
                mi_bits: stats.mi_bits,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let state = FixedPointState {
        subset_k: k,
        users,
        r_a,
        residual,
        iterations,
        converged,
        start,
        precoder_hash: hash,
    };
    let value = evaluate(&state, models).value_bits;
    Ok(StartOutcome { state, value })
}

/// Prior-variance quadratic forms `u_mᴴ B Bᴴ u_m`, the ψ of a silent
/// virtual channel.
fn prior_psi(model: &WeichselbergerModel, b: &CMat) -> Vec<f64> {
    let bb = b * b.adjoint();
    (0..model.n_t())
        .map(|m| linalg::column_quadratic_form(model.u_t(), m, &bb).max(0.0))
        .collect()
}

/// Solves the fixed point for the users in `models` (the set `A_k` with
/// `k = models.len()`), running `cfg.n_starts` initializations plus an
/// optional warm start, and returns the converged solution with the smallest
/// asymptotic MI.
pub fn solve_fixed_point(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    alphabets: &[VectorAlphabet],
    cfg: &ReplicaConfig,
    noise: &NoiseEnsemble,
    warm: Option<&FixedPointState>,
) -> Result<FixedPointState> {
    solve_with(models, precoders, alphabets, cfg, noise, warm, false)
}

fn solve_with(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    alphabets: &[VectorAlphabet],
    cfg: &ReplicaConfig,
    noise: &NoiseEnsemble,
    warm: Option<&FixedPointState>,
    warm_only: bool,
) -> Result<FixedPointState> {
    cfg.validate()?;
    validate_inputs(models, precoders, alphabets, noise)?;
    let k = models.len();
    let precoders = &precoders[..k];
    let hash = precoder_hash(precoders);

    let mut inits: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.n_starts + 1);
    if !warm_only {
        inits.push(models.iter().zip(precoders).map(|(m, b)| prior_psi(m, b)).collect());
        if cfg.n_starts > 1 {
            // ψ = 0 is the other extreme (a noiseless virtual channel); together
            // with the prior start it brackets the low- and high-MI branches.
            inits.push(models.iter().map(|m| vec![0.0; m.n_t()]).collect());
        }
        for s in 2..cfg.n_starts {
            let mut r = rng::rng_from(rng::derive_seed(cfg.seed, &[stream::FIXED_POINT, k as u64, s as u64]));
            inits.push(
                models
                    .iter()
                    .zip(precoders)
                    .map(|(m, b)| {
                        let hi = b.norm_squared() / m.n_t() as f64;
                        (0..m.n_t()).map(|_| hi * r.random::<f64>()).collect()
                    })
                    .collect(),
            );
        }
    }
    if let Some(w) = warm {
        if w.subset_k == k && w.users.iter().zip(models).all(|(u, m)| u.psi.len() == m.n_t()) {
            inits.push(w.users.iter().map(|u| u.psi.clone()).collect());
        }
    }
    if inits.is_empty() {
        return Err(Error::invalid("a warm-only solve needs a compatible warm start"));
    }

    let mut best: Option<StartOutcome> = None;
    let mut best_residual = f64::INFINITY;
    for (s, init) in inits.into_iter().enumerate() {
        let out = run_start(models, precoders, alphabets, noise, cfg, init, s, hash)?;
        best_residual = best_residual.min(out.state.residual);
        if !out.state.converged {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.value < b.value) {
            best = Some(out);
        }
    }
    best.map(|b| b.state).ok_or(Error::Convergence {
        context: format!("no start converged for the first {k} users"),
        best_residual,
    })
}

fn evaluate(state: &FixedPointState, models: &[WeichselbergerModel]) -> AsymptoticRate {
    let per_user_mi: Vec<f64> = state.users.iter().map(|u| u.mi_bits).collect();
    let (eig, _) = linalg::hermitian_eigen(&state.r_a);
    let logdet_term = eig.iter().map(|&l| (1.0 + l.max(0.0)).log2()).sum::<f64>();
    let correction_term = LOG2_E
        * state
            .users
            .iter()
            .zip(models)
            .map(|(u, m)| {
                let gp = m.coupling_mul(&u.psi);
                u.gamma.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum::<f64>();
    AsymptoticRate {
        value_bits: per_user_mi.iter().sum::<f64>() + logdet_term - correction_term,
        per_user_mi,
        logdet_term,
        correction_term,
    }
}

/// Asymptotic `I(d_1..d_k; y | d_{k+1}..d_K)` in bits from a converged state.
pub fn asymptotic_conditional_mi(
    state: &FixedPointState,
    models: &[WeichselbergerModel],
    precoders: &[CMat],
) -> Result<AsymptoticRate> {
    if !state.converged {
        return Err(Error::InvalidState(format!(
            "fixed point for k = {} did not converge (residual {:e})",
            state.subset_k, state.residual
        )));
    }
    let k = state.subset_k;
    if models.len() < k || precoders.len() < k {
        return Err(Error::invalid("state refers to more users than supplied"));
    }
    if precoder_hash(&precoders[..k]) != state.precoder_hash {
        return Err(Error::InvalidState("fixed point was solved for different precoders".into()));
    }
    Ok(evaluate(state, &models[..k]))
}

/// `Δ_k = μ_k − μ_{k+1}` with `μ_{K+1} = 0`; errors unless μ is
/// nonincreasing and nonnegative.
pub fn weight_deltas(mu: &[f64]) -> Result<Vec<f64>> {
    if mu.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    if mu.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid(format!(
            "weights must be sorted in nonincreasing order, got {mu:?}"
        )));
    }
    Ok((0..mu.len())
        .map(|k| mu[k] - mu.get(k + 1).copied().unwrap_or(0.0))
        .collect())
}

/// One `A_k` term of the weighted sum rate.
#[derive(Debug, Clone)]
pub struct WsrTerm {
    pub k: usize,
    pub delta: f64,
    pub state: FixedPointState,
    pub rate: AsymptoticRate,
}

#[derive(Debug, Clone)]
pub struct WsrEvaluation {
    pub value_bits: f64,
    /// Terms with `Δ_k > 0`, ascending in k.
    pub terms: Vec<WsrTerm>,
}

impl WsrEvaluation {
    pub fn term(&self, k: usize) -> Option<&WsrTerm> {
        self.terms.iter().find(|t| t.k == k)
    }
}

/// Asymptotic weighted sum rate `Σ_k Δ_k·I(d_1..d_k; y | d_{k+1}..d_K)`.
/// Users must already be ordered by nonincreasing weight.
pub fn asymptotic_wsr(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    weights_mu: &[f64],
    alphabets: &[VectorAlphabet],
    cfg: &ReplicaConfig,
    noise: &NoiseEnsemble,
    warm: Option<&WsrEvaluation>,
) -> Result<WsrEvaluation> {
    wsr_with(models, precoders, weights_mu, alphabets, cfg, noise, warm, false)
}

/// Like [`asymptotic_wsr`] but every fixed point is continued from `warm`
/// alone. Cheap when the precoders moved little; it follows the branch of
/// the warm solution instead of comparing all starts.
pub fn asymptotic_wsr_continued(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    weights_mu: &[f64],
    alphabets: &[VectorAlphabet],
    cfg: &ReplicaConfig,
    noise: &NoiseEnsemble,
    warm: &WsrEvaluation,
) -> Result<WsrEvaluation> {
    wsr_with(models, precoders, weights_mu, alphabets, cfg, noise, Some(warm), true)
}

#[allow(clippy::too_many_arguments)]
fn wsr_with(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    weights_mu: &[f64],
    alphabets: &[VectorAlphabet],
    cfg: &ReplicaConfig,
    noise: &NoiseEnsemble,
    warm: Option<&WsrEvaluation>,
    warm_only: bool,
) -> Result<WsrEvaluation> {
    if weights_mu.len() != models.len() {
        return Err(Error::invalid("need one weight per user"));
    }
    let deltas = weight_deltas(weights_mu)?;
    validate_inputs(models, precoders, alphabets, noise)?;
    let active: Vec<usize> = (1..=models.len()).filter(|&k| deltas[k - 1] > 0.0).collect();
    let terms = active
        .par_iter()
        .map(|&k| {
            let warm_state = warm.and_then(|w| w.term(k)).map(|t| &t.state);
            let state = solve_with(
                &models[..k],
                &precoders[..k],
                &alphabets[..k],
                cfg,
                noise,
                warm_state,
                warm_only,
            )
            .map_err(|e| e.with_context(format!("user set 1..{k}")))?;
            let rate = evaluate(&state, &models[..k]);
            Ok(WsrTerm {
                k,
                delta: deltas[k - 1],
                state,
                rate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let value_bits = terms.iter().map(|t| t.delta * t.rate.value_bits).sum();
    Ok(WsrEvaluation { value_bits, terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{random_models, snr_to_power};
    use crate::constellation::{make_constellation, ConstellationKind};
    use crate::mi_engine::zero_precoder;
    use nalgebra::DMatrix;

    fn qpsk(n_t: usize) -> VectorAlphabet {
        VectorAlphabet::new(make_constellation(ConstellationKind::Psk, 4).unwrap(), n_t).unwrap()
    }

    fn scaled_identity(n: usize, p: f64) -> CMat {
        linalg::identity(n) * linalg::c((p / n as f64).sqrt())
    }

    #[test]
    fn zero_precoders_give_trivial_fixed_point() {
        let models = random_models(2, 2, 2, 1).unwrap();
        let b = vec![zero_precoder(2), zero_precoder(2)];
        let al = vec![qpsk(2), qpsk(2)];
        let noise = NoiseEnsemble::new(2, 50, 1).unwrap();
        let s = solve_fixed_point(&models, &b, &al, &ReplicaConfig::default(), &noise, None).unwrap();
        for u in &s.users {
            assert!(u.psi.iter().all(|&p| p == 0.0));
            assert!(u.gamma.iter().all(|&g| (g - 1.0).abs() < 1e-12));
        }
        let r = asymptotic_conditional_mi(&s, &models, &b).unwrap();
        assert!(r.value_bits.abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_decouples_everything() {
        let m = WeichselbergerModel::new(linalg::identity(2), linalg::identity(2), DMatrix::zeros(2, 2)).unwrap();
        let b = scaled_identity(2, 2.0);
        let noise = NoiseEnsemble::new(2, 50, 2).unwrap();
        let s = solve_fixed_point(&[m.clone()], &[b.clone()], &[qpsk(2)], &ReplicaConfig::default(), &noise, None)
            .unwrap();
        let u = &s.users[0];
        assert!(u.t_diag.iter().all(|&t| t == 0.0));
        assert!(u.gamma.iter().all(|&g| (g - 1.0).abs() < 1e-12));
        for &p in &u.psi {
            assert!((p - 1.0).abs() < 1e-9, "{p}");
        }
        let r = asymptotic_conditional_mi(&s, &[m], &[b]).unwrap();
        assert!(r.value_bits.abs() < 1e-12);
    }

    #[test]
    fn state_invariants_hold() {
        let models = random_models(2, 2, 2, 5).unwrap();
        let p = snr_to_power(5.0, &models[0]);
        let b = vec![scaled_identity(2, p), scaled_identity(2, p)];
        let al = vec![qpsk(2), qpsk(2)];
        let noise = NoiseEnsemble::new(2, 100, 5).unwrap();
        let s = solve_fixed_point(&models, &b, &al, &ReplicaConfig::default(), &noise, None).unwrap();
        assert!(s.converged && s.residual < 1e-6);
        for (u, m) in s.users.iter().zip(&models) {
            let t = linalg::unitary_congruence(m.u_t(), &m.coupling_t_mul(&u.gamma));
            let r = linalg::unitary_congruence(m.u_r(), &m.coupling_mul(&u.psi));
            assert!((&t - &u.t_matrix).norm() < 1e-10);
            assert!((&r - &u.r_matrix).norm() < 1e-10);
            assert!(u.gamma.iter().all(|&g| g > 0.0 && g <= 1.0));
        }
        let r = asymptotic_conditional_mi(&s, &models, &b).unwrap();
        let sum: f64 = r.per_user_mi.iter().sum();
        assert_eq!(r.value_bits, sum + r.logdet_term - r.correction_term);
    }

    #[test]
    fn stale_precoders_are_rejected() {
        let models = random_models(1, 2, 2, 6).unwrap();
        let b = scaled_identity(2, 1.0);
        let noise = NoiseEnsemble::new(2, 30, 6).unwrap();
        let s = solve_fixed_point(&models, &[b.clone()], &[qpsk(2)], &ReplicaConfig::default(), &noise, None)
            .unwrap();
        let other = scaled_identity(2, 1.5);
        assert!(matches!(
            asymptotic_conditional_mi(&s, &models, &[other]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn weights_must_be_sorted() {
        assert!(weight_deltas(&[0.5, 1.0]).is_err());
        assert!(weight_deltas(&[1.0, -0.1]).is_err());
        assert_eq!(weight_deltas(&[1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(weight_deltas(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn non_convergence_is_reported() {
        let models = random_models(2, 2, 2, 8).unwrap();
        let p = snr_to_power(10.0, &models[0]);
        let b = vec![scaled_identity(2, p), scaled_identity(2, p)];
        let noise = NoiseEnsemble::new(2, 30, 8).unwrap();
        let cfg = ReplicaConfig {
            max_iter: 1,
            tol: 1e-14,
            ..ReplicaConfig::default()
        };
        let err = solve_fixed_point(&models, &b, &[qpsk(2), qpsk(2)], &cfg, &noise, None).unwrap_err();
        assert!(matches!(err, Error::Convergence { best_residual, .. } if best_residual > 0.0));
    }
}
