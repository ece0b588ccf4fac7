//! Finite-alphabet mutual information and MMSE statistics.
//!
//! Two estimators live here:
//!
//! * the deterministic virtual channel `z = √T·B·d + v`, whose noise
//!   expectation is taken over a fixed, seeded [`NoiseEnsemble`] so that the
//!   estimate is a smooth deterministic function of `T` and `B`;
//! * the exact ergodic conditional mutual information of the physical MAC,
//!   estimated by nested Monte Carlo over channel draws, transmitted symbols
//!   and noise.
//!
//! For the virtual channel the evaluation also returns the sensitivity
//! `K = ∂I/∂H*` (nats) of the *sampled* objective with respect to the
//! effective channel `H = √T·B`. Derivatives that have to agree with finite
//! differences of the sampled objective (the ψ update of the fixed point, the
//! precoder gradients) are built from `K`; its expectation is `H·E` with `E`
//! the MMSE matrix. The MMSE matrix itself is estimated from posterior
//! covariances, which is unbiased and always Hermitian PSD.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, WeichselbergerModel};
use crate::constellation::VectorAlphabet;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, LOG2_E};
use crate::rng::{self, stream};

/// Symbols handled per parallel work item. Fixed so that the summation
/// order, and therefore every result bit, is independent of thread count.
const SYMBOL_CHUNK: usize = 16;

/// Below this eigenvalue the pathwise ψ derivative is replaced by the MMSE
/// quadratic form; the pathwise form is 0/0 at exactly zero.
const T_FLOOR: f64 = 1e-24;

pub const DEFAULT_NOISE_SAMPLES: usize = 500;

/// Shared i.i.d. standard complex Gaussian noise samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEnsemble {
    dim: usize,
    seed: u64,
    samples: Vec<CVec>,
}

impl NoiseEnsemble {
    pub fn new(dim: usize, count: usize, seed: u64) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::invalid("noise ensemble needs positive dimension and count"));
        }
        let mut rng = rng::rng_from(rng::derive_seed(seed, &[stream::NOISE, dim as u64]));
        let samples = (0..count)
            .map(|_| CVec::from_fn(dim, |_, _| rng::complex_gaussian(&mut rng)))
            .collect();
        Ok(Self { dim, seed, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[CVec] {
        &self.samples
    }
}

/// Signal-domain and precoded-domain MSE matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MseMatrices {
    pub e: CMat,
    pub omega: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    /// Estimate in bits, clamped to `[0, log2 M]`.
    pub bits: f64,
    /// Unclamped estimate.
    pub raw_bits: f64,
    /// Monte-Carlo standard error over the noise ensemble.
    pub std_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Need {
    MutualInformation,
    All,
}

/// Everything one pass over (transmitted symbol, noise sample) pairs yields.
#[derive(Debug, Clone)]
pub struct VirtualChannelStats {
    /// Sampled mutual information in bits (unclamped).
    pub mi_bits: f64,
    pub std_err_bits: f64,
    /// Posterior-covariance MMSE estimate of `d`.
    pub e: Option<CMat>,
    /// ∂I/∂H* of the sampled objective, nats.
    pub sensitivity: Option<CMat>,
}

/// Per-chunk sums. With posterior weights `w_p` for transmitted symbol `a_m`
/// and noise `v`, posterior mean `μ = Σ_p w_p a_p`:
///
/// * `weight[p]` = Σ w_p,
/// * `mean_outer` = Σ μ·μᴴ,
/// * `sent_mean` = Σ a_m·μᴴ,
/// * `noise_err` = Σ v·(μ − a_m)ᴴ.
///
/// The MMSE matrix and the sensitivity are linear in these, so the per-pair
/// work stays O(M) instead of O(M·n²). Matrices are column-major.
struct Accumulator {
    lse_per_noise: Vec<f64>,
    weight: Vec<f64>,
    mean_outer: Vec<Complex64>,
    sent_mean: Vec<Complex64>,
    noise_err: Vec<Complex64>,
}

impl Accumulator {
    fn new(n_out: usize, n_in: usize, m_size: usize, noise: usize) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        Self {
            lse_per_noise: vec![0.0; noise],
            weight: vec![0.0; m_size],
            mean_outer: vec![zero; n_in * n_in],
            sent_mean: vec![zero; n_in * n_in],
            noise_err: vec![zero; n_out * n_in],
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        add(&mut self.lse_per_noise, &other.lse_per_noise);
        add(&mut self.weight, &other.weight);
        add(&mut self.mean_outer, &other.mean_outer);
        add(&mut self.sent_mean, &other.sent_mean);
        add(&mut self.noise_err, &other.noise_err);
    }
}

fn check_dims(h_cols: usize, alphabet: &VectorAlphabet) -> Result<()> {
    if alphabet.n_t() != h_cols {
        return Err(Error::invalid(format!(
            "alphabet has {} antennas but the channel has {h_cols} columns",
            alphabet.n_t()
        )));
    }
    Ok(())
}

/// Evaluates the virtual channel `z = H·d + v` for an arbitrary effective
/// channel `H` (rows must match the noise dimension).
pub fn virtual_channel_stats(
    h: &CMat,
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
    need: Need,
) -> Result<VirtualChannelStats> {
    check_dims(h.ncols(), alphabet)?;
    if h.nrows() != noise.dim() {
        return Err(Error::invalid(format!(
            "noise dimension {} does not match channel output dimension {}",
            noise.dim(),
            h.nrows()
        )));
    }
    let symbols = alphabet.symbols();
    let m_size = symbols.len();
    let n_out = h.nrows();
    let n_in = h.ncols();
    let n_noise = noise.count();
    let full = need == Need::All;
    // Flat row-major copies: symbol p occupies sym[p·n_in..], its noiseless
    // output rx[p·n_out..].
    let sym: Vec<Complex64> = symbols.iter().flat_map(|a| a.iter().copied()).collect();
    let rx: Vec<Complex64> = symbols
        .iter()
        .flat_map(|a| (h * a).iter().copied().collect::<Vec<_>>())
        .collect();
    let zero = Complex64::new(0.0, 0.0);

    let chunks: Vec<Accumulator> = (0..m_size.div_ceil(SYMBOL_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accumulator::new(n_out, n_in, m_size, n_noise);
            let mut x = vec![0.0; m_size];
            let mut mean = vec![zero; n_in];
            let lo = chunk * SYMBOL_CHUNK;
            let hi = (lo + SYMBOL_CHUNK).min(m_size);
            for m in lo..hi {
                let rx_m = &rx[m * n_out..(m + 1) * n_out];
                let a_m = &sym[m * n_in..(m + 1) * n_in];
                for (s, v) in noise.samples().iter().enumerate() {
                    let v = v.as_slice();
                    let v_norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
                    for (p, xp) in x.iter_mut().enumerate() {
                        let rx_p = &rx[p * n_out..(p + 1) * n_out];
                        let mut d2 = 0.0;
                        for j in 0..n_out {
                            d2 += (rx_p[j] - rx_m[j] + v[j]).norm_sqr();
                        }
                        *xp = v_norm - d2;
                    }
                    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for xp in x.iter_mut() {
                        *xp = (*xp - max).exp();
                        sum += *xp;
                    }
                    acc.lse_per_noise[s] += max + sum.ln();
                    if !full {
                        continue;
                    }
                    mean.fill(zero);
                    let inv_sum = 1.0 / sum;
                    for (p, &xp) in x.iter().enumerate() {
                        let w = xp * inv_sum;
                        acc.weight[p] += w;
                        for (mi, ai) in mean.iter_mut().zip(&sym[p * n_in..(p + 1) * n_in]) {
                            *mi += ai * w;
                        }
                    }
                    for col in 0..n_in {
                        let mc = mean[col].conj();
                        let dc = mc - a_m[col].conj();
                        for row in 0..n_in {
                            acc.mean_outer[col * n_in + row] += mean[row] * mc;
                            acc.sent_mean[col * n_in + row] += a_m[row] * mc;
                        }
                        for row in 0..n_out {
                            acc.noise_err[col * n_out + row] += v[row] * dc;
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut total = Accumulator::new(n_out, n_in, m_size, n_noise);
    for c in &chunks {
        total.merge(c);
    }

    let ln_m = (m_size as f64).ln();
    let per_noise: Vec<f64> = total
        .lse_per_noise
        .iter()
        .map(|&l| (ln_m - l / m_size as f64) * LOG2_E)
        .collect();
    let mi_bits = per_noise.iter().sum::<f64>() / n_noise as f64;
    let std_err_bits = if n_noise > 1 {
        let var = per_noise.iter().map(|x| (x - mi_bits).powi(2)).sum::<f64>() / (n_noise - 1) as f64;
        (var / n_noise as f64).sqrt()
    } else {
        0.0
    };
    let (e, sensitivity) = if full {
        let denom = linalg::c((m_size * n_noise) as f64);
        // Σ over all pairs of Σ_p w_p a_p a_pᴴ, and of a_m a_mᴴ.
        let mut second = CMat::zeros(n_in, n_in);
        let mut sent = CMat::zeros(n_in, n_in);
        for (p, a) in symbols.iter().enumerate() {
            second.gerc(linalg::c(total.weight[p]), a, a, linalg::c(1.0));
            sent.gerc(linalg::c(n_noise as f64), a, a, linalg::c(1.0));
        }
        let mean_outer = CMat::from_vec(n_in, n_in, total.mean_outer);
        let sent_mean = CMat::from_vec(n_in, n_in, total.sent_mean);
        let noise_err = CMat::from_vec(n_out, n_in, total.noise_err);
        let e = linalg::hermitian_part(&((&second - mean_outer) / denom));
        // Σ_p w_p (H(a_p − a_m) + v)(a_p − a_m)ᴴ summed over all pairs.
        let spread = &second - &sent_mean - sent_mean.adjoint() + sent;
        let k = (h * spread + noise_err) / denom;
        (Some(e), Some(k))
    } else {
        (None, None)
    };
    Ok(VirtualChannelStats {
        mi_bits,
        std_err_bits,
        e,
        sensitivity,
    })
}

fn t_sqrt(t_matrix: &CMat) -> Result<CMat> {
    linalg::psd_sqrt(t_matrix, 1e-8)
}

fn validate_square(name: &str, m: &CMat, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::invalid(format!("{name} must be {n}x{n}, got {:?}", m.shape())));
    }
    Ok(())
}

fn effective_channel(t_matrix: &CMat, b: &CMat, alphabet: &VectorAlphabet, noise: &NoiseEnsemble) -> Result<CMat> {
    let n = alphabet.n_t();
    validate_square("t_matrix", t_matrix, n)?;
    validate_square("precoder", b, n)?;
    if noise.dim() != n {
        return Err(Error::invalid(format!(
            "noise dimension {} must equal n_t = {n}",
            noise.dim()
        )));
    }
    Ok(t_sqrt(t_matrix)? * b)
}

/// I(d; √T·B·d + v) in bits with its noise-ensemble standard error.
pub fn deterministic_mi_estimate(
    t_matrix: &CMat,
    b: &CMat,
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
) -> Result<MiEstimate> {
    let h = effective_channel(t_matrix, b, alphabet, noise)?;
    let stats = virtual_channel_stats(&h, alphabet, noise, Need::MutualInformation)?;
    Ok(MiEstimate {
        bits: stats.mi_bits.clamp(0.0, alphabet.bits()),
        raw_bits: stats.mi_bits,
        std_err: stats.std_err_bits,
    })
}

/// I(d; √T·B·d + v) in bits, clamped to `[0, log2 M]`.
pub fn deterministic_mi(
    t_matrix: &CMat,
    b: &CMat,
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
) -> Result<f64> {
    Ok(deterministic_mi_estimate(t_matrix, b, alphabet, noise)?.bits)
}

/// MMSE matrix `E` of `d` given `z = √T·B·d + v` and `Ω = B·E·Bᴴ`.
pub fn mmse_matrices(
    t_matrix: &CMat,
    b: &CMat,
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
) -> Result<MseMatrices> {
    let h = effective_channel(t_matrix, b, alphabet, noise)?;
    let stats = virtual_channel_stats(&h, alphabet, noise, Need::All)?;
    let e = stats.e.expect("full statistics requested");
    let omega = linalg::hermitian_part(&(b * &e * b.adjoint()));
    Ok(MseMatrices { e, omega })
}

/// A virtual channel whose `T` is diagonal in a known basis:
/// `T = U·diag(t)·Uᴴ`, so `√T = U·diag(√t)·Uᴴ`.
#[derive(Debug, Clone, Copy)]
pub struct DiagonalVirtualChannel<'a> {
    pub basis: &'a CMat,
    pub t: &'a [f64],
    pub b: &'a CMat,
}

impl DiagonalVirtualChannel<'_> {
    pub fn validate(&self, alphabet: &VectorAlphabet, noise: &NoiseEnsemble) -> Result<()> {
        let n = alphabet.n_t();
        validate_square("basis", self.basis, n)?;
        validate_square("precoder", self.b, n)?;
        if self.t.len() != n {
            return Err(Error::invalid("t vector length must equal n_t"));
        }
        if let Some(&neg) = self.t.iter().find(|&&x| x < -1e-8) {
            return Err(Error::invalid(format!("t has negative entry {neg:e}")));
        }
        if noise.dim() != n {
            return Err(Error::invalid("noise dimension must equal n_t"));
        }
        Ok(())
    }

    pub fn sqrt_t(&self) -> CMat {
        let roots: Vec<f64> = self.t.iter().map(|&x| x.max(0.0).sqrt()).collect();
        linalg::unitary_congruence(self.basis, &roots)
    }

    pub fn t_matrix(&self) -> CMat {
        linalg::unitary_congruence(self.basis, self.t)
    }

    pub fn effective(&self) -> CMat {
        self.sqrt_t() * self.b
    }

    pub fn stats(&self, alphabet: &VectorAlphabet, noise: &NoiseEnsemble, need: Need) -> Result<VirtualChannelStats> {
        self.validate(alphabet, noise)?;
        virtual_channel_stats(&self.effective(), alphabet, noise, need)
    }

    /// ∂I/∂t_m in nats for every m, from full statistics. This is the ψ
    /// update of the fixed point.
    pub fn psi(&self, stats: &VirtualChannelStats) -> Vec<f64> {
        let k = stats.sensitivity.as_ref().expect("full statistics required");
        let e = stats.e.as_ref().expect("full statistics required");
        let bkh = self.b * k.adjoint();
        let omega = self.b * e * self.b.adjoint();
        (0..self.t.len())
            .map(|m| {
                if self.t[m] > T_FLOOR {
                    linalg::column_quadratic_form(self.basis, m, &bkh) / self.t[m].sqrt()
                } else {
                    linalg::column_quadratic_form(self.basis, m, &omega)
                }
            })
            .collect()
    }
}

/// ∂I/∂γ_n in bits for `T = U_T·diag(t)·U_Tᴴ` moving along `t ← t + δ·g_row`,
/// i.e. `log2(e)·Σ_m g_row[m]·ψ_m`.
pub fn mi_gamma_partial(
    u_t: &CMat,
    t_diag: &[f64],
    b: &CMat,
    alphabet: &VectorAlphabet,
    noise: &NoiseEnsemble,
    g_row: &[f64],
) -> Result<f64> {
    if g_row.len() != t_diag.len() {
        return Err(Error::invalid("g_row length must equal n_t"));
    }
    let ch = DiagonalVirtualChannel {
        basis: u_t,
        t: t_diag,
        b,
    };
    let stats = ch.stats(alphabet, noise, Need::All)?;
    let psi = ch.psi(&stats);
    Ok(LOG2_E * g_row.iter().zip(&psi).map(|(g, p)| g * p).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactMcConfig {
    pub n_channels: usize,
    pub n_noise: usize,
    pub seed: u64,
    /// Largest joint alphabet the inner sum will enumerate.
    pub cap: u128,
    pub batches: usize,
}

impl Default for ExactMcConfig {
    fn default() -> Self {
        Self {
            n_channels: 200,
            n_noise: 64,
            seed: 0,
            cap: 1 << 20,
            batches: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub bits: f64,
    pub std_err: f64,
}

/// Size of the joint alphabet over `subset`, or a resource-limit error.
pub fn joint_alphabet_size(alphabets: &[VectorAlphabet], subset: &[usize], cap: u128) -> Result<usize> {
    let mut size: u128 = 1;
    for &k in subset {
        size = size.saturating_mul(alphabets[k].size() as u128);
    }
    if size > cap {
        return Err(Error::ResourceLimit {
            what: format!("joint alphabet of users {subset:?}"),
            size,
            cap,
        });
    }
    Ok(size as usize)
}

/// Running log-sum-exp over the joint alphabet, enumerated user by user.
fn joint_log_sum_exp(diffs: &[Vec<CVec>], v: &CVec) -> f64 {
    fn walk(diffs: &[Vec<CVec>], partial: &CVec, v_norm: f64, max: &mut f64, sum: &mut f64) {
        match diffs.split_first() {
            None => {
                let x = v_norm - partial.norm_squared();
                if x > *max {
                    *sum = *sum * (*max - x).exp() + 1.0;
                    *max = x;
                } else {
                    *sum += (x - *max).exp();
                }
            }
            Some((first, rest)) => {
                for d in first {
                    walk(rest, &(partial + d), v_norm, max, sum);
                }
            }
        }
    }
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    walk(diffs, v, v.norm_squared(), &mut max, &mut sum);
    max + sum.ln()
}

/// Nested Monte-Carlo estimate of I(d_A; y | d_{A^c}) in bits.
///
/// Channels are drawn with seeds derived from `(cfg.seed, realization, user)`,
/// so different precoders and subsets evaluated with the same seed see the
/// same channel realizations.
pub fn exact_conditional_mi_mc(
    models: &[WeichselbergerModel],
    precoders: &[CMat],
    subset: &[usize],
    alphabets: &[VectorAlphabet],
    cfg: &ExactMcConfig,
) -> Result<McEstimate> {
    if subset.is_empty() {
        return Err(Error::invalid("subset must be nonempty"));
    }
    if models.len() != precoders.len() || models.len() != alphabets.len() {
        return Err(Error::invalid("models, precoders and alphabets must have one entry per user"));
    }
    if subset.iter().any(|&k| k >= models.len()) {
        return Err(Error::invalid("subset refers to an unknown user"));
    }
    if cfg.n_channels == 0 || cfg.n_noise == 0 {
        return Err(Error::invalid("Monte-Carlo sample counts must be positive"));
    }
    let joint = joint_alphabet_size(alphabets, subset, cfg.cap)?;
    let n_r = models[subset[0]].n_r();
    for &k in subset {
        if models[k].n_r() != n_r || precoders[k].shape() != (models[k].n_t(), models[k].n_t()) {
            return Err(Error::invalid("inconsistent model or precoder dimensions"));
        }
    }
    let symbols: Vec<Vec<CVec>> = subset.iter().map(|&k| alphabets[k].symbols()).collect();
    let ln_joint = (joint as f64).ln();

    let per_channel: Vec<f64> = (0..cfg.n_channels)
        .into_par_iter()
        .map(|c| {
            let received: Vec<Vec<CVec>> = subset
                .iter()
                .zip(&symbols)
                .map(|(&k, syms)| {
                    let h = sample_channel(
                        &models[k],
                        rng::derive_seed(cfg.seed, &[stream::EXACT_MC, c as u64, k as u64]),
                    )
                    .h;
                    let hb = h * &precoders[k];
                    syms.iter().map(|a| &hb * a).collect()
                })
                .collect();
            let mut rng = rng::rng_from(rng::derive_seed(cfg.seed, &[stream::EXACT_MC, c as u64, u64::MAX]));
            let mut acc = 0.0;
            for _ in 0..cfg.n_noise {
                let diffs: Vec<Vec<CVec>> = received
                    .iter()
                    .map(|rx| {
                        let m = rand::Rng::random_range(&mut rng, 0..rx.len());
                        rx.iter().map(|r| r - &rx[m]).collect()
                    })
                    .collect();
                let v = CVec::from_fn(n_r, |_, _| rng::complex_gaussian(&mut rng));
                acc += ln_joint - joint_log_sum_exp(&diffs, &v);
            }
            acc / cfg.n_noise as f64 * LOG2_E
        })
        .collect();

    let n = per_channel.len();
    let bits = per_channel.iter().sum::<f64>() / n as f64;
    let batches = cfg.batches.clamp(1, n);
    let std_err = if batches > 1 {
        let means: Vec<f64> = (0..batches)
            .map(|b| {
                let lo = b * n / batches;
                let hi = (b + 1) * n / batches;
                per_channel[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let mu = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
        (var / batches as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { bits, std_err })
}

/// Zero matrix helper used by callers that need a 0 precoder.
pub fn zero_precoder(n: usize) -> CMat {
    DMatrix::from_element(n, n, Complex64::new(0.0, 0.0))
}
