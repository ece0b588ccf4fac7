//! Jointly-correlated (Weichselberger) channel statistics.
//!
//! A user's channel is `H = U_R (G̃ ⊙ W) U_Tᴴ` with `W` i.i.d. standard
//! complex Gaussian. The coupling matrix `G = G̃ ⊙ G̃` carries the average
//! energy between receive eigendirection `n` and transmit eigendirection `m`.
//!
//! # Model file schema
//!
//! ```json
//! {
//!   "version": 1,
//!   "users": [
//!     {
//!       "n_r": 2, "n_t": 2,
//!       "u_t": [[[re, im], [re, im]], [[re, im], [re, im]]],
//!       "u_r": [[[re, im], [re, im]], [[re, im], [re, im]]],
//!       "g_tilde": [[0.7, 1.1], [0.9, 1.2]]
//!     }
//!   ]
//! }
//! ```
//!
//! Matrices are row-major: `u_t[i][j]` is entry `(i, j)` as a `[re, im]` pair.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::rng::{self, stream};

const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WeichselbergerModel {
    u_t: CMat,
    u_r: CMat,
    g_tilde: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl WeichselbergerModel {
    pub fn new(u_t: CMat, u_r: CMat, g_tilde: DMatrix<f64>) -> Result<Self> {
        let n_t = u_t.nrows();
        let n_r = u_r.nrows();
        if n_t == 0 || n_r == 0 || !u_t.is_square() || !u_r.is_square() {
            return Err(Error::invalid("U_T and U_R must be non-empty square matrices"));
        }
        if g_tilde.shape() != (n_r, n_t) {
            return Err(Error::invalid(format!(
                "g_tilde is {:?}, expected ({n_r}, {n_t})",
                g_tilde.shape()
            )));
        }
        if linalg::unitarity_error(&u_t) > UNITARY_TOL || linalg::unitarity_error(&u_r) > UNITARY_TOL
        {
            return Err(Error::invalid("U_T and U_R must be unitary"));
        }
        if g_tilde.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("g_tilde entries must be finite and nonnegative"));
        }
        let g = g_tilde.map(|x| x * x);
        Ok(Self {
            u_t,
            u_r,
            g_tilde,
            g,
        })
    }

    pub fn n_t(&self) -> usize {
        self.u_t.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.u_r.nrows()
    }

    pub fn u_t(&self) -> &CMat {
        &self.u_t
    }

    pub fn u_r(&self) -> &CMat {
        &self.u_r
    }

    pub fn g_tilde(&self) -> &DMatrix<f64> {
        &self.g_tilde
    }

    /// Coupling matrix, element-wise square of `g_tilde`.
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn coupling_sum(&self) -> f64 {
        self.g.sum()
    }

    /// Column sums of G: eigenvalues of the transmit correlation.
    pub fn transmit_eigenvalues(&self) -> Vec<f64> {
        (0..self.n_t()).map(|m| self.g.column(m).sum()).collect()
    }

    /// Row sums of G: eigenvalues of the receive correlation.
    pub fn receive_eigenvalues(&self) -> Vec<f64> {
        (0..self.n_r()).map(|n| self.g.row(n).sum()).collect()
    }

    /// `Gᵀ·γ`, length n_t.
    pub fn coupling_t_mul(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n_t())
            .map(|m| (0..self.n_r()).map(|n| self.g[(n, m)] * gamma[n]).sum())
            .collect()
    }

    /// `G·ψ`, length n_r.
    pub fn coupling_mul(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n_r())
            .map(|n| (0..self.n_t()).map(|m| self.g[(n, m)] * psi[m]).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemDims {
    pub k_users: usize,
    pub n_t: usize,
    pub n_r: usize,
}

impl SystemDims {
    /// β = n_t / n_r.
    pub fn beta(&self) -> f64 {
        self.n_t as f64 / self.n_r as f64
    }

    pub fn of(models: &[WeichselbergerModel]) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::invalid("at least one user model is required"))?;
        let (n_t, n_r) = (first.n_t(), first.n_r());
        if models.iter().any(|m| m.n_t() != n_t || m.n_r() != n_r) {
            return Err(Error::invalid("all users must share n_t and n_r"));
        }
        Ok(Self {
            k_users: models.len(),
            n_t,
            n_r,
        })
    }
}

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the phases
/// of R's diagonal absorbed into Q.
pub fn random_unitary(n: usize, seed: u64) -> CMat {
    let mut rng = rng::rng_from(seed);
    let z = rng::complex_gaussian_matrix(n, n, &mut rng);
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Random model with Haar unitaries and `g_tilde` entries drawn as square
/// roots of unit exponentials, then normalized so that Σ G = n_t·n_r.
pub fn random_model(n_t: usize, n_r: usize, seed: u64) -> Result<WeichselbergerModel> {
    if n_t == 0 || n_r == 0 {
        return Err(Error::invalid("antenna counts must be positive"));
    }
    let u_t = random_unitary(n_t, rng::derive_seed(seed, &[stream::CHANNEL_MODEL, 0]));
    let u_r = random_unitary(n_r, rng::derive_seed(seed, &[stream::CHANNEL_MODEL, 1]));
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[stream::CHANNEL_MODEL, 2]));
    let mut g_tilde = DMatrix::zeros(n_r, n_t);
    for n in 0..n_r {
        for m in 0..n_t {
            let e: f64 = Exp1.sample(&mut rng);
            g_tilde[(n, m)] = e.sqrt();
        }
    }
    normalize_coupling(&WeichselbergerModel::new(u_t, u_r, g_tilde)?)
}

/// One random model per user, each derived from its own sub-seed.
pub fn random_models(users: usize, n_t: usize, n_r: usize, seed: u64) -> Result<Vec<WeichselbergerModel>> {
    (0..users)
        .map(|k| random_model(n_t, n_r, rng::derive_seed(seed, &[stream::CHANNEL_MODEL, 100 + k as u64])))
        .collect()
}

/// Draws `H = U_R (G̃ ⊙ W) U_Tᴴ`.
pub fn sample_channel(model: &WeichselbergerModel, seed: u64) -> ChannelRealization {
    let mut rng = rng::rng_from(seed);
    let mut w = rng::complex_gaussian_matrix(model.n_r(), model.n_t(), &mut rng);
    for n in 0..model.n_r() {
        for m in 0..model.n_t() {
            w[(n, m)] *= model.g_tilde[(n, m)];
        }
    }
    ChannelRealization {
        h: &model.u_r * w * model.u_t.adjoint(),
    }
}

/// Transmit and receive correlation matrices `(E[HᴴH], E[HHᴴ])`.
pub fn correlation_matrices(model: &WeichselbergerModel) -> (CMat, CMat) {
    let r_t = linalg::unitary_congruence(&model.u_t, &model.transmit_eigenvalues());
    let r_r = linalg::unitary_congruence(&model.u_r, &model.receive_eigenvalues());
    (r_t, r_r)
}

/// Separately-correlated (Kronecker) statistics expressed as a rank-one
/// coupling `G = λ_R λ_Tᵀ / Σλ`.
pub fn kronecker_as_weichselberger(
    r_t_eigvals: &[f64],
    r_r_eigvals: &[f64],
    u_t: CMat,
    u_r: CMat,
) -> Result<WeichselbergerModel> {
    if r_t_eigvals.iter().chain(r_r_eigvals).any(|&x| !(x >= 0.0)) {
        return Err(Error::invalid("correlation eigenvalues must be nonnegative"));
    }
    if r_t_eigvals.len() != u_t.nrows() || r_r_eigvals.len() != u_r.nrows() {
        return Err(Error::invalid("eigenvalue counts must match the unitary sizes"));
    }
    let st: f64 = r_t_eigvals.iter().sum();
    let sr: f64 = r_r_eigvals.iter().sum();
    if (st - sr).abs() > 1e-10 * st.max(sr).max(1.0) {
        return Err(Error::invalid(format!(
            "transmit and receive correlations carry different energy ({st} vs {sr})"
        )));
    }
    let total = 0.5 * (st + sr);
    let g_tilde = DMatrix::from_fn(r_r_eigvals.len(), r_t_eigvals.len(), |n, m| {
        if total > 0.0 {
            (r_r_eigvals[n] * r_t_eigvals[m] / total).sqrt()
        } else {
            0.0
        }
    });
    WeichselbergerModel::new(u_t, u_r, g_tilde)
}

/// Rescales `g_tilde` so that Σ G = n_t·n_r.
pub fn normalize_coupling(model: &WeichselbergerModel) -> Result<WeichselbergerModel> {
    let sum = model.coupling_sum();
    if !(sum > 0.0) {
        return Err(Error::invalid("cannot normalize an all-zero coupling matrix"));
    }
    let target = (model.n_t() * model.n_r()) as f64;
    let scale = (target / sum).sqrt();
    WeichselbergerModel::new(
        model.u_t.clone(),
        model.u_r.clone(),
        model.g_tilde.map(|x| x * scale),
    )
}

/// Per-user power giving the requested average SNR,
/// `SNR = E[tr(HHᴴ)]·P / (n_t·n_r)`.
pub fn snr_to_power(snr_db: f64, model: &WeichselbergerModel) -> f64 {
    10f64.powf(snr_db / 10.0) * (model.n_t() * model.n_r()) as f64 / model.coupling_sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelJson {
    n_r: usize,
    n_t: usize,
    u_t: Vec<Vec<[f64; 2]>>,
    u_r: Vec<Vec<[f64; 2]>>,
    g_tilde: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ChannelFile {
    version: u32,
    users: Vec<ModelJson>,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

pub fn models_to_json(models: &[WeichselbergerModel]) -> Result<String> {
    let file = ChannelFile {
        version: MODEL_SCHEMA_VERSION,
        users: models
            .iter()
            .map(|m| ModelJson {
                n_r: m.n_r(),
                n_t: m.n_t(),
                u_t: linalg::complex_rows(&m.u_t),
                u_r: linalg::complex_rows(&m.u_r),
                g_tilde: linalg::real_rows(&m.g_tilde),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn models_from_json(text: &str) -> Result<Vec<WeichselbergerModel>> {
    let file: ChannelFile = serde_json::from_str(text)?;
    if file.version != MODEL_SCHEMA_VERSION {
        return Err(Error::invalid(format!(
            "unsupported model schema version {}",
            file.version
        )));
    }
    file.users
        .iter()
        .map(|u| {
            let model = WeichselbergerModel::new(
                linalg::complex_from_rows(&u.u_t)?,
                linalg::complex_from_rows(&u.u_r)?,
                linalg::real_from_rows(&u.g_tilde)?,
            )?;
            if model.n_t() != u.n_t || model.n_r() != u.n_r {
                return Err(Error::invalid("declared n_t/n_r disagree with matrix sizes"));
            }
            Ok(model)
        })
        .collect()
}

pub fn load_models(path: &Path) -> Result<Vec<WeichselbergerModel>> {
    models_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_models(path: &Path, models: &[WeichselbergerModel]) -> Result<()> {
    std::fs::write(path, models_to_json(models)?)?;
    Ok(())
}
