//! Weighted-sum-rate precoder optimization.
//!
//! Every precoder is kept in factored form `B = U·Γ·V` with `U` the user's
//! transmit eigenbasis (optimal by the power-minimality argument, see
//! [`min_power_precoder`]), `Γ` nonnegative diagonal and `V` unitary. One
//! iteration of the optimizer is
//!
//! 1. a projected-gradient step on `Γ²` for every user (clip negatives,
//!    rescale to full power),
//! 2. a gradient step on `V` for every user, projected back onto the unitary
//!    group through the polar factor,
//! 3. a re-solve of the replica fixed points and a re-score of the weighted
//!    sum rate.
//!
//! Both line searches backtrack on the sum rate with the fixed-point
//! parameters frozen. Because the re-solved fixed point is a stationary point
//! of the replica functional, the frozen objective has the same gradient as
//! the true asymptotic rate at the current iterate. An iterate whose
//! re-scored rate falls below the previous one is rejected and retried with
//! half the initial step, so the logged rates never decrease.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{random_unitary, WeichselbergerModel};
use crate::constellation::VectorAlphabet;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, LOG2_E};
use crate::mi_engine::{DiagonalVirtualChannel, Need, NoiseEnsemble, VirtualChannelStats};
use crate::replica::{self, asymptotic_wsr, precoder_hash, ReplicaConfig, WsrEvaluation};
use crate::rng::{self, stream};

/// Below this singular value the Γ² derivative uses its limiting form.
const GAMMA_FLOOR: f64 = 1e-12;
const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderFactors {
    pub u: CMat,
    pub gamma_diag: Vec<f64>,
    pub v: CMat,
}

impl PrecoderFactors {
    pub fn to_matrix(&self) -> CMat {
        let mut ug = self.u.clone();
        for (j, &g) in self.gamma_diag.iter().enumerate() {
            ug.column_mut(j).scale_mut(g);
        }
        ug * &self.v
    }

    /// tr(BBᴴ) = Σ γ².
    pub fn power(&self) -> f64 {
        self.gamma_diag.iter().map(|g| g * g).sum()
    }

    pub fn gamma_sq(&self) -> Vec<f64> {
        self.gamma_diag.iter().map(|g| g * g).collect()
    }

    /// Checks shape, nonnegativity, the power budget and unitarity of `v`.
    pub fn validate(&self, power: f64) -> Result<()> {
        let n = self.gamma_diag.len();
        if self.u.shape() != (n, n) || self.v.shape() != (n, n) {
            return Err(Error::invalid("precoder factors have inconsistent shapes"));
        }
        if self.gamma_diag.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::invalid("singular values must be nonnegative"));
        }
        if self.power() > power + 1e-9 {
            return Err(Error::invalid(format!(
                "precoder power {} exceeds the budget {power}",
                self.power()
            )));
        }
        if (self.v.adjoint() * &self.v - linalg::identity(n)).norm() > 1e-9 {
            return Err(Error::invalid("V is not unitary"));
        }
        Ok(())
    }
}

pub fn to_matrices(precoders: &[PrecoderFactors]) -> Vec<CMat> {
    precoders.iter().map(PrecoderFactors::to_matrix).collect()
}

/// A weighted-sum-rate instance. Users are stored in decoding order, i.e.
/// with nonincreasing weights.
#[derive(Debug, Clone)]
pub struct WsrProblem {
    pub models: Vec<WeichselbergerModel>,
    pub weights_mu: Vec<f64>,
    pub powers: Vec<f64>,
    pub alphabets: Vec<VectorAlphabet>,
    pub noise: NoiseEnsemble,
    pub replica: ReplicaConfig,
}

impl WsrProblem {
    pub fn new(
        models: Vec<WeichselbergerModel>,
        weights_mu: Vec<f64>,
        powers: Vec<f64>,
        alphabets: Vec<VectorAlphabet>,
        noise: NoiseEnsemble,
        replica: ReplicaConfig,
    ) -> Result<Self> {
        let k = models.len();
        if k == 0 || weights_mu.len() != k || powers.len() != k || alphabets.len() != k {
            return Err(Error::invalid("need one model, weight, power and alphabet per user"));
        }
        replica::weight_deltas(&weights_mu)?;
        if powers.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("powers must be positive and finite"));
        }
        for (m, a) in models.iter().zip(&alphabets) {
            if a.n_t() != m.n_t() || noise.dim() != m.n_t() || m.n_r() != models[0].n_r() {
                return Err(Error::invalid("inconsistent antenna dimensions across users"));
            }
        }
        Ok(Self {
            models,
            weights_mu,
            powers,
            alphabets,
            noise,
            replica,
        })
    }

    pub fn k_users(&self) -> usize {
        self.models.len()
    }

    pub fn deltas(&self) -> Vec<f64> {
        replica::weight_deltas(&self.weights_mu).expect("validated at construction")
    }

    pub fn evaluate(&self, precoders: &[PrecoderFactors], warm: Option<&WsrEvaluation>) -> Result<WsrEvaluation> {
        self.evaluate_matrices(&to_matrices(precoders), warm)
    }

    pub fn evaluate_matrices(&self, precoders: &[CMat], warm: Option<&WsrEvaluation>) -> Result<WsrEvaluation> {
        asymptotic_wsr(
            &self.models,
            precoders,
            &self.weights_mu,
            &self.alphabets,
            &self.replica,
            &self.noise,
            warm,
        )
    }

    fn virtual_channel<'a>(&'a self, l: usize, t_diag: &'a [f64], b: &'a CMat) -> DiagonalVirtualChannel<'a> {
        DiagonalVirtualChannel {
            basis: self.models[l].u_t(),
            t: t_diag,
            b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Armijo sufficient-increase parameter.
    pub theta: f64,
    /// Backtracking shrink factor.
    pub omega: f64,
    /// Stop once an iteration gains less than this many bits.
    pub wsr_tol: f64,
    /// Maximum trace length, the initial point included.
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Re-solve the fixed points inside the loop from the previous solution
    /// only (falling back to all starts if that fails). The initial and final
    /// evaluations always use every start.
    pub warm_resolve: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            omega: 0.5,
            wsr_tol: 1e-3,
            max_iters: 100,
            restarts: 4,
            seed: 0,
            warm_resolve: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 0.5) {
            return Err(Error::invalid("theta must lie in (0, 0.5)"));
        }
        if !(self.omega > 0.0 && self.omega < 1.0) {
            return Err(Error::invalid("omega must lie in (0, 1)"));
        }
        if !(self.wsr_tol >= 0.0) || self.max_iters == 0 || self.restarts == 0 {
            return Err(Error::invalid("need wsr_tol >= 0, max_iters > 0 and restarts > 0"));
        }
        Ok(())
    }
}

/// Step sizes accepted in one iteration, per user; 0 marks a skipped update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSteps {
    pub gamma: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTrace {
    /// Asymptotic WSR after each iteration; entry 0 is the initial point.
    pub wsr: Vec<f64>,
    pub steps: Vec<IterationSteps>,
    /// Restart that produced the returned precoders.
    pub restart: usize,
    /// Whether that restart stopped on the tolerance rather than the budget.
    pub converged: bool,
    /// Final rate of every restart.
    pub restart_wsr: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub precoders: Vec<PrecoderFactors>,
    pub trace: OptimizerTrace,
    /// Multi-start evaluation of the returned precoders.
    pub evaluation: WsrEvaluation,
}

/// Clips negative entries and rescales to total power exactly `p`. An
/// all-zero input becomes the equal split.
pub fn project_power(gamma_sq: &[f64], p: f64) -> Vec<f64> {
    let clipped: Vec<f64> = gamma_sq.iter().map(|&x| x.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if sum > 0.0 {
        clipped.iter().map(|x| x * (p / sum)).collect()
    } else {
        vec![p / gamma_sq.len() as f64; gamma_sq.len()]
    }
}

/// Nearest unitary matrix in Frobenius norm: the polar factor `U_V·V_V` of
/// the SVD `Ṽ = U_V·Σ·V_V`.
pub fn project_stiefel(v_tilde: &CMat) -> Result<CMat> {
    let svd = v_tilde.clone().svd(true, true);
    let s_min = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(s_min > 1e-12) {
        return Err(Error::NumericalRank(format!(
            "cannot project onto the unitary group: smallest singular value {s_min:e}"
        )));
    }
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    Ok(u * v_t)
}

/// Equal-power start for one restart: restart 0 reproduces the unprecoded
/// `√(P/n_t)·I` (V = U_Tᴴ), restart 1 uses V = I, later restarts draw V at
/// random.
pub fn init_precoders(problem: &WsrProblem, restart: usize, seed: u64) -> Vec<PrecoderFactors> {
    problem
        .models
        .iter()
        .zip(&problem.powers)
        .enumerate()
        .map(|(l, (m, &p))| {
            let n = m.n_t();
            let v = match restart {
                0 => m.u_t().adjoint(),
                1 => linalg::identity(n),
                _ => random_unitary(n, rng::derive_seed(seed, &[stream::RESTART, restart as u64, l as u64])),
            };
            PrecoderFactors {
                u: m.u_t().clone(),
                gamma_diag: vec![(p / n as f64).sqrt(); n],
                v,
            }
        })
        .collect()
}

/// `√T·U`, the map from Γ·V-space to the effective virtual channel.
fn shaping(u_t: &CMat, t_diag: &[f64], u: &CMat) -> CMat {
    let roots: Vec<f64> = t_diag.iter().map(|&t| t.max(0.0).sqrt()).collect();
    linalg::unitary_congruence(u_t, &roots) * u
}

/// ∂I/∂(Γ²) in bits for one virtual channel.
fn gamma_sq_partial(u_t: &CMat, t_diag: &[f64], f: &PrecoderFactors, stats: &VirtualChannelStats) -> Vec<f64> {
    let k = stats.sensitivity.as_ref().expect("full statistics");
    let e = stats.e.as_ref().expect("full statistics");
    let s = shaping(u_t, t_diag, &f.u);
    let vks = &f.v * k.adjoint() * &s;
    let ss = s.adjoint() * &s;
    let vev = &f.v * e * f.v.adjoint();
    f.gamma_diag
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if g > GAMMA_FLOOR {
                LOG2_E * vks[(i, i)].re / g
            } else {
                LOG2_E * ss[(i, i)].re * vev[(i, i)].re
            }
        })
        .collect()
}

/// Euclidean gradient of I (bits) with respect to V for one virtual
/// channel: the directional derivative along `dV` is `Re tr(Gᴴ dV)`.
fn v_partial(u_t: &CMat, t_diag: &[f64], f: &PrecoderFactors, stats: &VirtualChannelStats) -> CMat {
    let k = stats.sensitivity.as_ref().expect("full statistics");
    let s = shaping(u_t, t_diag, &f.u);
    let mut gs = s.adjoint();
    for (i, &g) in f.gamma_diag.iter().enumerate() {
        gs.row_mut(i).scale_mut(2.0 * LOG2_E * g);
    }
    gs * k
}

fn check_cache(eval: &WsrEvaluation, precoders: &[PrecoderFactors]) -> Result<Vec<CMat>> {
    let mats = to_matrices(precoders);
    for term in &eval.terms {
        if term.k > mats.len() || precoder_hash(&mats[..term.k]) != term.state.precoder_hash {
            return Err(Error::InvalidState(format!(
                "cached fixed point for users 1..{} does not match the precoders",
                term.k
            )));
        }
    }
    Ok(mats)
}

/// ∇_{Γ²} of the asymptotic WSR for user `l` (0-based), in bits per unit
/// power, from the cached fixed points in `eval`.
pub fn grad_gamma_sq(
    problem: &WsrProblem,
    precoders: &[PrecoderFactors],
    eval: &WsrEvaluation,
    l: usize,
) -> Result<Vec<f64>> {
    check_cache(eval, precoders)?;
    let n = problem.models[l].n_t();
    let mut grad = vec![0.0; n];
    for term in eval.terms.iter().filter(|t| t.k > l) {
        let u = &term.state.users[l];
        let g = gamma_sq_partial(problem.models[l].u_t(), &u.t_diag, &precoders[l], &u.stats);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += term.delta * b;
        }
    }
    Ok(grad)
}

/// Euclidean ∇_V of the asymptotic WSR for user `l` from cached fixed points.
pub fn grad_v(problem: &WsrProblem, precoders: &[PrecoderFactors], eval: &WsrEvaluation, l: usize) -> Result<CMat> {
    check_cache(eval, precoders)?;
    let n = problem.models[l].n_t();
    let mut grad = CMat::zeros(n, n);
    for term in eval.terms.iter().filter(|t| t.k > l) {
        let u = &term.state.users[l];
        grad += v_partial(problem.models[l].u_t(), &u.t_diag, &precoders[l], &u.stats) * linalg::c(term.delta);
    }
    Ok(grad)
}

/// Weighted-sum-rate bookkeeping with every fixed point frozen: the rate is
/// a constant plus Σ_k Δ_k Σ_t I_t^{(k)}(B_t), separable across users.
struct FrozenObjective<'a> {
    problem: &'a WsrProblem,
    eval: &'a WsrEvaluation,
    /// `mi[i][t]`: current MI of user t in term i.
    mi: Vec<Vec<f64>>,
    value: f64,
}

impl<'a> FrozenObjective<'a> {
    fn new(problem: &'a WsrProblem, eval: &'a WsrEvaluation) -> Self {
        Self {
            problem,
            eval,
            mi: eval.terms.iter().map(|t| t.rate.per_user_mi.clone()).collect(),
            value: eval.value_bits,
        }
    }

    /// Objective with user `l` switched to `b`, plus that user's new MIs.
    fn trial(&self, l: usize, b: &CMat) -> Result<(f64, Vec<(usize, f64)>)> {
        let mut value = self.value;
        let mut changes = Vec::new();
        for (i, term) in self.eval.terms.iter().enumerate().filter(|(_, t)| t.k > l) {
            let ch = self.problem.virtual_channel(l, &term.state.users[l].t_diag, b);
            let mi = ch
                .stats(&self.problem.alphabets[l], &self.problem.noise, Need::MutualInformation)?
                .mi_bits;
            value += term.delta * (mi - self.mi[i][l]);
            changes.push((i, mi));
        }
        Ok((value, changes))
    }

    fn accept(&mut self, l: usize, value: f64, changes: Vec<(usize, f64)>) {
        for (i, mi) in changes {
            self.mi[i][l] = mi;
        }
        self.value = value;
    }

    /// Full statistics of user `l` at `b` for every term it belongs to.
    fn user_stats(&self, l: usize, b: &CMat) -> Result<Vec<(f64, Vec<f64>, VirtualChannelStats)>> {
        self.eval
            .terms
            .iter()
            .filter(|t| t.k > l)
            .map(|term| {
                let t_diag = &term.state.users[l].t_diag;
                let ch = self.problem.virtual_channel(l, t_diag, b);
                let stats = ch.stats(&self.problem.alphabets[l], &self.problem.noise, Need::All)?;
                Ok((term.delta, t_diag.clone(), stats))
            })
            .collect()
    }
}

/// Ascent direction on the power simplex: the gradient minus its mean over
/// the free coordinates, where coordinates at zero power whose gradient is
/// below that mean are held fixed. It vanishes exactly at KKT points of
/// `max f(x)` subject to `x ≥ 0, Σx = P`.
fn simplex_direction(x: &[f64], g: &[f64], p: f64) -> Vec<f64> {
    let floor = 1e-15 * p;
    let mut free = vec![true; x.len()];
    loop {
        let count = free.iter().filter(|&&f| f).count();
        let mean = g.iter().zip(&free).filter(|(_, &f)| f).map(|(v, _)| v).sum::<f64>() / count as f64;
        let mut changed = false;
        for i in 0..x.len() {
            if free[i] && x[i] <= floor && g[i] < mean {
                free[i] = false;
                changed = true;
            }
        }
        if !changed {
            return g
                .iter()
                .zip(&free)
                .map(|(&v, &f)| if f { v - mean } else { 0.0 })
                .collect();
        }
    }
}

fn gamma_pass(
    obj: &mut FrozenObjective,
    f: &mut PrecoderFactors,
    l: usize,
    step0: f64,
    cfg: &OptimizerConfig,
) -> Result<f64> {
    let problem = obj.problem;
    let power = problem.powers[l];
    let u_t = problem.models[l].u_t();
    let mut grad = vec![0.0; f.gamma_diag.len()];
    for (delta, t_diag, stats) in obj.user_stats(l, &f.to_matrix())? {
        for (a, b) in grad.iter_mut().zip(gamma_sq_partial(u_t, &t_diag, f, &stats)) {
            *a += delta * b;
        }
    }
    // The search runs on the power fractions Γ²/P, whose gradient is P·∇.
    let x = f.gamma_sq();
    let dir = simplex_direction(&x, &grad, power);
    let mut step = step0;
    while step >= MIN_STEP {
        let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * power * power * d).collect();
        let x_new = project_power(&trial, power);
        let ascent: f64 = grad.iter().zip(x_new.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
        if ascent > 0.0 {
            let cand = PrecoderFactors {
                gamma_diag: x_new.iter().map(|v| v.sqrt()).collect(),
                ..f.clone()
            };
            let (value, changes) = obj.trial(l, &cand.to_matrix())?;
            if value >= obj.value + cfg.theta * ascent {
                obj.accept(l, value, changes);
                *f = cand;
                return Ok(step);
            }
        }
        step *= cfg.omega;
    }
    Ok(0.0)
}

fn v_pass(obj: &mut FrozenObjective, f: &mut PrecoderFactors, l: usize, step0: f64, cfg: &OptimizerConfig) -> Result<f64> {
    let u_t = obj.problem.models[l].u_t();
    let n = f.v.nrows();
    let mut grad = CMat::zeros(n, n);
    for (delta, t_diag, stats) in obj.user_stats(l, &f.to_matrix())? {
        grad += v_partial(u_t, &t_diag, f, &stats) * linalg::c(delta);
    }
    let mut step = step0;
    while step >= MIN_STEP {
        let v_new = project_stiefel(&(&f.v + &grad * linalg::c(step)))?;
        let ascent = linalg::re_inner(&grad, &(&v_new - &f.v));
        if ascent > 0.0 {
            let cand = PrecoderFactors {
                v: v_new,
                ..f.clone()
            };
            let (value, changes) = obj.trial(l, &cand.to_matrix())?;
            if value >= obj.value + cfg.theta * ascent {
                obj.accept(l, value, changes);
                *f = cand;
                return Ok(step);
            }
        }
        step *= cfg.omega;
    }
    Ok(0.0)
}

struct RestartOutcome {
    precoders: Vec<PrecoderFactors>,
    eval: WsrEvaluation,
    wsr: Vec<f64>,
    steps: Vec<IterationSteps>,
    converged: bool,
}

fn resolve(problem: &WsrProblem, precoders: &[PrecoderFactors], warm: &WsrEvaluation, cfg: &OptimizerConfig) -> Result<WsrEvaluation> {
    let mats = to_matrices(precoders);
    if cfg.warm_resolve {
        let continued = replica::asymptotic_wsr_continued(
            &problem.models,
            &mats,
            &problem.weights_mu,
            &problem.alphabets,
            &problem.replica,
            &problem.noise,
            warm,
        );
        if let Ok(e) = continued {
            return Ok(e);
        }
    }
    problem.evaluate_matrices(&mats, Some(warm))
}

fn run_restart(problem: &WsrProblem, cfg: &OptimizerConfig, restart: usize) -> Result<RestartOutcome> {
    let mut precoders = init_precoders(problem, restart, cfg.seed);
    let mut eval = problem
        .evaluate(&precoders, None)
        .map_err(|e| e.with_context(format!("restart {restart}, initial point")))?;
    let mut wsr = vec![eval.value_bits];
    let mut steps = Vec::new();
    let mut step0 = 1.0;
    let mut converged = false;
    while wsr.len() < cfg.max_iters {
        let iteration = wsr.len();
        let mut cand = precoders.clone();
        let mut taken = IterationSteps {
            gamma: vec![0.0; cand.len()],
            v: vec![0.0; cand.len()],
        };
        {
            let mut obj = FrozenObjective::new(problem, &eval);
            for l in 0..cand.len() {
                taken.gamma[l] = gamma_pass(&mut obj, &mut cand[l], l, step0, cfg)?;
            }
            for l in 0..cand.len() {
                taken.v[l] = v_pass(&mut obj, &mut cand[l], l, step0, cfg)?;
            }
        }
        if taken.gamma.iter().chain(&taken.v).all(|&s| s == 0.0) {
            converged = true;
            break;
        }
        let new_eval = resolve(problem, &cand, &eval, cfg)
            .map_err(|e| e.with_context(format!("restart {restart}, iteration {iteration}")))?;
        let prev = *wsr.last().expect("nonempty");
        if new_eval.value_bits < prev {
            step0 *= 0.5;
            if step0 < MIN_STEP {
                converged = true;
                break;
            }
            continue;
        }
        let gain = new_eval.value_bits - prev;
        precoders = cand;
        eval = new_eval;
        wsr.push(eval.value_bits);
        steps.push(taken);
        if gain < cfg.wsr_tol {
            converged = true;
            break;
        }
    }
    Ok(RestartOutcome {
        precoders,
        eval,
        wsr,
        steps,
        converged,
    })
}

/// Runs the optimizer from `cfg.restarts` starting points and returns the
/// best result.
pub fn optimize(problem: &WsrProblem, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let outcomes = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(problem, cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let restart_wsr: Vec<f64> = outcomes.iter().map(|o| *o.wsr.last().expect("nonempty")).collect();
    let best = restart_wsr
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > restart_wsr[best] { i } else { best });
    let out = outcomes.into_iter().nth(best).expect("index in range");
    // Re-score with every fixed-point start so the reported value does not
    // depend on the warm-started branch.
    let evaluation = if cfg.warm_resolve {
        problem.evaluate(&out.precoders, Some(&out.eval))?
    } else {
        out.eval
    };
    Ok(OptimizeResult {
        precoders: out.precoders,
        trace: OptimizerTrace {
            wsr: out.wsr,
            steps: out.steps,
            restart: best,
            converged: out.converged,
            restart_wsr,
        },
        evaluation,
    })
}

/// `B = √(P/n_t)·I` for every user.
pub fn no_precoding_baseline(problem: &WsrProblem) -> Vec<PrecoderFactors> {
    problem
        .models
        .iter()
        .zip(&problem.powers)
        .map(|(m, &p)| {
            let n = m.n_t();
            PrecoderFactors {
                u: linalg::identity(n),
                gamma_diag: vec![(p / n as f64).sqrt(); n],
                v: linalg::identity(n),
            }
        })
        .collect()
}

/// Water-filling of power `p` over parallel channels with the given gains:
/// `p_i = max(0, μ − 1/g_i)`. Returns the powers and the water level μ.
pub fn water_fill(gains: &[f64], p: f64) -> (Vec<f64>, f64) {
    let alloc = |mu: f64| -> Vec<f64> {
        gains
            .iter()
            .map(|&g| if g > 0.0 { (mu - 1.0 / g).max(0.0) } else { 0.0 })
            .collect()
    };
    let best = gains.iter().copied().fold(0.0, f64::max);
    if !(best > 0.0) || !(p > 0.0) {
        return (vec![0.0; gains.len()], 0.0);
    }
    let (mut lo, mut hi) = (1.0 / best, 1.0 / best + p);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() > p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut powers = alloc(mu);
    // Remove the residual bisection error from the active set.
    let active = powers.iter().filter(|&&x| x > 0.0).count().max(1);
    let fix = (p - powers.iter().sum::<f64>()) / active as f64;
    for x in powers.iter_mut().filter(|x| **x > 0.0) {
        *x += fix;
    }
    (powers, mu)
}

/// Simplified Gaussian-input design: eigenbeamforming along `U_T` with
/// water-filling over the transmit-correlation eigenvalues treated as
/// parallel channel gains. An approximation of a Gaussian-optimal design, not
/// the optimum itself.
pub fn gaussian_waterfilling_baseline(problem: &WsrProblem) -> Vec<PrecoderFactors> {
    problem
        .models
        .iter()
        .zip(&problem.powers)
        .map(|(m, &p)| {
            let (powers, _) = water_fill(&m.transmit_eigenvalues(), p);
            PrecoderFactors {
                u: m.u_t().clone(),
                gamma_diag: powers.iter().map(|x| x.sqrt()).collect(),
                v: linalg::identity(m.n_t()),
            }
        })
        .collect()
}

/// Minimum-power precoder realizing a prescribed `Q = Bᴴ·T·B` for
/// `T = U_T·diag(t)·U_Tᴴ` (all `t > 0`): `B = U_T·diag(t)^{-1/2}·Γ_Q^{1/2}·U_Qᴴ`
/// with the largest eigenvalues of `Q` paired with the largest `t`.
pub fn min_power_precoder(u_t: &CMat, t_diag: &[f64], q: &CMat) -> Result<CMat> {
    let n = t_diag.len();
    if u_t.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::invalid("dimension mismatch"));
    }
    if t_diag.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::invalid("T must be positive definite"));
    }
    let (q_vals, q_vecs) = linalg::hermitian_eigen(q);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t_diag[a].total_cmp(&t_diag[b]));
    // q_vals ascending; pair the i-th smallest with the i-th smallest t.
    let mut mid = CMat::zeros(n, n);
    for (rank, &col) in order.iter().enumerate() {
        let scale = (q_vals[rank].max(0.0) / t_diag[col]).sqrt();
        for j in 0..n {
            mid[(col, j)] = q_vecs[(j, rank)].conj() * scale;
        }
    }
    Ok(u_t * mid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FactorsJson {
    u: Vec<Vec<[f64; 2]>>,
    gamma_diag: Vec<f64>,
    v: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrecoderFile {
    version: u32,
    users: Vec<FactorsJson>,
}

pub const PRECODER_SCHEMA_VERSION: u32 = 1;

/// `{"version": 1, "users": [{"u": .., "gamma_diag": [..], "v": ..}]}` with
/// complex matrices as row-major `[re, im]` pairs.
pub fn precoders_to_json(precoders: &[PrecoderFactors]) -> Result<String> {
    let file = PrecoderFile {
        version: PRECODER_SCHEMA_VERSION,
        users: precoders
            .iter()
            .map(|f| FactorsJson {
                u: linalg::complex_rows(&f.u),
                gamma_diag: f.gamma_diag.clone(),
                v: linalg::complex_rows(&f.v),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn precoders_from_json(text: &str) -> Result<Vec<PrecoderFactors>> {
    let file: PrecoderFile = serde_json::from_str(text)?;
    if file.version != PRECODER_SCHEMA_VERSION {
        return Err(Error::invalid(format!("unsupported precoder file version {}", file.version)));
    }
    file.users
        .iter()
        .map(|u| {
            let f = PrecoderFactors {
                u: linalg::complex_from_rows(&u.u)?,
                gamma_diag: u.gamma_diag.clone(),
                v: linalg::complex_from_rows(&u.v)?,
            };
            let n = f.gamma_diag.len();
            if f.u.shape() != (n, n) || f.v.shape() != (n, n) {
                return Err(Error::invalid("precoder factor shapes do not match gamma_diag"));
            }
            Ok(f)
        })
        .collect()
}
