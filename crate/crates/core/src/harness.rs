//! Experiment runner: SNR sweeps, convergence traces, rate regions and
//! exact-vs-asymptotic validation, with CSV output.
//!
//! Every random stream is derived from [`ExperimentSpec::seed`]; the `seed`
//! fields inside the nested `optimizer`, `replica` and `mc` sections are
//! overwritten. Rows are sorted before they are written and timings are only
//! recorded on request, so identical specs produce byte-identical files.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, WeichselbergerModel};
use crate::constellation::{make_constellation, ConstellationKind, VectorAlphabet};
use crate::error::{Error, Result};
use crate::mi_engine::{self, ExactMcConfig, McEstimate, NoiseEnsemble};
use crate::optimizer::{self, OptimizerConfig, PrecoderFactors, WsrProblem};
use crate::replica::{self, ReplicaConfig};
use crate::rng::{derive_seed, stream};

/// Version written into the header comment of every CSV file.
pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FAP")]
    Fap,
    #[serde(rename = "NP")]
    Np,
    #[serde(rename = "GP")]
    Gp,
    #[serde(rename = "EXACT_MC")]
    ExactMc,
    #[serde(rename = "ASY")]
    Asy,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Fap => "FAP",
            Method::Np => "NP",
            Method::Gp => "GP",
            Method::ExactMc => "EXACT_MC",
            Method::Asy => "ASY",
        }
    }

    /// True for the tags that name a precoder design.
    pub fn is_design(self) -> bool {
        matches!(self, Method::Fap | Method::Np | Method::Gp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FAP" => Ok(Method::Fap),
            "NP" => Ok(Method::Np),
            "GP" => Ok(Method::Gp),
            "EXACT_MC" => Ok(Method::ExactMc),
            "ASY" => Ok(Method::Asy),
            _ => Err(Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Model JSON as written by `channel::save_models`.
    File { path: PathBuf },
    /// Seeded random Weichselberger models; the seed defaults to one derived
    /// from the experiment seed.
    Random {
        users: usize,
        n_t: usize,
        n_r: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modulation {
    pub kind: ConstellationKind,
    pub order: usize,
}

fn default_modulation() -> Vec<Modulation> {
    vec![Modulation {
        kind: ConstellationKind::Psk,
        order: 4,
    }]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Np, Method::Fap]
}

fn default_noise_samples() -> usize {
    500
}

fn default_gap_tolerance() -> f64 {
    0.3
}

/// A complete experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub model: ModelSource,
    /// One entry shared by all users, or one per user.
    #[serde(default = "default_modulation")]
    pub modulation: Vec<Modulation>,
    /// Strictly increasing.
    pub snr_db: Vec<f64>,
    /// One weight per user, in the model's user order.
    pub weights: Vec<f64>,
    /// Precoder designs to run; `EXACT_MC` adds an exact Monte-Carlo row
    /// for each design.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub replica: ReplicaConfig,
    #[serde(default)]
    pub mc: ExactMcConfig,
    /// Size of the noise ensemble used by the asymptotic rates.
    #[serde(default = "default_noise_samples")]
    pub noise_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Largest |asymptotic − exact| accepted by [`run_validation`].
    #[serde(default = "default_gap_tolerance")]
    pub gap_tolerance: f64,
    /// Write measured wall times instead of zeros (breaks byte-identical
    /// reruns).
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for ExperimentSpec {
    /// Two users, 2×2 antennas, QPSK, −10..20 dB in 5 dB steps, equal weights.
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            model: ModelSource::Random {
                users: 2,
                n_t: 2,
                n_r: 2,
                seed: None,
            },
            modulation: default_modulation(),
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            weights: vec![1.0, 1.0],
            methods: default_methods(),
            optimizer: OptimizerConfig::default(),
            replica: ReplicaConfig::default(),
            mc: ExactMcConfig::default(),
            noise_samples: default_noise_samples(),
            seed: 0,
            output: None,
            gap_tolerance: default_gap_tolerance(),
            record_timing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn users(&self) -> Result<usize> {
        match &self.model {
            ModelSource::Random { users, .. } => Ok(*users),
            ModelSource::File { path } => Ok(channel::load_models(path)?.len()),
        }
    }

    /// Checks everything that does not need the model file.
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.iter().any(|s| !s.is_finite()) || self.snr_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("snr_db must be finite and strictly increasing"));
        }
        if self.weights.is_empty() || self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be nonempty, finite and nonnegative"));
        }
        if let ModelSource::Random { users, n_t, n_r, .. } = self.model {
            if users != self.weights.len() {
                return Err(Error::invalid("need one weight per user"));
            }
            if users == 0 || n_t == 0 || n_r == 0 {
                return Err(Error::invalid("users, n_t and n_r must be positive"));
            }
        }
        if self.modulation.is_empty() || (self.modulation.len() != 1 && self.modulation.len() != self.weights.len()) {
            return Err(Error::invalid("give one modulation for all users or one per user"));
        }
        if self.methods.contains(&Method::Asy) {
            return Err(Error::invalid("ASY is an output tag, not a method to run"));
        }
        if self.noise_samples == 0 {
            return Err(Error::invalid("noise_samples must be positive"));
        }
        if !(self.gap_tolerance >= 0.0) {
            return Err(Error::invalid("gap_tolerance must be nonnegative"));
        }
        self.optimizer.validate()
    }

    fn designs(&self) -> Vec<Method> {
        let mut d: Vec<Method> = self.methods.iter().copied().filter(|m| m.is_design()).collect();
        d.sort();
        d.dedup();
        d
    }
}

/// Models, alphabets and noise ensemble shared by every point of a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub models: Vec<WeichselbergerModel>,
    pub alphabets: Vec<VectorAlphabet>,
    pub noise: NoiseEnsemble,
}

pub fn build_setup(spec: &ExperimentSpec) -> Result<Setup> {
    spec.validate()?;
    let models = match &spec.model {
        ModelSource::File { path } => channel::load_models(path)?,
        ModelSource::Random { users, n_t, n_r, seed } => channel::random_models(
            *users,
            *n_t,
            *n_r,
            seed.unwrap_or_else(|| derive_seed(spec.seed, &[stream::CHANNEL_MODEL])),
        )?,
    };
    if models.len() != spec.weights.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} users",
            spec.weights.len(),
            models.len()
        )));
    }
    let n_t = models[0].n_t();
    if models.iter().any(|m| m.n_t() != n_t) {
        return Err(Error::invalid("all users must have the same number of transmit antennas"));
    }
    let alphabets = (0..models.len())
        .map(|k| {
            let m = spec.modulation[k.min(spec.modulation.len() - 1)];
            VectorAlphabet::new(make_constellation(m.kind, m.order)?, n_t)
        })
        .collect::<Result<Vec<_>>>()?;
    let noise = NoiseEnsemble::new(n_t, spec.noise_samples, derive_seed(spec.seed, &[stream::NOISE]))?;
    Ok(Setup {
        models,
        alphabets,
        noise,
    })
}

/// The WSR problem at one SNR, with users reordered by nonincreasing weight
/// (stable). `order[i]` is the original index of problem user `i`.
pub fn build_problem(spec: &ExperimentSpec, setup: &Setup, snr_db: f64, weights: &[f64]) -> Result<(WsrProblem, Vec<usize>)> {
    if weights.len() != setup.models.len() {
        return Err(Error::invalid("need one weight per user"));
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    let models: Vec<_> = order.iter().map(|&k| setup.models[k].clone()).collect();
    let powers = models.iter().map(|m| channel::snr_to_power(snr_db, m)).collect();
    let replica = ReplicaConfig {
        seed: derive_seed(spec.seed, &[stream::FIXED_POINT]),
        ..spec.replica
    };
    let problem = WsrProblem::new(
        models,
        order.iter().map(|&k| weights[k]).collect(),
        powers,
        order.iter().map(|&k| setup.alphabets[k].clone()).collect(),
        setup.noise.clone(),
        replica,
    )?;
    Ok((problem, order))
}

/// Precoders for one design, with the optimizer's iteration count.
#[derive(Debug, Clone)]
pub struct Design {
    pub method: Method,
    pub precoders: Vec<PrecoderFactors>,
    pub wsr_bits: f64,
    pub iterations: usize,
    pub trace: Option<optimizer::OptimizerTrace>,
}

pub fn run_design(problem: &WsrProblem, method: Method, cfg: &OptimizerConfig, seed: u64) -> Result<Design> {
    let (precoders, trace) = match method {
        Method::Fap => {
            let res = optimizer::optimize(problem, &OptimizerConfig { seed, ..*cfg })?;
            return Ok(Design {
                method,
                iterations: res.trace.wsr.len() - 1,
                wsr_bits: res.evaluation.value_bits,
                precoders: res.precoders,
                trace: Some(res.trace),
            });
        }
        Method::Np => (optimizer::no_precoding_baseline(problem), None),
        Method::Gp => (optimizer::gaussian_waterfilling_baseline(problem), None),
        other => return Err(Error::invalid(format!("{other} is not a precoder design"))),
    };
    let wsr_bits = problem.evaluate(&precoders, None)?.value_bits;
    Ok(Design {
        method,
        precoders,
        wsr_bits,
        iterations: 0,
        trace,
    })
}

/// Exact weighted sum rate `Σ_k Δ_k·I(d_1..d_k; y | d_{k+1}..d_K)` by nested
/// Monte Carlo. The standard error treats the terms as independent.
pub fn exact_wsr_mc(problem: &WsrProblem, precoders: &[PrecoderFactors], cfg: &ExactMcConfig) -> Result<McEstimate> {
    let matrices = optimizer::to_matrices(precoders);
    let mut bits = 0.0;
    let mut var = 0.0;
    for (k, delta) in problem.deltas().into_iter().enumerate() {
        if delta > 0.0 {
            let subset: Vec<usize> = (0..=k).collect();
            let est = mi_engine::exact_conditional_mi_mc(&problem.models, &matrices, &subset, &problem.alphabets, cfg)?;
            bits += delta * est.bits;
            var += (delta * est.std_err).powi(2);
        }
    }
    Ok(McEstimate {
        bits,
        std_err: var.sqrt(),
    })
}

/// Fails with a resource-limit error if exact MC would enumerate more joint
/// symbols than `cfg.cap`.
pub fn check_exact_cap(setup: &Setup, cfg: &ExactMcConfig) -> Result<()> {
    let all: Vec<usize> = (0..setup.alphabets.len()).collect();
    mi_engine::joint_alphabet_size(&setup.alphabets, &all, cfg.cap).map(|_| ())
}

fn point_seed(spec: &ExperimentSpec, index: usize) -> u64 {
    derive_seed(spec.seed, &[stream::SWEEP_POINT, index as u64])
}

fn mc_config(spec: &ExperimentSpec) -> ExactMcConfig {
    // Shared by every point and design, so all exact rows see the same
    // channel realizations.
    ExactMcConfig {
        seed: derive_seed(spec.seed, &[stream::EXACT_MC]),
        ..spec.mc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowStatus {
    #[serde(rename = "ok")]
    Ok,
    #[serde(rename = "skipped-cap")]
    SkippedCap,
}

impl RowStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::SkippedCap => "skipped-cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub method: Method,
    /// Design that produced the precoders the row was evaluated on.
    pub precoder: Method,
    /// NaN when the row was skipped.
    pub wsr_bits: f64,
    /// Zero for deterministic evaluations.
    pub std_err: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub seed: u64,
    pub status: RowStatus,
}

pub const SWEEP_COLUMNS: &str = "snr_db,method,precoder,wsr_bits,std_err,iterations,wall_time_s,seed,status";

fn header(kind: &str, spec: &ExperimentSpec) -> String {
    let name: String = spec.scenario.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    format!("# fapmac {kind} v{CSV_VERSION} scenario={name} seed={}\n", spec.seed)
}

pub fn sweep_csv(spec: &ExperimentSpec, rows: &[SweepRow]) -> String {
    let mut out = header("sweep", spec);
    out.push_str(SWEEP_COLUMNS);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.method,
            r.precoder,
            r.wsr_bits,
            r.std_err,
            r.iterations,
            r.wall_time_s,
            r.seed,
            r.status.tag()
        );
    }
    out
}

fn elapsed(spec: &ExperimentSpec, start: Instant) -> f64 {
    if spec.record_timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

fn sweep_point(spec: &ExperimentSpec, setup: &Setup, index: usize, snr_db: f64) -> Result<Vec<SweepRow>> {
    let seed = point_seed(spec, index);
    let (problem, _) = build_problem(spec, setup, snr_db, &spec.weights)?;
    let exact = spec.methods.contains(&Method::ExactMc);
    let capped = exact && check_exact_cap(setup, &spec.mc).is_err();
    let mc = mc_config(spec);
    let mut rows = Vec::new();
    for method in spec.designs() {
        let start = Instant::now();
        let design = run_design(&problem, method, &spec.optimizer, seed)?;
        rows.push(SweepRow {
            snr_db,
            method,
            precoder: method,
            wsr_bits: design.wsr_bits,
            std_err: 0.0,
            iterations: design.iterations,
            wall_time_s: elapsed(spec, start),
            seed,
            status: RowStatus::Ok,
        });
        if exact {
            let start = Instant::now();
            let (est, status) = if capped {
                (
                    McEstimate {
                        bits: f64::NAN,
                        std_err: f64::NAN,
                    },
                    RowStatus::SkippedCap,
                )
            } else {
                (exact_wsr_mc(&problem, &design.precoders, &mc)?, RowStatus::Ok)
            };
            rows.push(SweepRow {
                snr_db,
                method: Method::ExactMc,
                precoder: method,
                wsr_bits: est.bits,
                std_err: est.std_err,
                iterations: 0,
                wall_time_s: elapsed(spec, start),
                seed: mc.seed,
                status,
            });
        }
    }
    Ok(rows)
}

/// Runs every design at every SNR point and writes the CSV to
/// `spec.output` when set.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    let setup = build_setup(spec)?;
    let mut rows: Vec<SweepRow> = spec
        .snr_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| sweep_point(spec, &setup, i, snr))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then(a.precoder.cmp(&b.precoder))
            .then(a.method.cmp(&b.method))
    });
    if let Some(path) = &spec.output {
        std::fs::write(path, sweep_csv(spec, &rows))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTrace {
    pub snr_db: f64,
    pub restart: usize,
    pub converged: bool,
    /// WSR after each iteration; entry 0 is the starting point.
    pub wsr: Vec<f64>,
}

pub fn convergence_csv(spec: &ExperimentSpec, traces: &[ConvergenceTrace]) -> String {
    let mut out = header("convergence", spec);
    out.push_str("snr_db,iteration,wsr_bits,restart,converged\n");
    for t in traces {
        for (i, w) in t.wsr.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", t.snr_db, i, w, t.restart, t.converged);
        }
    }
    out
}

/// Optimizer traces at each SNR in `snr_list` (strictly increasing).
pub fn run_convergence(spec: &ExperimentSpec, snr_list: &[f64]) -> Result<Vec<ConvergenceTrace>> {
    let spec = ExperimentSpec {
        snr_db: snr_list.to_vec(),
        ..spec.clone()
    };
    let setup = build_setup(&spec)?;
    let traces = spec
        .snr_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let (problem, _) = build_problem(&spec, &setup, snr, &spec.weights)?;
            let design = run_design(&problem, Method::Fap, &spec.optimizer, point_seed(&spec, i))?;
            let trace = design.trace.expect("optimizer designs carry a trace");
            Ok(ConvergenceTrace {
                snr_db: snr,
                restart: trace.restart,
                converged: trace.converged,
                wsr: trace.wsr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &spec.output {
        std::fs::write(path, convergence_csv(&spec, &traces))?;
    }
    Ok(traces)
}

/// One rate-region point: per-user rates in the original user order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPoint {
    pub weights: Vec<f64>,
    pub method: Method,
    pub rates: Vec<f64>,
    /// `Σ_k μ_k·R_k`.
    pub wsr_bits: f64,
}

/// Successive-decoding split of the rates achieved by `precoders`: with users
/// in problem order, user `k` gets `I(d_k; y | d_{k+1}..d_K)`, i.e. the last
/// user is decoded first treating the others as noise. The rates sum to the
/// sum rate.
pub fn successive_rates(problem: &WsrProblem, precoders: &[PrecoderFactors]) -> Result<Vec<f64>> {
    let k_users = problem.k_users();
    let matrices = optimizer::to_matrices(precoders);
    // cumulative[k] = I(d_1..d_{k+1}; y | rest), from a WSR whose only
    // nonzero weight step sits at k.
    let cumulative = (0..k_users)
        .into_par_iter()
        .map(|k| {
            let mu: Vec<f64> = (0..k_users).map(|i| if i <= k { 1.0 } else { 0.0 }).collect();
            replica::asymptotic_wsr(
                &problem.models,
                &matrices,
                &mu,
                &problem.alphabets,
                &problem.replica,
                &problem.noise,
                None,
            )
            .map(|e| e.value_bits)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..k_users)
        .map(|k| cumulative[k] - if k == 0 { 0.0 } else { cumulative[k - 1] })
        .collect())
}

pub fn region_csv(spec: &ExperimentSpec, points: &[RegionPoint]) -> String {
    let k = points.first().map_or(spec.weights.len(), |p| p.rates.len());
    let mut out = header("region", spec);
    let mu: Vec<String> = (1..=k).map(|i| format!("mu{i}")).collect();
    let r: Vec<String> = (1..=k).map(|i| format!("r{i}")).collect();
    let _ = writeln!(out, "{},method,{},wsr_bits", mu.join(","), r.join(","));
    for p in points {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "{},{},{},{}", join(&p.weights), p.method, join(&p.rates), p.wsr_bits);
    }
    out
}

/// Optimizes each design for every weight vector in `weight_grid` at one
/// SNR and reports the per-user rate split.
pub fn run_rate_region(spec: &ExperimentSpec, snr_db: f64, weight_grid: &[Vec<f64>]) -> Result<Vec<RegionPoint>> {
    let setup = build_setup(spec)?;
    let designs = spec.designs();
    let jobs: Vec<(usize, Method)> = (0..weight_grid.len())
        .flat_map(|i| designs.iter().map(move |&m| (i, m)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(i, method)| {
            let weights = &weight_grid[i];
            let (problem, order) = build_problem(spec, &setup, snr_db, weights)?;
            let design = run_design(&problem, method, &spec.optimizer, point_seed(spec, i))?;
            let split = successive_rates(&problem, &design.precoders)?;
            let mut rates = vec![0.0; split.len()];
            for (pos, &user) in order.iter().enumerate() {
                rates[user] = split[pos];
            }
            let wsr_bits = weights.iter().zip(&rates).map(|(m, r)| m * r).sum();
            Ok(RegionPoint {
                weights: weights.clone(),
                method,
                rates,
                wsr_bits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &spec.output {
        std::fs::write(path, region_csv(spec, &points))?;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPoint {
    pub snr_db: f64,
    pub precoder: Method,
    pub asymptotic_bits: f64,
    pub exact_bits: f64,
    pub std_err: f64,
    pub gap_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub points: Vec<ValidationPoint>,
    pub max_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn validation_csv(spec: &ExperimentSpec, report: &ValidationReport) -> String {
    let mut out = header("validation", spec);
    let _ = writeln!(
        out,
        "# max_gap={} tolerance={} passed={}",
        report.max_gap, report.tolerance, report.passed
    );
    out.push_str("snr_db,precoder,asymptotic_bits,exact_bits,gap_bits,std_err\n");
    for p in &report.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.snr_db, p.precoder, p.asymptotic_bits, p.exact_bits, p.gap_bits, p.std_err
        );
    }
    out
}

/// Compares the asymptotic WSR with the exact Monte-Carlo WSR for every
/// design and SNR. Exceeding the alphabet cap is reported before anything is
/// computed.
pub fn run_validation(spec: &ExperimentSpec) -> Result<ValidationReport> {
    let setup = build_setup(spec)?;
    check_exact_cap(&setup, &spec.mc)?;
    let mc = mc_config(spec);
    let designs = spec.designs();
    let mut points = Vec::new();
    for (i, &snr) in spec.snr_db.iter().enumerate() {
        let (problem, _) = build_problem(spec, &setup, snr, &spec.weights)?;
        let seed = point_seed(spec, i);
        for &method in &designs {
            let design = run_design(&problem, method, &spec.optimizer, seed)?;
            let exact = exact_wsr_mc(&problem, &design.precoders, &mc)?;
            points.push(ValidationPoint {
                snr_db: snr,
                precoder: method,
                asymptotic_bits: design.wsr_bits,
                exact_bits: exact.bits,
                std_err: exact.std_err,
                gap_bits: (design.wsr_bits - exact.bits).abs(),
            });
        }
    }
    let max_gap = points.iter().map(|p| p.gap_bits).fold(0.0, f64::max);
    let report = ValidationReport {
        passed: max_gap <= spec.gap_tolerance,
        max_gap,
        tolerance: spec.gap_tolerance,
        points,
    };
    if let Some(path) = &spec.output {
        std::fs::write(path, validation_csv(spec, &report))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            snr_db: vec![0.0],
            noise_samples: 40,
            optimizer: OptimizerConfig {
                restarts: 1,
                max_iters: 3,
                ..Default::default()
            },
            replica: ReplicaConfig {
                n_starts: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn method_tags_round_trip() {
        for m in [Method::Fap, Method::Np, Method::Gp, Method::ExactMc, Method::Asy] {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.tag()));
        }
        assert!("fap".parse::<Method>().is_ok());
        assert!("XYZ".parse::<Method>().is_err());
    }

    #[test]
    fn spec_json_round_trip_and_defaults() {
        let spec = ExperimentSpec::default();
        assert_eq!(ExperimentSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
        let minimal = r#"{"scenario":"s","model":{"source":"random","users":2,"n_t":2,"n_r":2},
                          "snr_db":[0,10],"weights":[1,0.5]}"#;
        let parsed = ExperimentSpec::from_json(minimal).unwrap();
        assert_eq!(parsed.methods, vec![Method::Np, Method::Fap]);
        assert_eq!(parsed.optimizer, OptimizerConfig::default());
    }

    #[test]
    fn spec_validation() {
        let bad = |f: fn(&mut ExperimentSpec)| {
            let mut s = ExperimentSpec::default();
            f(&mut s);
            s.validate().is_err()
        };
        assert!(bad(|s| s.snr_db = vec![0.0, 0.0]));
        assert!(bad(|s| s.snr_db = vec![5.0, 0.0]));
        assert!(bad(|s| s.weights = vec![1.0]));
        assert!(bad(|s| s.weights = vec![1.0, -1.0]));
        assert!(bad(|s| s.methods = vec![Method::Asy]));
        assert!(bad(|s| s.modulation = vec![]));
        assert!(bad(|s| s.noise_samples = 0));
        assert!(ExperimentSpec::from_json(r#"{"scenario":"s","bogus":1}"#).is_err());
    }

    #[test]
    fn problem_orders_users_by_weight() {
        let spec = ExperimentSpec {
            weights: vec![0.2, 0.9],
            ..small_spec()
        };
        let setup = build_setup(&spec).unwrap();
        let (problem, order) = build_problem(&spec, &setup, 0.0, &spec.weights).unwrap();
        assert_eq!(order, vec![1, 0]);
        assert_eq!(problem.weights_mu, vec![0.9, 0.2]);
        assert_eq!(problem.models[0], setup.models[1]);
    }

    #[test]
    fn empty_method_list_gives_header_only() {
        let spec = ExperimentSpec {
            methods: vec![],
            ..small_spec()
        };
        let rows = run_sweep(&spec).unwrap();
        assert!(rows.is_empty());
        let csv = sweep_csv(&spec, &rows);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap(), SWEEP_COLUMNS);
    }

    #[test]
    fn exact_rows_over_the_cap_are_skipped() {
        let spec = ExperimentSpec {
            methods: vec![Method::Np, Method::ExactMc],
            mc: ExactMcConfig {
                cap: 16,
                ..Default::default()
            },
            ..small_spec()
        };
        let rows = run_sweep(&spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].method, Method::ExactMc);
        assert_eq!(rows[1].status, RowStatus::SkippedCap);
        assert!(sweep_csv(&spec, &rows).contains("skipped-cap"));
        assert!(matches!(run_validation(&spec), Err(Error::ResourceLimit { .. })));
    }

    #[test]
    fn successive_rates_sum_to_the_sum_rate() {
        let spec = small_spec();
        let setup = build_setup(&spec).unwrap();
        let (problem, _) = build_problem(&spec, &setup, 5.0, &[1.0, 1.0]).unwrap();
        let np = optimizer::no_precoding_baseline(&problem);
        let rates = successive_rates(&problem, &np).unwrap();
        let sum = problem.evaluate(&np, None).unwrap().value_bits;
        assert!((rates.iter().sum::<f64>() - sum).abs() < 1e-9);
        assert!(rates.iter().all(|&r| r > 0.0));
    }
}
