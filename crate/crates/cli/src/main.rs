use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fapmac::channel;
use fapmac::constellation::{count_additions, AdditionMode};
use fapmac::harness::{self, ExperimentSpec, Method, ModelSource};
use fapmac::optimizer;
use fapmac::Error;

#[derive(Debug, Parser)]
#[command(name = "fapmac", version, about = "Finite-alphabet precoder design for the MIMO multiple access channel")]
struct Cli {
    /// Experiment spec (JSON). Flags override the values it contains.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Channel model JSON, replacing the spec's model source.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random Weichselberger models and write them as JSON.
    GenChannel {
        #[arg(long, default_value_t = 2)]
        users: usize,
        #[arg(long, default_value_t = 2)]
        n_t: usize,
        #[arg(long, default_value_t = 2)]
        n_r: usize,
    },
    /// Optimize the precoders at one SNR and write them as JSON.
    Optimize {
        #[arg(long)]
        snr: f64,
        /// Comma-separated user weights.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Rates of each design over the SNR grid (CSV).
    Sweep {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        /// Comma-separated tags out of FAP, NP, GP, EXACT_MC.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Optimizer traces per SNR (CSV).
    Convergence {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Rate-region boundary points for two users (CSV).
    Region {
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        /// Number of weight directions between (1,0) and (0,1).
        #[arg(long, default_value_t = 9)]
        points: usize,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Compare asymptotic and exact Monte-Carlo rates (CSV); exits with 2
    /// when the largest gap exceeds the tolerance.
    Validate {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr: Option<Vec<f64>>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Additions needed to evaluate the MI and MSE by enumeration.
    CountAdditions {
        #[arg(long, value_enum, default_value_t = Mode::PerUser)]
        mode: Mode,
        /// Constellation order of each user.
        #[arg(long, value_delimiter = ',', required = true)]
        orders: Vec<u32>,
        #[arg(long)]
        n_t: u32,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    PerUser,
    Joint,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    ValidationFailed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::ValidationFailed(_) => 2,
            Failure::Lib(Error::InvalidArgument(_) | Error::Json(_)) => 2,
            Failure::Lib(Error::ResourceLimit { .. }) => 3,
            Failure::Lib(Error::Convergence { .. }) => 4,
            Failure::Lib(_) => 1,
        }
    }
}

fn parse_methods(tags: &[String]) -> Result<Vec<Method>, Error> {
    tags.iter().map(|t| t.trim().parse()).collect()
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, Error> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(path) = &cli.model {
        spec.model = ModelSource::File { path: path.clone() };
    }
    // Harness functions write files themselves when `output` is set; the CLI
    // does its own writing so stdout works too.
    spec.output = None;
    Ok(spec)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidState(e.to_string()))?;
    }
    let out = cli.out.as_deref();
    match &cli.command {
        Command::GenChannel { users, n_t, n_r } => {
            let seed = cli.seed.unwrap_or(0);
            let models = channel::random_models(*users, *n_t, *n_r, seed)?;
            emit(out, &(channel::models_to_json(&models)? + "\n"))
        }
        Command::Optimize { snr, weights } => {
            let mut spec = load_spec(cli)?;
            if let Some(w) = weights {
                spec.weights = w.clone();
            }
            let setup = harness::build_setup(&spec)?;
            let (problem, order) = harness::build_problem(&spec, &setup, *snr, &spec.weights)?;
            let design = harness::run_design(&problem, Method::Fap, &spec.optimizer, spec.seed)?;
            // Back to the user order of the model file.
            let mut precoders = design.precoders.clone();
            for (pos, &user) in order.iter().enumerate() {
                precoders[user] = design.precoders[pos].clone();
            }
            eprintln!(
                "snr {snr} dB: weighted sum rate {:.6} bits after {} iterations",
                design.wsr_bits, design.iterations
            );
            emit(out, &(optimizer::precoders_to_json(&precoders)? + "\n"))
        }
        Command::Sweep { snr, methods } => {
            let mut spec = load_spec(cli)?;
            if let Some(s) = snr {
                spec.snr_db = s.clone();
            }
            if let Some(m) = methods {
                spec.methods = parse_methods(m)?;
            }
            let rows = harness::run_sweep(&spec)?;
            emit(out, &harness::sweep_csv(&spec, &rows))
        }
        Command::Convergence { snr, max_iters } => {
            let mut spec = load_spec(cli)?;
            if let Some(n) = max_iters {
                spec.optimizer.max_iters = *n;
            }
            let list = snr.clone().unwrap_or_else(|| spec.snr_db.clone());
            let traces = harness::run_convergence(&spec, &list)?;
            let spec = ExperimentSpec { snr_db: list, ..spec };
            emit(out, &harness::convergence_csv(&spec, &traces))
        }
        Command::Region { snr, points, methods } => {
            let mut spec = load_spec(cli)?;
            if let Some(m) = methods {
                spec.methods = parse_methods(m)?;
            }
            if spec.weights.len() != 2 {
                return Err(Error::InvalidArgument("region needs exactly two users".into()).into());
            }
            if *points < 2 {
                return Err(Error::InvalidArgument("region needs at least two points".into()).into());
            }
            let grid: Vec<Vec<f64>> = (0..*points)
                .map(|i| {
                    let angle = std::f64::consts::FRAC_PI_2 * i as f64 / (*points - 1) as f64;
                    // Snap the end points so (1,0) and (0,1) are exact.
                    let clean = |x: f64| if x.abs() < 1e-12 { 0.0 } else { x };
                    vec![clean(angle.cos()), clean(angle.sin())]
                })
                .collect();
            let region = harness::run_rate_region(&spec, *snr, &grid)?;
            emit(out, &harness::region_csv(&spec, &region))
        }
        Command::Validate { snr, tolerance, channels } => {
            let mut spec = load_spec(cli)?;
            if let Some(s) = snr {
                spec.snr_db = s.clone();
            }
            if let Some(t) = tolerance {
                spec.gap_tolerance = *t;
            }
            if let Some(n) = channels {
                spec.mc.n_channels = *n;
            }
            let report = harness::run_validation(&spec)?;
            emit(out, &harness::validation_csv(&spec, &report))?;
            if report.passed {
                Ok(())
            } else {
                Err(Failure::ValidationFailed(format!(
                    "largest gap {:.4} bits exceeds tolerance {} bits",
                    report.max_gap, report.tolerance
                )))
            }
        }
        Command::CountAdditions { mode, orders, n_t } => {
            let mode = match mode {
                Mode::PerUser => AdditionMode::PerUser,
                Mode::Joint => AdditionMode::Joint,
            };
            let count = count_additions(mode, orders, *n_t)?;
            let mut text = String::new();
            let _ = writeln!(text, "{count}");
            emit(out, &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Lib(e) => eprintln!("error: {e}"),
                Failure::ValidationFailed(msg) => eprintln!("validation failed: {msg}"),
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
