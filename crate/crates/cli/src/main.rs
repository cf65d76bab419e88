//! `hdmm` command-line frontend.

mod bench;
mod commands;
mod table;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hdmm::HdmmError;

#[derive(Parser, Debug)]
#[command(name = "hdmm", version, about = "Workload-aware strategy selection for private linear queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compile a workload spec into its canonical implicit form.
    Compile {
        #[arg(long)]
        workload: String,
        #[arg(long)]
        out: Option<String>,
    },
    /// Optimize a measurement strategy for a workload.
    Optimize {
        #[arg(long)]
        workload: String,
        #[command(flatten)]
        noise: NoiseArgs,
        /// Comma-separated subset of kron,plus,marginal,opt0; all of the
        /// high-dimensional operators plus baselines when omitted.
        #[arg(long, value_delimiter = ',')]
        operators: Option<Vec<String>>,
        #[arg(long, default_value_t = 25)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Per-attribute p for the parameterized optimizers.
        #[arg(long, value_delimiter = ',')]
        p: Option<Vec<usize>>,
        #[arg(long)]
        out: String,
    },
    /// Compare strategies by expected error.
    Analyze {
        #[arg(long)]
        workload: String,
        #[arg(long)]
        strategy: Vec<String>,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Run the private pipeline on a CSV dataset.
    Run {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        domain: String,
        #[arg(long)]
        workload: String,
        #[arg(long)]
        strategy: String,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip noise entirely. Not private; for testing only.
        #[arg(long)]
        zero_noise: bool,
        #[arg(long)]
        out: String,
    },
    /// Reproduce reference error tables and check them against stored targets.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        restarts: usize,
        /// Alternate targets file.
        #[arg(long)]
        targets: Option<String>,
    },
}

#[derive(Args, Debug, Clone)]
struct NoiseArgs {
    #[arg(long, value_enum, default_value_t = NoiseName::Laplace)]
    noise: NoiseName,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum NoiseName {
    Laplace,
    Gaussian,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    #[value(name = "1d")]
    OneD,
    Marginals,
    WorkedExample,
}

impl NoiseArgs {
    fn kind(&self) -> hdmm::NoiseKind {
        match self.noise {
            NoiseName::Laplace => hdmm::NoiseKind::Laplace { epsilon: self.epsilon },
            NoiseName::Gaussian => hdmm::NoiseKind::Gaussian { epsilon: self.epsilon, delta: self.delta },
        }
    }
}

/// A failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_OPTIMIZE: u8 = 3;
pub const EXIT_BENCH: u8 = 4;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

pub fn exit_code(e: &HdmmError) -> u8 {
    match e {
        HdmmError::Optimization { .. }
        | HdmmError::Singular(_)
        | HdmmError::Unsupported(_)
        | HdmmError::SizeLimit { .. } => EXIT_OPTIMIZE,
        _ => EXIT_INPUT,
    }
}

impl From<HdmmError> for Failure {
    fn from(e: HdmmError) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("HDMM_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new(EXIT_USAGE, format!("HDMM_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Compile { workload, out } => commands::compile(&workload, out.as_deref()),
        Command::Optimize { workload, noise, operators, restarts, seed, max_iters, p, out } => {
            let cfg = hdmm::OptConfig { restarts, seed, max_iters, p_per_attr: p, ..Default::default() };
            commands::optimize(&workload, noise.kind(), operators.as_deref(), &cfg, &out)
        }
        Command::Analyze { workload, strategy, noise, format } => {
            commands::analyze(&workload, &strategy, noise.kind(), format)
        }
        Command::Run { dataset, domain, workload, strategy, noise, seed, zero_noise, out } => commands::run(
            &commands::RunArgs { dataset, domain, workload, strategy, seed, zero_noise, out },
            noise.kind(),
        ),
        Command::Bench { suite, seed, restarts, targets } => bench::run(suite, seed, restarts, targets.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
