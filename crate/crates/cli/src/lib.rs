//! The `redlab` command line: every subcommand writes its CSV/JSON artifacts
//! plus one `<subcommand>.manifest.json` into `--out`.

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use redlab_core::exact::Arithmetic;
use redlab_core::sim::Policy;
use thiserror::Error;

pub use commands::{ClosedFormLaw, DominanceFile, SimFile, DEFAULT_SEED, FIGURE3_RHOS};
pub use output::{fmt_num, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] redlab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(redlab_core::Error::Unstable(_)) | CliError::Infeasible(_) => 3,
            CliError::Io { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "redlab",
    version,
    about = "Power-of-two redundancy load balancing: exact laws, simulation, design"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Coverage polynomials alpha_1..alpha_qmax of a graph.
    Alpha {
        #[command(flatten)]
        common: Common,
        /// Graph JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        qmax: usize,
        #[arg(long, default_value = "auto")]
        arithmetic: Arithmetic,
    },
    /// Queue-length law of a four-server closed form.
    ClosedForm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        law: ClosedFormLaw,
        #[arg(long)]
        rho: f64,
        /// Ring parameter for coc-hetring4.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 25)]
        qmax: usize,
    },
    /// Simulate a policy on a graph.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulation JSON file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        events: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        policy: Option<Policy>,
    },
    /// P{B >= q} - P{A >= q} from two `simulate` CSVs.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        qmax: Option<usize>,
    },
    /// Assign job types to server pairs minimising alpha_2.
    DesignOpt {
        #[command(flatten)]
        common: Common,
        /// Problem JSON file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Light-traffic ratios of the uniform complete graph against rings.
    Table1 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "auto")]
        arithmetic: Arithmetic,
    },
    /// Tail probabilities of six four-server laws.
    Figure2 {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.8)]
        rho: f64,
        #[arg(long, default_value_t = 25)]
        qmax: usize,
    },
    /// Complete graph vs homogeneous ring on four servers: cancel-on-start
    /// closed-form difference and simulated JIQ difference.
    Figure3 {
        #[command(flatten)]
        common: Common,
        /// Single load instead of the default list.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        events: u64,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        qmax: usize,
    },
    /// Birth-death ratio condition and tail comparison for two graphs.
    Dominance {
        #[command(flatten)]
        common: Common,
        /// JSON file with graphs `a` and `b`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value = "auto")]
        arithmetic: Arithmetic,
    },
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<Vec<PathBuf>, CliError> {
    use commands as c;
    match command {
        Command::Alpha {
            common,
            config,
            qmax,
            arithmetic,
        } => c::alpha(&common.out, &config, qmax, arithmetic),
        Command::ClosedForm {
            common,
            law,
            rho,
            epsilon,
            qmax,
        } => c::closed_form(&common.out, law, rho, epsilon, qmax),
        Command::Simulate {
            common,
            config,
            seed,
            rho,
            events,
            runs,
            policy,
        } => c::simulate(
            &common.out,
            &config,
            c::SimOverrides {
                seed,
                rho,
                events,
                runs,
                policy,
            },
        ),
        Command::Compare { common, a, b, qmax } => c::compare(&common.out, &a, &b, qmax),
        Command::DesignOpt { common, config } => c::design_opt(&common.out, &config),
        Command::Table1 { common, arithmetic } => c::table1(&common.out, arithmetic),
        Command::Figure2 { common, rho, qmax } => c::figure2(&common.out, rho, qmax),
        Command::Figure3 {
            common,
            rho,
            events,
            runs,
            seed,
            qmax,
        } => c::figure3(
            &common.out,
            rho,
            events,
            runs,
            seed.unwrap_or(DEFAULT_SEED),
            qmax,
        ),
        Command::Dominance {
            common,
            config,
            rho,
            arithmetic,
        } => c::dominance(&common.out, &config, rho, arithmetic),
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}
