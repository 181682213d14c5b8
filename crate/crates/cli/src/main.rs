//! Command-line harness: graph generation, protocol runs, seed sweeps with
//! CSV/JSON output, and trace audits.

mod commands;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for runs whose output is not a valid MIS or whose budget ran out.
pub const EXIT_INVALID: u8 = 1;
/// Exit code for usage, parse, and I/O errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "radio-mis",
    about = "Radio-network MIS simulator: energy-efficient protocols under CD, no-CD, and beeping channels",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded protocol instance, write its trace, and check the MIS.
    Run(RunArgs),
    /// Run seed sweeps over a size list; write per-run CSV rows and a JSON summary.
    Sweep(SweepArgs),
    /// Replay and audit a trace file.
    Verify(VerifyArgs),
    /// Generate a graph and write it in the edge-list format.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Cd,
    Beep,
    #[value(name = "nocd")]
    NoCd,
    #[value(name = "nocd-naive")]
    NocdNaive,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Cd => "cd",
            Model::Beep => "beep",
            Model::NoCd => "nocd",
            Model::NocdNaive => "nocd-naive",
        }
    }

    pub fn parse_name(s: &str) -> Option<Model> {
        match s {
            "cd" => Some(Model::Cd),
            "beep" => Some(Model::Beep),
            "nocd" => Some(Model::NoCd),
            "nocd-naive" => Some(Model::NocdNaive),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Stop as soon as every node is decided; desk-scale C'.
    Experiment,
    /// Full paper phase schedule and high-probability C'.
    Strict,
}

/// Protocol and engine knobs shared by `run` and `sweep`.
#[derive(Args, Clone, Debug, Default)]
pub struct ProtocolArgs {
    /// Size estimate n passed to the protocol (default: graph node count).
    #[arg(long)]
    pub n: Option<u32>,
    /// Degree bound Δ passed to the protocol (default: max degree, min 1).
    #[arg(long)]
    pub delta: Option<u32>,
    /// Luby-phase count multiplier C.
    #[arg(long)]
    pub c: Option<u32>,
    /// Rank length multiplier β.
    #[arg(long)]
    pub beta: Option<u32>,
    /// Commit degree-estimate multiplier κ (no-CD only).
    #[arg(long)]
    pub kappa: Option<u32>,
    /// Backoff repetition multiplier C' (no-CD only).
    #[arg(long = "c-prime")]
    pub c_prime: Option<u32>,
    /// Energy cap: "off", "auto", or a round count.
    #[arg(long)]
    pub cap: Option<String>,
    /// Coefficient for the auto cap threshold c*log2(n)^2*log2(log2(n)).
    #[arg(long = "cap-coeff")]
    pub cap_coeff: Option<f64>,
    /// experiment (early exit) or strict (full schedule, strict C').
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Low-degree strategy for the no-CD protocol.
    #[arg(long = "low-degree")]
    pub low_degree: Option<String>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Channel/protocol model.
    #[arg(long, value_enum)]
    pub model: Option<Model>,
    /// Generator spec: gnp:n:p | matching:n | star:n | clique:n | path:n.
    #[arg(long = "gen")]
    pub gen_spec: Option<String>,
    /// Edge-list file to load instead of generating.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace output path (default: <out-dir>/trace-<model>-<graph>-<seed>.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with the same fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub model: Option<Model>,
    /// Generator spec with `{n}` placeholder, e.g. gnp:{n}:0.1.
    #[arg(long = "gen")]
    pub gen_spec: Option<String>,
    /// Comma-separated list of n values.
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Vec<u32>,
    /// Seeded trials per n value.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Base seed; row seeds are derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated energy caps: emits a failure-rate-vs-b table.
    #[arg(long = "cap-list", value_delimiter = ',')]
    pub cap_list: Vec<u64>,
    /// CSV output path (default: <out-dir>/sweep-<model>.csv).
    #[arg(long = "out-csv")]
    pub out_csv: Option<PathBuf>,
    /// JSON summary path (default: <out-dir>/sweep-<model>.json).
    #[arg(long = "out-json")]
    pub out_json: Option<PathBuf>,
    /// Worker threads for rows (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Trace file produced by `run`.
    pub trace: PathBuf,
}

#[derive(Args)]
pub struct GenArgs {
    /// Generator spec: gnp:n:p | matching:n | star:n | clique:n | path:n.
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Default directory for outputs; overridable via RADIO_MIS_OUT_DIR.
pub fn out_dir() -> PathBuf {
    std::env::var_os("RADIO_MIS_OUT_DIR").map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Verify(args) => commands::verify(args),
        Command::Gen(args) => commands::gen(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
