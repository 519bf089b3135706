use std::net::SocketAddr;
use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epir::MechanismParams;

use crate::grid::{parse_count, Sweep};

#[derive(Debug, Parser)]
#[command(name = "epir", version, about = "Epsilon-private information retrieval toolkit")]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, env = "EPIR_SEED", global = true, default_value_t = 1)]
    pub seed: u64,

    /// Run trials and grid points on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic privacy bounds and costs over a parameter sweep.
    Analyze(AnalyzeArgs),
    /// Writes the data behind every figure as CSV files.
    Figures(FiguresArgs),
    /// Monte-Carlo distinguishing game against the analytic bound.
    Simulate(GameArgs),
    /// Exact likelihood ratios by enumeration on tiny instances.
    Oracle(GameArgs),
    /// One retrieval against a random database, with access accounting.
    Demo(DemoArgs),
    /// Serves a record file over the framed protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MechArgs {
    #[arg(long = "mech", value_parser = PossibleValuesParser::new(MechanismParams::NAMES))]
    pub mech: String,
    #[arg(long, value_parser = parse_count)]
    pub n: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    pub d: Option<usize>,
    /// Number of users sharing the anonymity system.
    #[arg(long, value_parser = parse_count)]
    pub u: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    pub p: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_parser = parse_count)]
    pub t: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    /// Corrupt server counts, comma separated.
    #[arg(long = "da", value_delimiter = ',', value_parser = parse_count)]
    pub da: Vec<usize>,
    /// `name=start:stop:steps[lin|log]`.
    #[arg(long)]
    pub sweep: Option<Sweep>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopArg {
    Shuffled,
    Ascending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Rejection,
    WeightFirst,
}

#[derive(Debug, Args)]
pub struct GameArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    #[arg(long = "da", value_parser = parse_count)]
    pub da: Option<usize>,
    /// Trials per arm.
    #[arg(long, value_parser = parse_count, default_value = "1e5")]
    pub trials: usize,
    #[arg(long = "qi", default_value_t = 0)]
    pub q_i: usize,
    #[arg(long = "qj", default_value_t = 1)]
    pub q_j: usize,
    /// Query of every non-target user; defaults to 2.
    #[arg(long = "q0")]
    pub q_0: Option<usize>,
    #[arg(long, value_enum, default_value_t = PopArg::Shuffled)]
    pub pop: PopArg,
    #[arg(long, value_enum, default_value_t = SamplerArg::Rejection)]
    pub sampler: SamplerArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub mech: MechArgs,
    /// Record size in bits.
    #[arg(long = "record-size-bits", value_parser = parse_count, default_value_t = 64)]
    pub record_bits: usize,
    /// Live servers, one per database, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub endpoints: Vec<SocketAddr>,
    /// Record file the live servers hold, for verification.
    #[arg(long, requires = "endpoints")]
    pub records: Option<PathBuf>,
    /// Record to retrieve; random by default.
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub listen: SocketAddr,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long = "record-size-bits", value_parser = parse_count)]
    pub record_bits: usize,
}
