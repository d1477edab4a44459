use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod cmd;
mod error;
mod files;
mod record;

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "bcskit", version, about = "Block compressive sensing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure a PGM image block by block and write measurement and
    /// assignment JSON files.
    Sample(SampleArgs),
    /// Recover an image from a measurement file.
    Reconstruct(ReconstructArgs),
    /// Sample and reconstruct every image of a directory at every rate with
    /// every algorithm and write a CSV table.
    Bench(BenchArgs),
    /// Train the small network on a directory of toy images.
    TrainToy(TrainToyArgs),
    /// Write seeded synthetic test images as PGM files.
    Fixtures(FixturesArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Uniform,
    Adaptive,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Algo {
    BcsSpl,
    Damp,
    BcsDamp,
    Bcsnet,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::BcsSpl => "bcs-spl",
            Algo::Damp => "damp",
            Algo::BcsDamp => "bcs-damp",
            Algo::Bcsnet => "bcsnet",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Denoiser {
    HardDct,
    SoftDct,
    Nlm,
}

#[derive(Args, Debug, Clone)]
pub struct SeedArg {
    /// Seed for matrices, probes and training.
    #[arg(long, env = "BCSKIT_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct EngineArgs {
    /// Iteration cap of the iterative engines.
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = Denoiser::HardDct)]
    pub denoiser: Denoiser,
    /// Threshold multiplier of the DCT denoisers.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    /// Channel rates, ascending.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.05,0.1,0.2,0.3,0.4")]
    pub rates: Vec<f64>,
    /// Target average sampling rate.
    #[arg(long)]
    pub sr: f64,
    #[arg(long, value_enum, default_value_t = Mode::Uniform)]
    pub mode: Mode,
    /// Orthonormalize the rows of every channel matrix.
    #[arg(long)]
    pub orthonormal: bool,
    /// Sample with a trained network's matrices instead of seeded ones;
    /// block size and rates then come from the network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Measurement file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Assignment file to write; defaults to `<out>` with extension
    /// `assignment.json`.
    #[arg(long)]
    pub assignment_out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Measurement file written by `sample`.
    #[arg(long)]
    pub meas: PathBuf,
    /// Assignment file written by `sample`; supplies the target rate.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[arg(long)]
    pub out: PathBuf,
    /// Reference image; enables PSNR and SSIM.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// CSV file to append the run record to (created with a header).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Network checkpoint for `bcsnet`; defaults to the one recorded in the
    /// measurement file.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Image id written to the record; defaults to the output file stem.
    #[arg(long)]
    pub id: Option<String>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Directory of PGM images.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bcs-spl,damp,bcs-damp")]
    pub algos: Vec<Algo>,
    /// Target average rates.
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub rates: Vec<f64>,
    /// Channel rates of the bank.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.05,0.1,0.2,0.3,0.4")]
    pub bank_rates: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub block: usize,
    #[arg(long, value_enum, default_value_t = Mode::Uniform)]
    pub mode: Mode,
    #[arg(long)]
    pub orthonormal: bool,
    /// Network checkpoint; required for `bcsnet`, which then also fixes the
    /// sampling matrices of every algorithm.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Args, Debug)]
pub struct TrainToyArgs {
    /// Directory of PGM training images.
    #[arg(long)]
    pub dir: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// `step,stage,loss` CSV to write.
    #[arg(long)]
    pub loss_csv: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::Both)]
    pub stage: StageArg,
    /// Start from this checkpoint. A checkpoint with saved progress resumes
    /// its stage where it stopped.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub stage1_steps: usize,
    #[arg(long, default_value_t = 3000)]
    pub stage2_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    PiecewiseSmooth,
    BrightSquare,
    Texture,
    Toy,
}

#[derive(Args, Debug)]
pub struct FixturesArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureKind,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Side length (ignored for the bright square, which is 128).
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[command(flatten)]
    pub seed: SeedArg,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample(a) => cmd::sample::run(&a),
        Command::Reconstruct(a) => cmd::reconstruct::run(&a),
        Command::Bench(a) => cmd::bench::run(&a),
        Command::TrainToy(a) => cmd::train::run(&a),
        Command::Fixtures(a) => cmd::fixtures::run(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
