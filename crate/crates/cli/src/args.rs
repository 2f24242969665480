use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "stencilpipe", version, about = "Analyze, transform and simulate stencil dataflow programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Buffer sizes, initialization phases and delay-buffer depths.
    Analyze(Common),
    /// Cycle-level simulation of the analyzed dataflow graph.
    Simulate(Simulate),
    /// Sequential reference interpreter.
    Reference(Common),
    /// Simulate and compare against the reference interpreter.
    Verify(Simulate),
    /// Full pipeline: transform, analyze, simulate, verify and write results.
    Run(Run),
    /// Aggressively fuse stencils and print the resulting program.
    Fuse(Common),
    /// Place stencils on devices and print the device plan.
    Partition(Common),
    /// Predicted cycle count `C = L + N`.
    Predict(Predict),
    /// Arithmetic intensity and bandwidth bounds.
    Roofline(Roofline),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Program description (JSON).
    #[arg(long)]
    pub program: PathBuf,
    /// Per-operation latencies (JSON); unlisted operations take 40 cycles.
    #[arg(long)]
    pub latencies: Option<PathBuf>,
    /// Vectorization width; must divide the innermost extent.
    #[arg(long, value_name = "W")]
    pub vectorize: Option<usize>,
    /// Device placement (JSON with `count` or `assignment`, plus `remote`).
    #[arg(long)]
    pub devices: Option<PathBuf>,
    /// Fuse stencils before anything else.
    #[arg(long)]
    pub fuse: bool,
    /// Override a channel depth in elements, e.g. `A->C=1`.
    #[arg(long = "force-depth", value_name = "EDGE=N")]
    pub force_depth: Vec<String>,
    /// Seed for inputs without a data source.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Output directory for arrays and reports.
    #[arg(long, alias = "outputs")]
    pub out: Option<PathBuf>,
    /// Also write the dataflow graph as `graph.dot` (into `--out`, or the
    /// current directory).
    #[arg(long = "emit-dot")]
    pub emit_dot: bool,
}

#[derive(Args, Debug, Clone)]
pub struct Simulate {
    #[command(flatten)]
    pub common: Common,
    /// Maximum number of cycles.
    #[arg(long)]
    pub limit: Option<u64>,
    /// Write per-cycle channel occupancy as CSV.
    #[arg(long = "dump-trace", value_name = "PATH")]
    pub dump_trace: Option<PathBuf>,
    /// Compare with this relative tolerance instead of bit for bit.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Run {
    #[command(flatten)]
    pub sim: Simulate,
    /// Check simulator outputs against the reference interpreter.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Args, Debug, Clone)]
pub struct Predict {
    #[command(flatten)]
    pub common: Common,
    /// Clock frequency in MHz for a runtime estimate.
    #[arg(long = "frequency-mhz")]
    pub frequency_mhz: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Roofline {
    /// Count operations and operands from this program.
    #[arg(long)]
    pub program: Option<PathBuf>,
    /// Explicit operation total (instead of a program).
    #[arg(long)]
    pub ops: Option<u64>,
    /// Explicit operand total (instead of a program).
    #[arg(long)]
    pub operands: Option<u64>,
    /// Bytes per operand; defaults to the program's widest type, or 4.
    #[arg(long)]
    pub bytes: Option<u64>,
    /// Memory bandwidth in GB/s.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Target compute rate in GOp/s.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}
