use clap::Parser;

use krpsgd_cli::commands::{self, BenchArgs, DecomposeArgs, GenerateArgs, VerifyArgs};

#[derive(Parser)]
#[command(
    name = "krpsgd",
    version,
    about = "CP tensor decomposition by mini-batch SGD over sampled fibers"
)]
enum Cli {
    /// Write a synthetic three-way tensor with planted heavy rows.
    Generate(GenerateArgs),
    /// Fit a CP model to a tensor file and record the error trace.
    Decompose(DecomposeArgs),
    /// Execute every run in a plan file and collect a results table.
    Bench(BenchArgs),
    /// Run the built-in correctness checks.
    Verify(VerifyArgs),
}

fn main() -> anyhow::Result<()> {
    match Cli::parse() {
        Cli::Generate(args) => commands::cmd_generate(&args),
        Cli::Decompose(args) => commands::cmd_decompose(&args),
        Cli::Bench(args) => commands::cmd_bench(&args),
        Cli::Verify(args) => commands::cmd_verify(&args),
    }
}
