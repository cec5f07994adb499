use std::process::ExitCode;

use amprob_lab::commands::{attn, capacity, cluster, icl, landscape};
use amprob_lab::runner::CommonArgs;
use clap::{Parser, Subcommand};

/// Probabilistic associative-memory experiments.
#[derive(Parser)]
#[command(name = "amprob", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Energy grids and descent trajectories for a 2-D model.
    Landscape(#[command(flatten)] CommonArgs),
    /// Train and score ClAM, ClAM+ELBO and k-means on datasets.
    Cluster(#[command(flatten)] CommonArgs),
    /// Retrieval-ratio sweeps over width and pattern count.
    Capacity(#[command(flatten)] CommonArgs),
    /// Train the in-context energy transformer and write a checkpoint.
    IclTrain(#[command(flatten)] CommonArgs),
    /// Energy gaps, grids and samples from a trained checkpoint.
    IclEval(#[command(flatten)] CommonArgs),
    /// Check the attention logit decomposition on random instances.
    AttnCheck(#[command(flatten)] CommonArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Landscape(a) => landscape::run(a),
        Command::Cluster(a) => cluster::run(a),
        Command::Capacity(a) => capacity::run(a),
        Command::IclTrain(a) => icl::run_train(a),
        Command::IclEval(a) => icl::run_eval(a),
        Command::AttnCheck(a) => attn::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
