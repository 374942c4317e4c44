use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use graphskel_cli::{commands, CliError, RawOptions, RunConfig};

/// Recover an embedded graph from a noisy point cloud and fit its vertices.
#[derive(Parser)]
#[command(name = "graphskel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label every sample vertex-like (0) or edge-like (1).
    Partition(Options),
    /// Cluster the labels into an abstract graph with boundary pairs.
    Graph(Options),
    /// Fit vertex positions for a graph by EM.
    Fit(Options),
    /// Detect structure at the largest ratio, refit at each ratio, keep the best.
    Pipeline(Options),
    /// Sample a noisy cloud from an embedded graph.
    Simulate(Options),
}

#[derive(Args)]
struct Options {
    /// Neighbourhood radius.
    #[arg(long = "R")]
    r: Option<f64>,
    /// Sampling density and noise bound.
    #[arg(long)]
    eps: Option<f64>,
    /// R as a multiple of eps.
    #[arg(long)]
    ratio: Option<f64>,
    /// Noise scale of the mixture model [default: eps/2].
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    /// Convergence threshold on the log-likelihood change.
    #[arg(long)]
    tol: Option<f64>,
    /// Comma-separated ratios for pipeline [default: 12,10,8,6].
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Sample spacing along edges for simulate [default: eps].
    #[arg(long)]
    spacing: Option<f64>,
    /// Noise radius for simulate [default: eps/2].
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Graph JSON (fit) or embedded graph spec (simulate).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Skip the first data line of the input cloud.
    #[arg(long)]
    header: bool,
    /// Worker thread cap.
    #[arg(long, env = "GRAPHSKEL_THREADS")]
    threads: Option<usize>,
}

impl Options {
    fn into_raw(self) -> RawOptions {
        RawOptions {
            r: self.r,
            eps: self.eps,
            ratio: self.ratio,
            sigma: self.sigma,
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
            ratios: self.ratios,
            spacing: self.spacing,
            noise: self.noise,
            input: self.input,
            output: self.output,
            graph: self.graph,
            header: self.header,
            threads: self.threads,
        }
    }
}

fn fail(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => fail(&CliError::usage(e.kind().to_string())),
            };
        }
    };
    let (name, options) = match cli.command {
        Command::Partition(o) => ("partition", o),
        Command::Graph(o) => ("graph", o),
        Command::Fit(o) => ("fit", o),
        Command::Pipeline(o) => ("pipeline", o),
        Command::Simulate(o) => ("simulate", o),
    };
    let config = match RunConfig::resolve(name, options.into_raw()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(n) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::usage(format!("cannot start {n} worker threads: {e}")));
        }
    }
    match commands::run(&config) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", report.summary.trim_end());
            for p in &report.written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
