use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use emd_core::descent::Loss;
use emd_core::{Precision, Setting};

#[derive(Debug, Parser)]
#[command(
    name = "emd",
    version,
    about = "Closed-form Earth Mover's Distances on chains and trees, with exact and Sinkhorn references",
    long_about = "Closed-form Earth Mover's Distances on chains and trees, with exact and Sinkhorn references.\n\n\
Distribution files hold one value per line ('#' starts a comment) and are normalized to unit mass on load. \
Chain files hold the N-1 edge costs, one per line; without --chain every edge costs 1. \
Tree files hold 'child parent cost' lines, with the root written as 'root - 0'; bins follow the order in which leaves first appear. \
Cost files are CSV with N rows of N values.\n\n\
Exit status: 0 on success, 1 on bad input, 2 when --strict is set and a run is numerically degenerate.",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form EMD^rho between two distributions.
    #[command(
        after_help = "Example:\n  emd dist --tree fig1.tree --p p.txt --q q.txt --rho 2\n  0.19"
    )]
    Dist {
        #[command(flatten)]
        ground: Ground,
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
    /// Mass-preserving gradient of EMD^rho with respect to p, one value per line.
    #[command(
        after_help = "Example:\n  emd grad --tree fig1.tree --p p.txt --q q.txt --rho 1\n  1.5\n  -0.5\n  -1.5\n  0.5"
    )]
    Grad {
        #[command(flatten)]
        ground: Ground,
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
    },
    /// Constant Hessian of EMD^2 on a chain, as CSV.
    #[command(
        after_help = "Example:\n  emd hessian --bins 2\n  2.0000000000000000e0,-2.0000000000000000e0\n  -2.0000000000000000e0,2.0000000000000000e0"
    )]
    Hessian {
        /// Chain edge costs; sets the number of bins.
        #[arg(long, value_name = "PATH")]
        chain: Option<PathBuf>,
        /// Number of bins for a unit-cost chain.
        #[arg(long, required_unless_present = "chain", conflicts_with = "chain")]
        bins: Option<usize>,
    },
    /// Exact EMD by min-cost flow.
    #[command(
        after_help = "Example:\n  emd oracle --cost swap.csv --p p.txt --q q.txt --plan-out plan.csv\n  0.4"
    )]
    Oracle {
        #[command(flatten)]
        ground: DenseGround,
        #[command(flatten)]
        pair: Pair,
        /// Write the optimal plan as CSV.
        #[arg(long, value_name = "PATH")]
        plan_out: Option<PathBuf>,
    },
    /// Entropically regularized distance; prints a one-row CSV.
    #[command(
        after_help = "Example:\n  emd sinkhorn --cost swap.csv --p p.txt --q q.txt --lambda 50\n  distance,iterations,converged,marginal_error\n  3.9999999997322422e-1,43,true,2.6775803796397213e-11"
    )]
    Sinkhorn {
        #[command(flatten)]
        ground: DenseGround,
        #[command(flatten)]
        pair: Pair,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value = "f64", value_parser = parse_from_str::<Precision>)]
        precision: Precision,
        /// Add this much mass to every bin (then renormalize) before solving.
        #[arg(long)]
        eps: Option<f64>,
        /// Write the transport plan as CSV.
        #[arg(long, value_name = "PATH")]
        plan_out: Option<PathBuf>,
        /// Exit with status 2 if the run is numerically degenerate.
        #[arg(long)]
        strict: bool,
    },
    /// Sinkhorn against the exact EMD over a log-spaced lambda grid.
    #[command(
        after_help = "Example:\n  emd sweep --tree wn.tree --p p.txt --q q.txt --lambda-min 0.01 --lambda-max 100 --count 25 --out sweep.csv"
    )]
    Sweep {
        #[command(flatten)]
        ground: DenseGround,
        #[command(flatten)]
        pair: Pair,
        #[arg(long, default_value_t = 0.01)]
        lambda_min: f64,
        #[arg(long, default_value_t = 100.0)]
        lambda_max: f64,
        /// Number of lambda values.
        #[arg(long, default_value_t = 25)]
        count: usize,
        /// Iteration caps, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "10000")]
        iter_caps: Vec<usize>,
        /// Precisions, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "f32,f64", value_parser = parse_from_str::<Precision>)]
        precisions: Vec<Precision>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Smoothing applied when an input has empty bins.
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with status 2 if any cell is numerically degenerate.
        #[arg(long)]
        strict: bool,
    },
    /// Per-bin gradients of MSE, EMD, EMD^2 and Sinkhorn on a chain, as CSV.
    #[command(
        after_help = "Example:\n  emd profiles --p spike.txt --q uniform.txt --lambdas 1,10,100 --out profiles.csv"
    )]
    Profiles {
        #[arg(long, value_name = "PATH")]
        chain: Option<PathBuf>,
        #[command(flatten)]
        pair: Pair,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        lambdas: Vec<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Gradient-descent convergence experiment; prints per-epoch means as CSV.
    #[command(
        after_help = "Example:\n  emd descent --setting easy --loss emd2 --bins 64 --runs 64 --epochs 2000 --seed 0 --runs-dir runs/ --out mean.csv"
    )]
    Descent {
        /// Chain edge costs; sets the number of bins.
        #[arg(long, value_name = "PATH", conflicts_with_all = ["tree", "bins"])]
        chain: Option<PathBuf>,
        #[arg(long, value_name = "PATH", conflicts_with = "bins")]
        tree: Option<PathBuf>,
        #[arg(long)]
        allow_zero_cost: bool,
        /// Number of bins for a unit-cost chain.
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value = "easy", value_parser = parse_from_str::<Setting>)]
        setting: Setting,
        #[arg(long, default_value = "emd2", value_parser = parse_from_str::<Loss>)]
        loss: Loss,
        #[arg(long, default_value_t = 2000)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1048576.0)]
        initial_rate: f64,
        #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
        factor: f64,
        /// Directory for one CSV per run.
        #[arg(long, value_name = "DIR")]
        runs_dir: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with status 2 if any run diverges.
        #[arg(long)]
        strict: bool,
    },
    /// Random tree in the tree file format.
    #[command(
        name = "gen-tree",
        after_help = "Example:\n  emd gen-tree --leaves 32 --max-depth 6 --cost-min 1 --cost-max 5 --seed 7 --out synth.tree"
    )]
    GenTree {
        #[arg(long)]
        leaves: usize,
        /// Interior nodes including the root; about 0.374 per leaf by default.
        #[arg(long)]
        internal: Option<usize>,
        #[arg(long, default_value_t = 8)]
        max_depth: usize,
        #[arg(long, default_value_t = 1.0)]
        cost_min: f64,
        #[arg(long, default_value_t = 1.0)]
        cost_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Compare closed forms against the exact solver on random instances.
    #[command(after_help = "Example:\n  emd check --cases 200 --seed 1\n  200/200 oracle matches")]
    Check {
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct Pair {
    /// Source distribution file.
    #[arg(long, value_name = "PATH")]
    pub p: PathBuf,
    /// Target distribution file.
    #[arg(long, value_name = "PATH")]
    pub q: PathBuf,
}

/// Ground metric for the closed forms.
#[derive(Debug, Args)]
pub struct Ground {
    /// Chain edge costs (default: unit costs).
    #[arg(long, value_name = "PATH", conflicts_with = "tree")]
    pub chain: Option<PathBuf>,
    /// Tree file; bins are its leaves.
    #[arg(long, value_name = "PATH")]
    pub tree: Option<PathBuf>,
    /// Accept zero-cost tree edges.
    #[arg(long)]
    pub allow_zero_cost: bool,
}

/// Ground metric for solvers that work on a dense cost matrix.
#[derive(Debug, Args)]
pub struct DenseGround {
    #[command(flatten)]
    pub ground: Ground,
    /// Cost matrix CSV.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["chain", "tree"])]
    pub cost: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn parse_from_str<T>(s: &str) -> Result<T, String>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}
