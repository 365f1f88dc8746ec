mod args;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use emd_core::analysis::{
    gradient_profiles, run_lambda_sweep, sweep_to_csv, MetricSource, SweepGrid,
};
use emd_core::descent::{run_batch, trace_to_csv, DescentConfig, Ground as DescentGround};
use emd_core::fmt::sig17;
use emd_core::selfcheck::oracle_check;
use emd_core::{
    chain_emd, chain_emd2_hessian, chain_emd_grad, epsilon_smooth, exact_emd, generate_random_tree,
    normalize_l1, sinkhorn, tree_emd, tree_emd_grad, ChainMetric, CostMatrix, Distribution,
    MetricTree, RandomInstanceSpec, SinkhornConfig, TreeGenParams, TreeOptions,
};

use crate::args::{Cli, Command, DenseGround, Ground, Output, Pair};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Degenerate(_) => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Prefixes a library error with the flag or file it came from.
fn ctx<T>(what: impl std::fmt::Display, r: emd_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Input(format!("{what}: {e}")))
}

fn read(flag: &str, path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{flag} {}: {e}", path.display())))
}

fn write_out(output: &Output, text: &str) -> CliResult<()> {
    match &output.out {
        Some(path) => write_file("--out", path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Input(format!("standard output: {e}")))
        }
    }
}

fn write_file(flag: &str, path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{flag} {}: {e}", path.display())))
}

fn load_distribution(flag: &str, path: &Path) -> CliResult<Distribution> {
    let what = format!("{flag} {}", path.display());
    let d = ctx(&what, Distribution::parse(&read(flag, path)?))?;
    ctx(&what, normalize_l1(&d))
}

fn load_pair(pair: &Pair) -> CliResult<(Distribution, Distribution)> {
    let p = load_distribution("--p", &pair.p)?;
    let q = load_distribution("--q", &pair.q)?;
    if p.len() != q.len() {
        return Err(CliError::Input(format!(
            "--p has {} bins but --q has {}",
            p.len(),
            q.len()
        )));
    }
    Ok((p, q))
}

fn load_chain(path: Option<&PathBuf>, n_bins: usize) -> CliResult<ChainMetric> {
    let metric = match path {
        Some(path) => {
            let what = format!("--chain {}", path.display());
            ctx(&what, ChainMetric::parse(&read("--chain", path)?))?
        }
        None => ctx("bins", ChainMetric::unit(n_bins))?,
    };
    if metric.n_bins() != n_bins {
        return Err(CliError::Input(format!(
            "--chain describes {} bins but the distributions have {n_bins}",
            metric.n_bins()
        )));
    }
    Ok(metric)
}

fn load_tree(path: &Path, allow_zero_cost: bool) -> CliResult<MetricTree> {
    let what = format!("--tree {}", path.display());
    ctx(
        &what,
        MetricTree::parse(&read("--tree", path)?, TreeOptions { allow_zero_cost }),
    )
}

fn check_leaves(tree: &MetricTree, n_bins: usize) -> CliResult<()> {
    if tree.n_leaves() != n_bins {
        return Err(CliError::Input(format!(
            "--tree has {} leaves but the distributions have {n_bins} bins",
            tree.n_leaves()
        )));
    }
    Ok(())
}

fn metric_source(ground: &Ground, n_bins: usize) -> CliResult<MetricSource> {
    match &ground.tree {
        Some(path) => {
            let tree = load_tree(path, ground.allow_zero_cost)?;
            check_leaves(&tree, n_bins)?;
            Ok(MetricSource::Tree(tree))
        }
        None => Ok(MetricSource::Chain(load_chain(
            ground.chain.as_ref(),
            n_bins,
        )?)),
    }
}

fn dense_source(ground: &DenseGround, n_bins: usize) -> CliResult<MetricSource> {
    match &ground.cost {
        Some(path) => {
            let what = format!("--cost {}", path.display());
            let m = ctx(&what, CostMatrix::parse_csv(&read("--cost", path)?))?;
            if m.n() != n_bins {
                return Err(CliError::Input(format!(
                    "{what} is {0}x{0} but the distributions have {n_bins} bins",
                    m.n()
                )));
            }
            Ok(MetricSource::Dense(m))
        }
        None => metric_source(&ground.ground, n_bins),
    }
}

fn print_scalar(x: f64) {
    println!("{x}");
}

fn set_jobs(jobs: Option<usize>) -> CliResult<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Input("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("--jobs: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Dist { ground, pair, rho } => {
            let (p, q) = load_pair(&pair)?;
            let value = match metric_source(&ground, p.len())? {
                MetricSource::Tree(t) => ctx("dist", tree_emd(&t, &p, &q, rho))?,
                MetricSource::Chain(c) => ctx("dist", chain_emd(&p, &q, &c, rho))?,
                MetricSource::Dense(_) => unreachable!("dist takes no cost matrix"),
            };
            print_scalar(value);
        }
        Command::Grad { ground, pair, rho } => {
            let (p, q) = load_pair(&pair)?;
            let grad = match metric_source(&ground, p.len())? {
                MetricSource::Tree(t) => ctx("grad", tree_emd_grad(&t, &p, &q, rho))?,
                MetricSource::Chain(c) => ctx("grad", chain_emd_grad(&p, &q, &c, rho))?,
                MetricSource::Dense(_) => unreachable!("grad takes no cost matrix"),
            };
            for g in grad {
                print_scalar(g);
            }
        }
        Command::Hessian { chain, bins } => {
            let metric = match (&chain, bins) {
                (Some(path), _) => {
                    let what = format!("--chain {}", path.display());
                    ctx(&what, ChainMetric::parse(&read("--chain", path)?))?
                }
                (None, Some(n)) => ctx("--bins", ChainMetric::unit(n))?,
                (None, None) => unreachable!("clap requires one of --chain and --bins"),
            };
            let h = ctx("hessian", chain_emd2_hessian(&metric, metric.n_bins()))?;
            print!("{}", h.to_csv());
        }
        Command::Oracle {
            ground,
            pair,
            plan_out,
        } => {
            let (p, q) = load_pair(&pair)?;
            let m = dense_source(&ground, p.len())?.cost_matrix();
            let (value, plan) = ctx("oracle", exact_emd(&p, &q, &m))?;
            if let Some(path) = plan_out {
                write_file("--plan-out", &path, &plan.flows().to_csv())?;
            }
            print_scalar(value);
        }
        Command::Sinkhorn {
            ground,
            pair,
            solver,
            precision,
            eps,
            plan_out,
            strict,
        } => {
            let (mut p, mut q) = load_pair(&pair)?;
            if let Some(eps) = eps {
                p = ctx("--eps", epsilon_smooth(&p, eps))?;
                q = ctx("--eps", epsilon_smooth(&q, eps))?;
            }
            let m = dense_source(&ground, p.len())?.cost_matrix();
            let cfg = SinkhornConfig {
                lambda: solver.lambda,
                max_iter: solver.max_iter,
                tol: solver.tol,
                precision,
            };
            let res = ctx("sinkhorn", sinkhorn(&p, &q, &m, &cfg))?;
            if let Some(path) = plan_out {
                write_file("--plan-out", &path, &res.plan.flows().to_csv())?;
            }
            println!("distance,iterations,converged,marginal_error");
            println!(
                "{},{},{},{}",
                sig17(res.distance),
                res.iterations,
                res.converged,
                sig17(res.marginal_error)
            );
            if res.numerically_degenerate {
                let msg = format!(
                    "sinkhorn: numerically degenerate at lambda {} in {precision}",
                    cfg.lambda
                );
                if strict {
                    return Err(CliError::Degenerate(msg));
                }
                eprintln!("warning: {msg}");
            }
        }
        Command::Sweep {
            ground,
            pair,
            lambda_min,
            lambda_max,
            count,
            iter_caps,
            precisions,
            tol,
            eps,
            output,
            jobs,
            strict,
        } => {
            set_jobs(jobs)?;
            let (p, q) = load_pair(&pair)?;
            let source = dense_source(&ground, p.len())?;
            let lambdas = ctx(
                "--lambda-min/--lambda-max/--count",
                SweepGrid::log_spaced(lambda_min, lambda_max, count),
            )?;
            let grid = ctx("sweep grid", SweepGrid::new(lambdas, iter_caps, precisions))?;
            let (p, q) = if p.iter().chain(q.iter()).any(|&v| v <= 0.0) {
                eprintln!("note: empty bins smoothed with --eps {eps:e}");
                (
                    ctx("--eps", epsilon_smooth(&p, eps))?,
                    ctx("--eps", epsilon_smooth(&q, eps))?,
                )
            } else {
                (p, q)
            };
            let rows = ctx("sweep", run_lambda_sweep(&p, &q, &source, &grid, tol))?;
            write_out(&output, &sweep_to_csv(&rows))?;
            let degenerate = rows.iter().filter(|r| r.is_degenerate()).count();
            if degenerate > 0 {
                let msg = format!(
                    "sweep: {degenerate} of {} cells numerically degenerate",
                    rows.len()
                );
                if strict {
                    return Err(CliError::Degenerate(msg));
                }
                eprintln!("note: {msg}");
            }
        }
        Command::Profiles {
            chain,
            pair,
            lambdas,
            output,
        } => {
            let (p, q) = load_pair(&pair)?;
            let metric = load_chain(chain.as_ref(), p.len())?;
            let table = ctx("profiles", gradient_profiles(&p, &q, &metric, &lambdas))?;
            write_out(&output, &table.to_csv())?;
        }
        Command::Descent {
            chain,
            tree,
            allow_zero_cost,
            bins,
            setting,
            loss,
            epochs,
            runs,
            seed,
            initial_rate,
            factor,
            runs_dir,
            output,
            jobs,
            strict,
        } => {
            set_jobs(jobs)?;
            let chain_metric;
            let tree_metric;
            let (ground, n_bins) = if let Some(path) = &tree {
                tree_metric = load_tree(path, allow_zero_cost)?;
                let n = tree_metric.n_leaves();
                (DescentGround::Tree(&tree_metric), n)
            } else {
                let n = match &chain {
                    Some(path) => {
                        let what = format!("--chain {}", path.display());
                        ctx(&what, ChainMetric::parse(&read("--chain", path)?))?.n_bins()
                    }
                    None => bins,
                };
                chain_metric = load_chain(chain.as_ref(), n)?;
                (DescentGround::Chain(&chain_metric), n)
            };
            let cfg = DescentConfig {
                loss,
                initial_rate,
                backtrack_factor: factor,
                epochs,
                runs,
                seed,
            };
            ctx("descent", cfg.validate())?;
            let spec = RandomInstanceSpec {
                n_bins,
                setting,
                seed,
            };
            let summary = ctx("descent", run_batch(&spec, ground, &cfg, runs))?;
            if let Some(dir) = &runs_dir {
                fs::create_dir_all(dir)
                    .map_err(|e| CliError::Input(format!("--runs-dir {}: {e}", dir.display())))?;
                for (run_seed, trace) in &summary.traces {
                    write_file(
                        "--runs-dir",
                        &dir.join(format!("run_{run_seed}.csv")),
                        &trace_to_csv(trace),
                    )?;
                }
            }
            write_out(&output, &summary.to_csv())?;
            for (run_seed, err) in &summary.excluded {
                eprintln!("run {run_seed} excluded: {err}");
            }
            if strict && !summary.excluded.is_empty() {
                return Err(CliError::Degenerate(format!(
                    "descent: {} of {runs} runs diverged",
                    summary.excluded.len()
                )));
            }
        }
        Command::GenTree {
            leaves,
            internal,
            max_depth,
            cost_min,
            cost_max,
            seed,
            output,
        } => {
            let params = TreeGenParams {
                n_leaves: leaves,
                n_internal: internal,
                max_depth,
                cost_range: (cost_min, cost_max),
                seed,
            };
            let tree = ctx("gen-tree", generate_random_tree(&params))?;
            write_out(&output, &tree.to_text())?;
        }
        Command::Check { cases, seed } => {
            let report = ctx("check", oracle_check(cases, seed))?;
            println!("{}/{} oracle matches", report.matches(), report.cases());
            eprintln!("worst deviation {}", report.worst_deviation());
            if report.matches() != report.cases() {
                return Err(CliError::Input(format!(
                    "check: {} closed-form values disagree with the exact solver",
                    report.cases() - report.matches()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
