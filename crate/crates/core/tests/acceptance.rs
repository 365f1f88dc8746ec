//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use emd_core::analysis::{
    first_degenerate_lambda, run_lambda_sweep, MetricSource, SweepGrid, SweepRow,
};
use emd_core::descent::{run_batch, DescentConfig, Ground, Loss};
use emd_core::selfcheck::{random_chain_case, random_unit};
use emd_core::*;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

const FIG1: &str = "\
vehicle - 0
animal vehicle 1
giraffe animal 1
elephant animal 1
truck vehicle 1
plane vehicle 1
";

fn fig1_golden() -> Verdict {
    let p = [0.2, 0.4, 0.2, 0.2];
    let q = [0.0, 0.5, 0.5, 0.0];
    let eval = || {
        let tree = load_tree(FIG1).unwrap();
        (
            tree_emd_grad(&tree, &p, &q, 1.0).unwrap(),
            tree_emd_grad(&tree, &p, &q, 2.0).unwrap(),
            tree_emd(&tree, &p, &q, 1.0).unwrap(),
            tree_emd(&tree, &p, &q, 2.0).unwrap(),
        )
    };
    let mut best = Duration::MAX;
    let mut out = eval();
    for _ in 0..20 {
        let t = Instant::now();
        out = std::hint::black_box(eval());
        best = best.min(t.elapsed());
    }
    let (g1, g2, d1, d2) = out;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12);
    let pass = close(&g1, &[1.5, -0.5, -1.5, 0.5])
        && close(&g2, &[0.5, -0.1, -0.7, 0.3])
        && (d1 - 0.9).abs() <= 1e-12
        && (d2 - 0.19).abs() <= 1e-12
        && best < Duration::from_millis(1);
    verdict(
        pass,
        format!("grad1={g1:?} grad2={g2:?} emd={d1} emd2={d2} time={best:?} (< 1ms)"),
    )
}

fn root_invariance() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(2);
    let (mut dist_dev, mut grad_dev, mut reroots) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let tree = random_tree(&mut rng, 32);
        let n = tree.n_leaves();
        let p = positive_unit(&mut rng, n);
        let q = positive_unit(&mut rng, n);
        for rho in [1.0, 2.0] {
            let d0 = tree_emd(&tree, &p, &q, rho).unwrap();
            let g0 = tree_emd_grad(&tree, &p, &q, rho).unwrap();
            for root in tree.valid_roots() {
                let t = tree.reroot(root).unwrap();
                dist_dev = dist_dev.max((tree_emd(&t, &p, &q, rho).unwrap() - d0).abs());
                let g = tree_emd_grad(&t, &p, &q, rho).unwrap();
                for (a, b) in g.iter().zip(&g0) {
                    grad_dev = grad_dev.max((a - b).abs());
                }
                reroots += 1;
            }
        }
    }
    let took = start.elapsed();
    verdict(
        dist_dev <= 1e-9 && grad_dev <= 1e-9 && took < Duration::from_secs(30),
        format!("{reroots} re-rootings, max dist dev {dist_dev:e}, max grad dev {grad_dev:e}, {took:?} (< 30s)"),
    )
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (metric, p, q) = random_chain_case(&mut rng, 16);
        let closed = chain_emd(&p, &q, &metric, 1.0).unwrap();
        let exact = exact_emd(&p, &q, &metric.to_cost_matrix()).unwrap().0;
        worst = worst.max((closed - exact).abs());
    }
    for _ in 0..500 {
        let tree = random_tree(&mut rng, 12);
        let p = random_unit(&mut rng, tree.n_leaves());
        let q = random_unit(&mut rng, tree.n_leaves());
        let closed = tree_emd(&tree, &p, &q, 1.0).unwrap();
        let exact = exact_emd(&p, &q, &tree.to_cost_matrix()).unwrap().0;
        worst = worst.max((closed - exact).abs());
    }
    let took = start.elapsed();
    verdict(
        worst <= 1e-9 && took < Duration::from_secs(60),
        format!("1000 chain + 500 tree cases, max |closed - oracle| {worst:e}, {took:?} (< 60s)"),
    )
}

fn mass_preservation() -> Verdict {
    let mut rng = rng(4);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let rho = if i % 2 == 0 { 1.0 } else { 2.0 };
        let g = if i % 4 < 2 {
            let n = rng.random_range(2..=32);
            let metric = random_chain(&mut rng, n);
            let p = random_unit(&mut rng, n);
            let q = random_unit(&mut rng, n);
            chain_emd_grad(&p, &q, &metric, rho).unwrap()
        } else {
            let tree = random_tree(&mut rng, 32);
            let p = random_unit(&mut rng, tree.n_leaves());
            let q = random_unit(&mut rng, tree.n_leaves());
            tree_emd_grad(&tree, &p, &q, rho).unwrap()
        };
        worst = worst.max(g.iter().sum::<f64>().abs());
    }
    verdict(
        worst <= 1e-12,
        format!("10000 gradients, max |sum| {worst:e}"),
    )
}

fn finite_differences() -> Verdict {
    let mut rng = rng(5);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..500 {
        let (g, fd): (Vec<f64>, Vec<f64>) = if i % 2 == 0 {
            let n = rng.random_range(2..=32);
            let metric = random_chain(&mut rng, n);
            let p = positive_unit(&mut rng, n);
            let q = positive_unit(&mut rng, n);
            let f = |x: &[f64]| chain_emd(x, &q, &metric, 2.0).unwrap();
            (
                chain_emd_grad(&p, &q, &metric, 2.0).unwrap(),
                (0..n).map(|k| tangent_fd(f, &p, k, h)).collect(),
            )
        } else {
            let tree = random_tree(&mut rng, 32);
            let n = tree.n_leaves();
            let p = positive_unit(&mut rng, n);
            let q = positive_unit(&mut rng, n);
            let f = |x: &[f64]| tree_emd(&tree, x, &q, 2.0).unwrap();
            (
                tree_emd_grad(&tree, &p, &q, 2.0).unwrap(),
                (0..n).map(|k| tangent_fd(f, &p, k, h)).collect(),
            )
        };
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    let mut hess_worst = 0.0f64;
    for n in 2..=8 {
        for _ in 0..10 {
            let metric = random_chain(&mut rng, n);
            let hess = chain_emd2_hessian(&metric, n).unwrap();
            let p = positive_unit(&mut rng, n);
            let q = positive_unit(&mut rng, n);
            let nn = (n * n) as f64;
            for l in 0..n {
                let plus = chain_emd_grad(&shifted(&p, l, 1e-4), &q, &metric, 2.0).unwrap();
                let minus = chain_emd_grad(&shifted(&p, l, -1e-4), &q, &metric, 2.0).unwrap();
                for k in 0..n {
                    let fd = nn * (plus[k] - minus[k]) / 2e-4;
                    hess_worst = hess_worst.max((fd - hess[(k, l)]).abs() / hess.max_abs());
                }
            }
        }
    }
    verdict(
        worst <= 1e-5 && hess_worst <= 1e-5,
        format!("500 rho=2 gradients, max rel err {worst:e}; Hessian N<=8 (x N^2), max rel err {hess_worst:e}"),
    )
}

fn descent() -> Verdict {
    let start = Instant::now();
    let chain = ChainMetric::unit(64).unwrap();
    let batch = |setting, loss| {
        let spec = RandomInstanceSpec {
            n_bins: 64,
            setting,
            seed: 0,
        };
        let cfg = DescentConfig {
            loss,
            ..Default::default()
        };
        run_batch(&spec, Ground::Chain(&chain), &cfg, 64).unwrap()
    };
    let easy = batch(Setting::Easy, Loss::EmdRho2);
    let hard = batch(Setting::Hard, Loss::EmdRho1);
    let easy_final = *easy.mean_error.last().unwrap();
    let hard_final = *hard.mean_error.last().unwrap();
    let hard_frac = hard_final / hard.mean_initial_error;
    let took = start.elapsed();
    let pass = easy_final <= 1e-3
        && easy.max_mass_drift <= 1e-6
        && easy.excluded.is_empty()
        && hard_frac >= 0.1
        && took < Duration::from_secs(300);
    verdict(
        pass,
        format!(
            "easy/emd2: mean error {:.4} -> {easy_final:.4e} (need <= 1e-3), mass drift {:e}; \
             hard/emd: {:.4} -> {hard_final:.4} = {:.2}% of initial (need >= 10%); {took:?}",
            easy.mean_initial_error,
            easy.max_mass_drift,
            hard.mean_initial_error,
            100.0 * hard_frac
        ),
    )
}

/// Longest run of consecutive lambdas whose ratio lies in `[1, 1.05]`.
fn longest_tight_run(rows: &[SweepRow]) -> (usize, f64, f64) {
    let (mut best, mut lo, mut hi) = (0, f64::NAN, f64::NAN);
    let mut i = 0;
    while i < rows.len() {
        let ok = |r: &SweepRow| !r.is_degenerate() && (1.0..=1.05).contains(&r.ratio);
        if ok(&rows[i]) {
            let mut j = i;
            while j + 1 < rows.len() && ok(&rows[j + 1]) {
                j += 1;
            }
            if j + 1 - i > best {
                (best, lo, hi) = (j + 1 - i, rows[i].lambda, rows[j].lambda);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    (best, lo, hi)
}

fn sinkhorn_trends() -> Verdict {
    let start = Instant::now();
    let params = TreeGenParams {
        max_depth: 6,
        cost_range: (1.0, 5.0),
        ..TreeGenParams::new(32, 7)
    };
    let tree = generate_random_tree(&params).unwrap();
    let mut rng = rng(7);
    let p = positive_unit(&mut rng, 32);
    let q = positive_unit(&mut rng, 32);
    let grid = SweepGrid::new(
        SweepGrid::log_spaced(0.1, 100.0, 25).unwrap(),
        vec![10_000],
        vec![Precision::Binary32, Precision::Binary64],
    )
    .unwrap();
    let rows = run_lambda_sweep(&p, &q, &MetricSource::Tree(tree), &grid, 1e-9).unwrap();
    let f64_rows: Vec<SweepRow> = rows
        .iter()
        .filter(|r| r.precision == Precision::Binary64)
        .cloned()
        .collect();
    let (run, lo, hi) = longest_tight_run(&f64_rows);
    let first32 = first_degenerate_lambda(&rows, Precision::Binary32, 10_000, 0.1);
    let first64 = first_degenerate_lambda(&rows, Precision::Binary64, 10_000, 0.1);
    let earlier = match (first32, first64) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    let took = start.elapsed();
    verdict(
        run >= 2 && earlier && took < Duration::from_secs(120),
        format!(
            "f64 ratio in [1, 1.05] on {run} consecutive lambdas [{lo:.3}, {hi:.3}]; \
             first degenerate lambda f32 {first32:?} vs f64 {first64:?}; {took:?} (< 2min)"
        ),
    )
}

fn feasible_plan_bound() -> Verdict {
    let mut rng = rng(8);
    let (mut checked, mut worst) = (0usize, f64::INFINITY);
    for i in 0..500 {
        let (m, n) = if i % 2 == 0 {
            let n = rng.random_range(2..=16);
            (random_chain(&mut rng, n).to_cost_matrix(), n)
        } else {
            let tree = random_tree(&mut rng, 16);
            let n = tree.n_leaves();
            (tree.to_cost_matrix(), n)
        };
        let p = positive_unit(&mut rng, n);
        let q = positive_unit(&mut rng, n);
        let exact = exact_emd(&p, &q, &m).unwrap().0;
        let cfg = SinkhornConfig {
            lambda: rng.random_range(0.1..30.0),
            ..Default::default()
        };
        let res = sinkhorn(&p, &q, &m, &cfg).unwrap();
        if res.converged && res.marginal_error <= 1e-8 {
            checked += 1;
            worst = worst.min(res.distance - exact);
        }
    }
    verdict(
        checked > 0 && worst >= -1e-6,
        format!("{checked}/500 converged cases checked, min (sd - exact) {worst:e} (>= -1e-6)"),
    )
}

fn speed() -> Verdict {
    let params = TreeGenParams {
        n_internal: Some(374),
        ..TreeGenParams::new(1000, 9)
    };
    let tree = generate_random_tree(&params).unwrap();
    let m = tree.to_cost_matrix();
    let mut rng = rng(9);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..8)
        .map(|_| (positive_unit(&mut rng, 1000), positive_unit(&mut rng, 1000)))
        .collect();
    let t = Instant::now();
    for i in 0..512 {
        let (p, q) = &pairs[i % pairs.len()];
        std::hint::black_box(tree_emd_grad(&tree, p, q, 1.0).unwrap());
    }
    let closed = t.elapsed();
    let cfg = SinkhornConfig {
        max_iter: 100,
        ..Default::default()
    };
    let t = Instant::now();
    for i in 0..512 {
        let (p, q) = &pairs[i % pairs.len()];
        std::hint::black_box(sinkhorn(p, q, &m, &cfg).unwrap());
    }
    let sk = t.elapsed();
    let ratio = sk.as_secs_f64() / closed.as_secs_f64();
    verdict(
        tree.n_nodes() == 1374 && ratio >= 10.0,
        format!(
            "{} nodes: 512 closed-form gradients {closed:?}, 512 Sinkhorn(100 it) {sk:?}, speedup {ratio:.0}x (>= 10x)",
            tree.n_nodes()
        ),
    )
}

type Check = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("1 Fig. 1 golden vectors", fig1_golden),
        ("2 root invariance", root_invariance),
        ("3 oracle equivalence", oracle_equivalence),
        ("4 l1-preserving gradients", mass_preservation),
        ("5 finite-difference checks", finite_differences),
        ("6 descent qualitative reproduction", descent),
        ("7 Sinkhorn stability trends", sinkhorn_trends),
        ("8 feasible-plan bound", feasible_plan_bound),
        ("9 speed sanity", speed),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        if !v.pass {
            failed += 1;
        }
        println!(
            "[{}] {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {}/{} criteria passed", 9 - failed, 9);
    if failed > 0 {
        std::process::exit(1);
    }
}
