//! Sweeps comparing Sinkhorn against the exact EMD, and per-bin gradient
//! profiles of the different losses.
//!
//! Gradients are compared in the zero-sum tangent space: the Sinkhorn
//! subgradient `log(u) / lambda` is only defined up to an additive constant,
//! so both vectors are mean-centered before taking the angle.

use rayon::prelude::*;

use crate::chain::{chain_emd_grad, ChainMetric};
use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::fmt::sig17;
use crate::matrix::CostMatrix;
use crate::oracle::exact_emd;
use crate::sinkhorn::{epsilon_smooth, sinkhorn, Precision, SinkhornConfig};
use crate::tree::{tree_emd_grad, MetricTree};

/// Angle in degrees between the mean-centered `a` and `b`.
pub fn cosine_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let center = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        v.iter().map(|x| x - mean).collect::<Vec<_>>()
    };
    let (a, b) = (center(a), center(b));
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::ZeroVector);
    }
    // 2 atan2(|a^ - b^|, |a^ + b^|) stays accurate near 0 and 180 degrees, where acos does not.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        let (ux, uy) = (x / na, y / nb);
        diff += (ux - uy) * (ux - uy);
        sum += (ux + uy) * (ux + uy);
    }
    Ok((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Where the ground costs come from; decides how the exact gradient is obtained.
#[derive(Debug, Clone)]
pub enum MetricSource {
    Chain(ChainMetric),
    Tree(MetricTree),
    /// Arbitrary costs; the exact gradient falls back to finite differences
    /// of the oracle value.
    Dense(CostMatrix),
}

impl MetricSource {
    pub fn cost_matrix(&self) -> CostMatrix {
        match self {
            MetricSource::Chain(m) => m.to_cost_matrix(),
            MetricSource::Tree(t) => t.to_cost_matrix(),
            MetricSource::Dense(m) => m.clone(),
        }
    }

    /// Exact `rho = 1` gradient in the l1-preserving convention.
    pub fn exact_gradient(&self, p: &[f64], q: &[f64], m: &CostMatrix) -> Result<Vec<f64>> {
        match self {
            MetricSource::Chain(metric) => chain_emd_grad(p, q, metric, 1.0),
            MetricSource::Tree(tree) => tree_emd_grad(tree, p, q, 1.0),
            MetricSource::Dense(_) => oracle_gradient(p, q, m),
        }
    }
}

/// Central differences of the oracle value along `e_k - 1/N`.
fn oracle_gradient(p: &[f64], q: &[f64], m: &CostMatrix) -> Result<Vec<f64>> {
    let n = p.len();
    let nf = n as f64;
    let min_p = p.iter().copied().fold(f64::INFINITY, f64::min);
    let h = 1e-6f64.min(0.5 * nf * min_p);
    if h <= 0.0 {
        return Err(Error::ZeroEntry {
            index: p.iter().position(|&v| v <= 0.0).unwrap_or(0),
            value: min_p,
        });
    }
    let mut grad = Vec::with_capacity(n);
    let mut shifted = p.to_vec();
    for k in 0..n {
        let mut eval = |sign: f64| -> Result<f64> {
            for (j, s) in shifted.iter_mut().enumerate() {
                let dir = if j == k { 1.0 - 1.0 / nf } else { -1.0 / nf };
                *s = p[j] + sign * h * dir;
            }
            Ok(exact_emd(&shifted, q, m)?.0)
        };
        let plus = eval(1.0)?;
        let minus = eval(-1.0)?;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub iter_caps: Vec<usize>,
    pub precisions: Vec<Precision>,
}

impl SweepGrid {
    pub fn new(
        lambdas: Vec<f64>,
        iter_caps: Vec<usize>,
        precisions: Vec<Precision>,
    ) -> Result<Self> {
        if lambdas.is_empty() || iter_caps.is_empty() || precisions.is_empty() {
            return Err(Error::BadConfig("sweep grid axes must be non-empty".into()));
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::BadConfig("lambdas must be positive".into()));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadConfig(
                "lambdas must be strictly increasing".into(),
            ));
        }
        if iter_caps.contains(&0) {
            return Err(Error::BadConfig("iteration caps must be >= 1".into()));
        }
        Ok(Self {
            lambdas,
            iter_caps,
            precisions,
        })
    }

    /// `count` values log-spaced from `lo` to `hi` inclusive.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
        if !(lo > 0.0 && hi > lo && count >= 2) {
            return Err(Error::BadConfig(format!(
                "bad log grid ({lo}, {hi}, {count})"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        Ok((0..count)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == count - 1 {
                    hi
                } else {
                    (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub precision: Precision,
    pub iter_cap: usize,
    pub sd_value: f64,
    pub exact_value: f64,
    /// `sd / exact`, NaN when the exact value is 0.
    pub ratio: f64,
    /// Angle between the Sinkhorn and exact gradients, NaN when undefined.
    pub angle_degrees: f64,
    pub converged: bool,
    pub numerically_degenerate: bool,
    pub marginal_error: f64,
    /// Set when the cell could not be evaluated.
    pub failure: Option<String>,
}

impl SweepRow {
    /// Non-finite output, a degenerate run, or a failed cell.
    pub fn is_degenerate(&self) -> bool {
        self.failure.is_some()
            || self.numerically_degenerate
            || !self.sd_value.is_finite()
            || !self.ratio.is_finite() && self.exact_value > 0.0
    }
}

pub const SWEEP_CSV_HEADER: &str =
    "lambda,precision,iter_cap,sd,exact,ratio,angle_deg,converged,marginal_err";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            sig17(r.lambda),
            r.precision,
            r.iter_cap,
            sig17(r.sd_value),
            sig17(r.exact_value),
            sig17(r.ratio),
            sig17(r.angle_degrees),
            r.converged,
            sig17(r.marginal_error)
        ));
    }
    out
}

/// Evaluates every `(precision, iter_cap, lambda)` cell. Rows come back
/// ordered by precision, then cap, then lambda, independent of the thread
/// count. `tol` is the Sinkhorn convergence threshold.
pub fn run_lambda_sweep(
    p: &[f64],
    q: &[f64],
    metric: &MetricSource,
    grid: &SweepGrid,
    tol: f64,
) -> Result<Vec<SweepRow>> {
    let m = metric.cost_matrix();
    let (exact_value, _) = exact_emd(p, q, &m)?;
    let exact_grad = if exact_value > 0.0 {
        Some(metric.exact_gradient(p, q, &m)?)
    } else {
        None
    };
    let mut cells = Vec::new();
    for &precision in &grid.precisions {
        for &iter_cap in &grid.iter_caps {
            for &lambda in &grid.lambdas {
                cells.push((precision, iter_cap, lambda));
            }
        }
    }
    let rows = cells
        .into_par_iter()
        .map(|(precision, iter_cap, lambda)| {
            let cfg = SinkhornConfig {
                lambda,
                max_iter: iter_cap,
                tol,
                precision,
            };
            let mut row = SweepRow {
                lambda,
                precision,
                iter_cap,
                sd_value: f64::NAN,
                exact_value,
                ratio: f64::NAN,
                angle_degrees: f64::NAN,
                converged: false,
                numerically_degenerate: false,
                marginal_error: f64::NAN,
                failure: None,
            };
            match sinkhorn(p, q, &m, &cfg) {
                Ok(res) => {
                    row.sd_value = res.distance;
                    row.converged = res.converged;
                    row.numerically_degenerate = res.numerically_degenerate;
                    row.marginal_error = res.marginal_error;
                    if exact_value > 0.0 {
                        row.ratio = res.distance / exact_value;
                    }
                    if let Some(g) = &exact_grad {
                        row.angle_degrees = cosine_angle(&res.subgradient, g).unwrap_or(f64::NAN);
                    }
                }
                Err(e) => row.failure = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Smallest lambda at which `precision` rows with `iter_cap` are degenerate,
/// or deviate from the matching `Binary64` row by more than `rel_dev`.
/// Returns `None` if no such lambda exists in the sweep.
pub fn first_degenerate_lambda(
    rows: &[SweepRow],
    precision: Precision,
    iter_cap: usize,
    rel_dev: f64,
) -> Option<f64> {
    let reference = |lambda: f64| {
        rows.iter().find(|r| {
            r.precision == Precision::Binary64 && r.iter_cap == iter_cap && r.lambda == lambda
        })
    };
    rows.iter()
        .filter(|r| r.precision == precision && r.iter_cap == iter_cap)
        .filter(|r| {
            if r.is_degenerate() {
                return true;
            }
            if precision == Precision::Binary64 {
                return false;
            }
            match reference(r.lambda) {
                Some(base) if !base.is_degenerate() && base.sd_value != 0.0 => {
                    ((r.sd_value - base.sd_value) / base.sd_value).abs() > rel_dev
                }
                _ => false,
            }
        })
        .map(|r| r.lambda)
        .min_by(f64::total_cmp)
}

/// Per-bin gradients of MSE, EMD, EMD^2 and Sinkhorn at several lambdas.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    pub columns: Vec<String>,
    /// One row per bin, values in column order (bin index first).
    pub rows: Vec<Vec<f64>>,
}

impl ProfileTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 { format!("{v}") } else { sig17(*v) })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Gradient profiles on a chain. The Sinkhorn columns are mean-centered and
/// computed on `epsilon_smooth(., 1e-9)` inputs when either distribution has
/// empty bins, since Sinkhorn needs strictly positive mass.
pub fn gradient_profiles(
    p: &Distribution,
    q: &Distribution,
    metric: &ChainMetric,
    lambdas: &[f64],
) -> Result<ProfileTable> {
    let n = p.len();
    let mse: Vec<f64> = p.iter().zip(q.iter()).map(|(a, b)| 2.0 * (a - b)).collect();
    let emd1 = chain_emd_grad(p, q, metric, 1.0)?;
    let emd2 = chain_emd_grad(p, q, metric, 2.0)?;
    let mut columns = vec!["bin".to_string(), "mse".into(), "emd".into(), "emd2".into()];
    let mut data = vec![mse, emd1, emd2];

    let needs_smoothing = p.iter().chain(q.iter()).any(|&v| v <= 0.0);
    let (ps, qs) = if needs_smoothing {
        (epsilon_smooth(p, 1e-9)?, epsilon_smooth(q, 1e-9)?)
    } else {
        (p.clone(), q.clone())
    };
    let m = metric.to_cost_matrix();
    for &lambda in lambdas {
        let cfg = SinkhornConfig {
            lambda,
            ..SinkhornConfig::default()
        };
        let res = sinkhorn(&ps, &qs, &m, &cfg)?;
        let mut g = res.subgradient;
        let mean = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|x| *x -= mean);
        columns.push(format!("sd_{lambda}"));
        data.push(g);
    }
    let rows = (0..n)
        .map(|k| {
            std::iter::once(k as f64)
                .chain(data.iter().map(|c| c[k]))
                .collect()
        })
        .collect();
    Ok(ProfileTable { columns, rows })
}
