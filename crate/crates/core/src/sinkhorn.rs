//! Sinkhorn-Knopp scaling for the entropically regularized EMD, with a
//! precision parameter so the same iteration can run in `f32` or `f64`.
//!
//! ```text
//! K  = exp(-lambda * M - 1)
//! u  = 1
//! repeat: u = p / (K (q / (K^T u)))
//! v  = q / (K^T u)
//! SD = sum(u * ((K .* M) v))
//! grad SD = log(u) / lambda
//! ```
//!
//! Every value inside the loop, `K` included, is computed in the selected
//! precision. Underflow in `K` and the resulting infinities or NaNs are the
//! failure mode under study, so they are reported through
//! `numerically_degenerate` instead of being returned as errors.

use std::str::FromStr;

use num_traits::Float;

use crate::distributions::{check_pair, Distribution};
use crate::error::{Error, Result};
use crate::matrix::{CostMatrix, SquareMatrix, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precision {
    Binary32,
    Binary64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Binary32 => "f32",
            Precision::Binary64 => "f64",
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "binary32" => Ok(Precision::Binary32),
            "f64" | "binary64" => Ok(Precision::Binary64),
            other => Err(Error::BadConfig(format!("unknown precision '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop when `max|u_new - u| / max|u_new| < tol`.
    pub tol: f64,
    pub precision: Precision,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            max_iter: 10_000,
            tol: 1e-9,
            precision: Precision::Binary64,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::BadConfig(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::BadConfig("max_iter must be >= 1".into()));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::BadConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// `<M, T>` of the regularized plan, without the entropy term.
    pub distance: f64,
    /// `log(u) / lambda`; defined up to an additive constant.
    pub subgradient: Vec<f64>,
    pub plan: TransportPlan,
    pub iterations: usize,
    pub converged: bool,
    /// A non-finite value appeared in `u`, `v` or the scaling products.
    pub numerically_degenerate: bool,
    /// Largest deviation of the plan marginals from `p` and `q`.
    pub marginal_error: f64,
    /// Plan entries that came out negative and were clamped to zero.
    pub clamped_entries: usize,
}

/// Runs Sinkhorn-Knopp in the configured precision.
pub fn sinkhorn(
    p: &[f64],
    q: &[f64],
    m: &CostMatrix,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult> {
    cfg.validate()?;
    check_pair(p, q)?;
    if m.n() != p.len() {
        return Err(Error::ShapeMismatch {
            expected: p.len(),
            got: m.n(),
        });
    }
    for v in [p, q] {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x <= 0.0) {
            return Err(Error::ZeroEntry { index, value });
        }
    }
    match cfg.precision {
        Precision::Binary32 => Ok(run::<f32>(p, q, m, cfg)),
        Precision::Binary64 => Ok(run::<f64>(p, q, m, cfg)),
    }
}

fn cast<F: Float>(x: f64) -> F {
    F::from(x).expect("finite f64 converts to float type")
}

fn run<F: Float>(
    p64: &[f64],
    q64: &[f64],
    m64: &CostMatrix,
    cfg: &SinkhornConfig,
) -> SinkhornResult {
    let n = p64.len();
    let p: Vec<F> = p64.iter().map(|&x| cast(x)).collect();
    let q: Vec<F> = q64.iter().map(|&x| cast(x)).collect();
    let m: Vec<F> = m64.matrix().as_slice().iter().map(|&x| cast(x)).collect();
    let lambda: F = cast(cfg.lambda);
    let tol: F = cast(cfg.tol);
    let k: Vec<F> = m.iter().map(|&c| (-lambda * c - F::one()).exp()).collect();

    let kt_mul = |u: &[F], out: &mut [F]| {
        out.iter_mut().for_each(|x| *x = F::zero());
        for r in 0..n {
            let ur = u[r];
            for (o, &kv) in out.iter_mut().zip(&k[r * n..(r + 1) * n]) {
                *o = *o + kv * ur;
            }
        }
    };
    // Cost matrices are symmetric, so K v = K^T v.
    let k_mul = kt_mul;

    let mut u = vec![F::one(); n];
    let mut next = vec![F::zero(); n];
    let mut ktu = vec![F::zero(); n];
    let mut ratio = vec![F::zero(); n];
    let mut iterations = 0;
    let mut converged = false;
    let mut degenerate = false;

    while iterations < cfg.max_iter {
        iterations += 1;
        kt_mul(&u, &mut ktu);
        for ((r, &qb), &d) in ratio.iter_mut().zip(&q).zip(&ktu) {
            *r = qb / d;
        }
        k_mul(&ratio, &mut next);
        for (x, &pa) in next.iter_mut().zip(&p) {
            *x = pa / *x;
        }
        if next.iter().chain(&ratio).any(|x| !x.is_finite()) {
            degenerate = true;
            u.copy_from_slice(&next);
            break;
        }
        let scale = next.iter().fold(F::zero(), |acc, x| acc.max(x.abs()));
        let change = u
            .iter()
            .zip(&next)
            .fold(F::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
        std::mem::swap(&mut u, &mut next);
        if change / scale < tol {
            converged = true;
            break;
        }
    }

    kt_mul(&u, &mut ktu);
    let v: Vec<F> = q.iter().zip(&ktu).map(|(&qb, &d)| qb / d).collect();
    if u.iter().chain(&v).any(|x| !x.is_finite()) {
        degenerate = true;
    }

    // SD = sum(u .* ((K .* M) v)), accumulated in the working precision.
    let mut distance = F::zero();
    for r in 0..n {
        let row = (0..n).fold(F::zero(), |acc, c| acc + k[r * n + c] * m[r * n + c] * v[c]);
        distance = distance + u[r] * row;
    }
    let mut clamped = 0;
    let plan = SquareMatrix::from_fn(n, |r, c| {
        let t = (u[r] * k[r * n + c] * v[c]).to_f64().unwrap_or(f64::NAN);
        if t < 0.0 {
            clamped += 1;
            0.0
        } else {
            t
        }
    });
    let plan = TransportPlan::new(plan);
    let subgradient: Vec<f64> = u
        .iter()
        .map(|&x| (x.ln() / lambda).to_f64().unwrap_or(f64::NAN))
        .collect();
    let distance = distance.to_f64().unwrap_or(f64::NAN);
    let marginal_error = plan.marginal_error(p64, q64);
    if !distance.is_finite() || !marginal_error.is_finite() {
        degenerate = true;
    }
    SinkhornResult {
        distance,
        subgradient,
        plan,
        iterations,
        converged: converged && !degenerate,
        numerically_degenerate: degenerate,
        marginal_error,
        clamped_entries: clamped,
    }
}

/// Adds `eps` to every entry and renormalizes, giving a strictly positive
/// distribution that Sinkhorn accepts.
pub fn epsilon_smooth(d: &Distribution, eps: f64) -> Result<Distribution> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::BadEps(eps));
    }
    Distribution::normalized(d.iter().map(|v| v + eps).collect())
}
