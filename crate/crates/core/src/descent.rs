//! Gradient descent from a source distribution towards a target under the
//! closed-form EMD gradients, with a geometric line search on the step size.
//!
//! Each epoch computes `g = grad EMD^rho(p_t, q)` and tries `p_t - rate * g`.
//! The step is accepted when the `rho = 1` EMD to the target does not
//! increase. Starting from the previous epoch's rate, a rejected step divides
//! the rate by `backtrack_factor` until accepted or the floor `2^-60` is
//! reached (a stall: no step is taken). The rate never grows back; rates that
//! re-expand after acceptance oscillate on the stiff modes of the chain and
//! converge far worse.
//!
//! Iterates are not projected onto the simplex. Entries may go negative; the
//! closed-form kernels are defined for any signed vector, and the smallest
//! entry is recorded per epoch.

use std::str::FromStr;

use rayon::prelude::*;

use crate::chain::{chain_emd_grad_unchecked, chain_emd_unchecked, ChainMetric};
use crate::distributions::{check_pair, generate_pair, RandomInstanceSpec};
use crate::error::{Error, Result};
use crate::tree::{tree_emd_grad_unchecked, tree_emd_unchecked, MetricTree};

pub const RATE_FLOOR: f64 = 1.0 / (1u64 << 60) as f64;
pub const RATE_CEILING: f64 = (1u64 << 60) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    EmdRho1,
    EmdRho2,
}

impl Loss {
    pub fn rho(self) -> f64 {
        match self {
            Loss::EmdRho1 => 1.0,
            Loss::EmdRho2 => 2.0,
        }
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emd" | "emd1" | "rho1" => Ok(Loss::EmdRho1),
            "emd2" | "rho2" => Ok(Loss::EmdRho2),
            other => Err(Error::BadConfig(format!("unknown loss '{other}'"))),
        }
    }
}

/// Ground metric the descent runs on.
#[derive(Debug, Clone, Copy)]
pub enum Ground<'a> {
    Chain(&'a ChainMetric),
    Tree(&'a MetricTree),
}

impl Ground<'_> {
    fn dim(&self) -> usize {
        match self {
            Ground::Chain(m) => m.n_bins(),
            Ground::Tree(t) => t.n_leaves(),
        }
    }

    fn emd(&self, p: &[f64], q: &[f64], rho: f64) -> f64 {
        match self {
            Ground::Chain(m) => chain_emd_unchecked(p, q, m.costs(), rho),
            Ground::Tree(t) => tree_emd_unchecked(t, p, q, rho),
        }
    }

    fn grad(&self, p: &[f64], q: &[f64], rho: f64) -> Vec<f64> {
        match self {
            Ground::Chain(m) => chain_emd_grad_unchecked(p, q, m.costs(), rho),
            Ground::Tree(t) => tree_emd_grad_unchecked(t, p, q, rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentConfig {
    pub loss: Loss,
    pub initial_rate: f64,
    pub backtrack_factor: f64,
    pub epochs: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            loss: Loss::EmdRho2,
            initial_rate: (1u64 << 20) as f64,
            backtrack_factor: std::f64::consts::SQRT_2,
            epochs: 2000,
            runs: 64,
            seed: 0,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_rate >= RATE_FLOOR && self.initial_rate <= RATE_CEILING) {
            return Err(Error::BadConfig(format!(
                "initial rate must lie in [2^-60, 2^60], got {}",
                self.initial_rate
            )));
        }
        if !(self.backtrack_factor.is_finite() && self.backtrack_factor > 1.0) {
            return Err(Error::BadConfig(format!(
                "backtrack factor must be > 1, got {}",
                self.backtrack_factor
            )));
        }
        if self.epochs == 0 || self.runs == 0 {
            return Err(Error::BadConfig("epochs and runs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Accepted,
    /// Gradient was exactly zero; nothing to do.
    Stationary,
    /// No rate above the floor kept the error from increasing.
    Stall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// `rho = 1` EMD to the target after this epoch's update.
    pub emd_error: f64,
    /// Rate used by the accepted step (or the floor after a stall).
    pub learning_rate: f64,
    pub total_mass: f64,
    pub min_entry: f64,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    pub initial_error: f64,
    pub records: Vec<EpochRecord>,
    pub final_state: Vec<f64>,
}

impl DescentTrace {
    pub fn final_error(&self) -> f64 {
        self.records
            .last()
            .map_or(self.initial_error, |r| r.emd_error)
    }
}

/// Runs one descent from `p0` towards `q`.
pub fn run_descent(
    p0: &[f64],
    q: &[f64],
    ground: Ground<'_>,
    cfg: &DescentConfig,
) -> Result<DescentTrace> {
    cfg.validate()?;
    check_pair(p0, q)?;
    if ground.dim() != p0.len() {
        return Err(Error::LengthMismatch {
            left: ground.dim(),
            right: p0.len(),
        });
    }
    let rho = cfg.loss.rho();
    let factor = cfg.backtrack_factor;
    let mut p = p0.to_vec();
    let mut error = ground.emd(&p, q, 1.0);
    let initial_error = error;
    let mut rate = cfg.initial_rate;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut candidate = vec![0.0; p.len()];

    for epoch in 0..cfg.epochs {
        let grad = ground.grad(&p, q, rho);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(epoch));
        }
        let try_rate = |rate: f64, out: &mut Vec<f64>| -> f64 {
            for ((o, x), g) in out.iter_mut().zip(&p).zip(&grad) {
                *o = x - rate * g;
            }
            let e = ground.emd(out, q, 1.0);
            if e.is_finite() {
                e
            } else {
                f64::INFINITY
            }
        };

        let event = if grad.iter().all(|&g| g == 0.0) {
            StepEvent::Stationary
        } else {
            let mut accepted = None;
            while rate >= RATE_FLOOR {
                let e = try_rate(rate, &mut candidate);
                if e <= error {
                    accepted = Some(e);
                    break;
                }
                rate /= factor;
            }
            match accepted {
                None => {
                    rate = RATE_FLOOR;
                    StepEvent::Stall
                }
                Some(best) => {
                    debug_assert!(best <= error);
                    std::mem::swap(&mut p, &mut candidate);
                    error = best;
                    StepEvent::Accepted
                }
            }
        };
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(epoch));
        }
        records.push(EpochRecord {
            emd_error: error,
            learning_rate: rate,
            total_mass: p.iter().sum(),
            min_entry: p.iter().copied().fold(f64::INFINITY, f64::min),
            event,
        });
    }
    Ok(DescentTrace {
        initial_error,
        records,
        final_state: p,
    })
}

/// Per-epoch means over the successful runs of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub mean_initial_error: f64,
    pub mean_error: Vec<f64>,
    pub mean_rate: Vec<f64>,
    pub mean_mass: Vec<f64>,
    /// Largest `|total_mass - 1|` seen in any successful run at any epoch.
    pub max_mass_drift: f64,
    pub traces: Vec<(u64, DescentTrace)>,
    /// Seeds whose runs failed, with the reason.
    pub excluded: Vec<(u64, Error)>,
}

impl BatchSummary {
    /// CSV with header `epoch,mean_error,mean_rate,mean_mass`; values at 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        use crate::fmt::sig17;
        let mut out = String::from("epoch,mean_error,mean_rate,mean_mass\n");
        for (i, ((e, r), m)) in self
            .mean_error
            .iter()
            .zip(&self.mean_rate)
            .zip(&self.mean_mass)
            .enumerate()
        {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                sig17(*e),
                sig17(*r),
                sig17(*m)
            ));
        }
        out
    }
}

/// CSV for one run: `epoch,error,rate,mass,min_entry,event`.
pub fn trace_to_csv(trace: &DescentTrace) -> String {
    use crate::fmt::sig17;
    let mut out = String::from("epoch,error,rate,mass,min_entry,event\n");
    out.push_str(&format!("0,{},,1,,\n", sig17(trace.initial_error)));
    for (i, r) in trace.records.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{:?}\n",
            i + 1,
            sig17(r.emd_error),
            sig17(r.learning_rate),
            sig17(r.total_mass),
            sig17(r.min_entry),
            r.event
        ));
    }
    out
}

/// Runs `runs` descents on instances drawn with seeds `spec.seed ..
/// spec.seed + runs` and averages them per epoch. Runs execute in parallel;
/// the result does not depend on scheduling.
pub fn run_batch(
    spec: &RandomInstanceSpec,
    ground: Ground<'_>,
    cfg: &DescentConfig,
    runs: usize,
) -> Result<BatchSummary> {
    cfg.validate()?;
    if runs == 0 {
        return Err(Error::BadConfig("runs must be >= 1".into()));
    }
    let outcomes: Vec<(u64, Result<DescentTrace>)> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = spec.seed.wrapping_add(i);
            let instance = RandomInstanceSpec { seed, ..*spec };
            let result =
                generate_pair(&instance).and_then(|(p, q)| run_descent(&p, &q, ground, cfg));
            (seed, result)
        })
        .collect();

    let epochs = cfg.epochs;
    let mut sum_err = vec![0.0; epochs];
    let mut sum_rate = vec![0.0; epochs];
    let mut sum_mass = vec![0.0; epochs];
    let mut sum_init = 0.0;
    let mut max_drift = 0.0f64;
    let mut traces = Vec::new();
    let mut excluded = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(trace) => {
                sum_init += trace.initial_error;
                for (t, r) in trace.records.iter().enumerate() {
                    sum_err[t] += r.emd_error;
                    sum_rate[t] += r.learning_rate;
                    sum_mass[t] += r.total_mass;
                    max_drift = max_drift.max((r.total_mass - 1.0).abs());
                }
                traces.push((seed, trace));
            }
            Err(e) => excluded.push((seed, e)),
        }
    }
    if traces.is_empty() {
        let (_, first) = excluded.swap_remove(0);
        return Err(first);
    }
    let count = traces.len() as f64;
    let mean = |v: Vec<f64>| v.into_iter().map(|x| x / count).collect::<Vec<_>>();
    Ok(BatchSummary {
        mean_initial_error: sum_init / count,
        mean_error: mean(sum_err),
        mean_rate: mean(sum_rate),
        mean_mass: mean(sum_mass),
        max_mass_drift: max_drift,
        traces,
        excluded,
    })
}
