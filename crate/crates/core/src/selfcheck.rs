//! Randomized agreement check between the closed forms and the min-cost-flow
//! oracle. Backs the CLI `check` command.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::chain::{chain_emd, ChainMetric};
use crate::error::Result;
use crate::oracle::exact_emd;
use crate::tree::{generate_random_tree, tree_emd, TreeGenParams};

/// Agreement tolerance between closed form and oracle.
pub const ORACLE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseKind {
    Chain,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseOutcome {
    pub kind: CaseKind,
    pub n: usize,
    pub closed_form: f64,
    pub oracle: f64,
}

impl CaseOutcome {
    pub fn deviation(&self) -> f64 {
        (self.closed_form - self.oracle).abs()
    }

    pub fn matches(&self) -> bool {
        self.deviation() <= ORACLE_MATCH_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub outcomes: Vec<CaseOutcome>,
}

impl CheckReport {
    pub fn cases(&self) -> usize {
        self.outcomes.len()
    }

    pub fn matches(&self) -> usize {
        self.outcomes.iter().filter(|o| o.matches()).count()
    }

    pub fn worst_deviation(&self) -> f64 {
        self.outcomes
            .iter()
            .map(CaseOutcome::deviation)
            .fold(0.0, f64::max)
    }
}

/// Random unit-mass vector with roughly a fifth of the entries set to zero.
pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Random chain instance with `2..=max_bins` bins and costs in `[0.1, 5]`.
pub fn random_chain_case(rng: &mut impl Rng, max_bins: usize) -> (ChainMetric, Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..=max_bins);
    let costs = (0..n - 1).map(|_| rng.random_range(0.1..5.0)).collect();
    let metric = ChainMetric::new(costs).expect("positive costs");
    (metric, random_unit(rng, n), random_unit(rng, n))
}

/// Alternates chain (N <= 16) and tree (<= 12 leaves) cases.
pub fn oracle_check(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut outcomes = Vec::with_capacity(cases);
    for i in 0..cases {
        if i % 2 == 0 {
            let (metric, p, q) = random_chain_case(&mut rng, 16);
            let closed_form = chain_emd(&p, &q, &metric, 1.0)?;
            let (oracle, _) = exact_emd(&p, &q, &metric.to_cost_matrix())?;
            outcomes.push(CaseOutcome {
                kind: CaseKind::Chain,
                n: p.len(),
                closed_form,
                oracle,
            });
        } else {
            let n_leaves = rng.random_range(2..=12);
            let mut params = TreeGenParams::new(n_leaves, rng.random());
            params.max_depth = rng.random_range(2..=6);
            params.cost_range = (0.1, 5.0);
            let tree = generate_random_tree(&params)?;
            let p = random_unit(&mut rng, n_leaves);
            let q = random_unit(&mut rng, n_leaves);
            let closed_form = tree_emd(&tree, &p, &q, 1.0)?;
            let (oracle, _) = exact_emd(&p, &q, &tree.to_cost_matrix())?;
            outcomes.push(CaseOutcome {
                kind: CaseKind::Tree,
                n: n_leaves,
                closed_form,
                oracle,
            });
        }
    }
    Ok(CheckReport { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_battery_passes() {
        let report = oracle_check(40, 3).unwrap();
        assert_eq!(report.matches(), 40, "worst {}", report.worst_deviation());
    }

    #[test]
    fn deterministic() {
        assert_eq!(oracle_check(10, 1).unwrap(), oracle_check(10, 1).unwrap());
    }
}
