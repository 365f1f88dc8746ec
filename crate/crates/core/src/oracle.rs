//! Exact EMD by min-cost flow on the bipartite transport problem.
//!
//! Successive shortest paths with Johnson potentials: each round runs a dense
//! Dijkstra from every source with remaining supply over the residual graph
//! (forward arcs `a -> b` of cost `M[a][b]` with unbounded capacity, backward
//! arcs `b -> a` of cost `-M[a][b]` wherever flow is positive) and pushes the
//! bottleneck amount to the nearest sink with remaining demand.
//!
//! This is a ground-truth oracle for small problems, not a production solver:
//! `O(N^3)` time and `O(N^2)` memory. On return the residual graph is checked
//! for arcs with negative reduced cost; an optimal flow has none.

use crate::distributions::check_pair;
use crate::error::{Error, Result};
use crate::matrix::{CostMatrix, SquareMatrix, TransportPlan};

pub const DEFAULT_ORACLE_CAP: usize = 256;

/// Reduced costs below `-REDUCED_COST_TOL * max(1, max cost)` fail the certificate.
pub const REDUCED_COST_TOL: f64 = 1e-12;

/// Optimal transport cost and a witness plan. Ties between optimal plans are
/// broken arbitrarily.
pub fn exact_emd(p: &[f64], q: &[f64], m: &CostMatrix) -> Result<(f64, TransportPlan)> {
    exact_emd_capped(p, q, m, DEFAULT_ORACLE_CAP)
}

pub fn exact_emd_capped(
    p: &[f64],
    q: &[f64],
    m: &CostMatrix,
    cap: usize,
) -> Result<(f64, TransportPlan)> {
    check_pair(p, q)?;
    let n = p.len();
    if m.n() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: m.n(),
        });
    }
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    for v in [p, q] {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| **x < 0.0) {
            return Err(Error::NegativeEntry { index, value });
        }
    }
    let mut solver = Solver::new(p, q, m);
    solver.run()?;
    solver.certify()?;
    let plan = TransportPlan::new(solver.flow);
    let value = crate::matrix::plan_cost(&plan, m)?;
    Ok((value, plan))
}

struct Solver<'a> {
    n: usize,
    cost: &'a CostMatrix,
    supply: Vec<f64>,
    demand: Vec<f64>,
    flow: SquareMatrix,
    /// Sources `0..n`, sinks `n..2n`.
    potential: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Pred {
    None,
    Start,
    /// Reached sink via forward arc from source.
    Forward(usize),
    /// Reached source via backward arc from sink.
    Backward(usize),
}

impl<'a> Solver<'a> {
    fn new(p: &[f64], q: &[f64], cost: &'a CostMatrix) -> Self {
        let n = p.len();
        Self {
            n,
            cost,
            supply: p.to_vec(),
            demand: q.to_vec(),
            flow: SquareMatrix::zeros(n),
            potential: vec![0.0; 2 * n],
        }
    }

    fn run(&mut self) -> Result<()> {
        let n = self.n;
        // Each round exhausts a source, a sink, or a backward arc; this bound
        // is far above what occurs in practice.
        let max_rounds = 4 * n * n + 8;
        for _ in 0..max_rounds {
            if !self.supply.iter().any(|&s| s > 0.0) || !self.demand.iter().any(|&d| d > 0.0) {
                return Ok(());
            }
            let (dist, pred) = self.dijkstra();
            let target = (0..n)
                .filter(|&b| self.demand[b] > 0.0 && dist[n + b].is_finite())
                .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]))
                .expect("every sink is reachable through forward arcs");
            let reach = dist[n + target];
            for (pi, d) in self.potential.iter_mut().zip(&dist) {
                *pi += d.min(reach);
            }
            self.augment(target, &pred);
        }
        Err(Error::NotOptimal(f64::NAN))
    }

    fn reduced_forward(&self, a: usize, b: usize) -> f64 {
        self.cost[(a, b)] + self.potential[a] - self.potential[self.n + b]
    }

    fn dijkstra(&self) -> (Vec<f64>, Vec<Pred>) {
        let n = self.n;
        let mut dist = vec![f64::INFINITY; 2 * n];
        let mut pred = vec![Pred::None; 2 * n];
        let mut done = vec![false; 2 * n];
        for a in 0..n {
            if self.supply[a] > 0.0 {
                dist[a] = 0.0;
                pred[a] = Pred::Start;
            }
        }
        loop {
            let next = (0..2 * n)
                .filter(|&v| !done[v] && dist[v].is_finite())
                .min_by(|&x, &y| dist[x].total_cmp(&dist[y]));
            let Some(v) = next else { break };
            done[v] = true;
            if v < n {
                let a = v;
                for b in 0..n {
                    let w = n + b;
                    if done[w] {
                        continue;
                    }
                    // Clamp rounding noise; exact reduced costs are non-negative.
                    let nd = dist[a] + self.reduced_forward(a, b).max(0.0);
                    if nd < dist[w] {
                        dist[w] = nd;
                        pred[w] = Pred::Forward(a);
                    }
                }
            } else {
                let b = v - n;
                for a in 0..n {
                    if done[a] || self.flow[(a, b)] <= 0.0 {
                        continue;
                    }
                    let rc = -self.reduced_forward(a, b);
                    let nd = dist[v] + rc.max(0.0);
                    if nd < dist[a] {
                        dist[a] = nd;
                        pred[a] = Pred::Backward(b);
                    }
                }
            }
        }
        (dist, pred)
    }

    fn augment(&mut self, target: usize, pred: &[Pred]) {
        let n = self.n;
        // Collect the path as (source, sink, is_forward) arcs ending at `target`.
        let mut arcs = Vec::new();
        let mut v = n + target;
        let start = loop {
            match pred[v] {
                Pred::Start => break v,
                Pred::Forward(a) => {
                    arcs.push((a, v - n, true));
                    v = a;
                }
                Pred::Backward(b) => {
                    arcs.push((v, b, false));
                    v = n + b;
                }
                Pred::None => unreachable!("path nodes have predecessors"),
            }
        };
        let mut delta = self.supply[start].min(self.demand[target]);
        for &(a, b, forward) in &arcs {
            if !forward {
                delta = delta.min(self.flow[(a, b)]);
            }
        }
        for &(a, b, forward) in &arcs {
            if forward {
                self.flow[(a, b)] += delta;
            } else {
                let f = &mut self.flow[(a, b)];
                *f = if *f == delta {
                    0.0
                } else {
                    (*f - delta).max(0.0)
                };
            }
        }
        self.supply[start] = if self.supply[start] == delta {
            0.0
        } else {
            self.supply[start] - delta
        };
        self.demand[target] = if self.demand[target] == delta {
            0.0
        } else {
            self.demand[target] - delta
        };
    }

    /// No residual arc may have negative reduced cost under the final potentials.
    fn certify(&self) -> Result<()> {
        let tol = REDUCED_COST_TOL * self.cost.max_cost().max(1.0);
        let mut worst = 0.0f64;
        for a in 0..self.n {
            for b in 0..self.n {
                let rc = self.reduced_forward(a, b);
                worst = worst.min(rc);
                if self.flow[(a, b)] > 0.0 {
                    worst = worst.min(-rc);
                }
            }
        }
        if worst < -tol {
            Err(Error::NotOptimal(worst))
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainMetric;
    use crate::matrix::plan_cost;

    fn swap2() -> CostMatrix {
        CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    #[test]
    fn two_bin_example() {
        let (v, plan) = exact_emd(&[0.7, 0.3], &[0.3, 0.7], &swap2()).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert!(plan.is_feasible(&[0.7, 0.3], &[0.3, 0.7], 1e-12));
    }

    #[test]
    fn identical_inputs_stay_put() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let m = ChainMetric::unit(4).unwrap().to_cost_matrix();
        let (v, plan) = exact_emd(&p, &p, &m).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(plan, TransportPlan::diagonal(&p));
    }

    #[test]
    fn chain_example() {
        let m = ChainMetric::unit(4).unwrap().to_cost_matrix();
        let (v, _) = exact_emd(&[0.2, 0.4, 0.2, 0.2], &[0.0, 0.5, 0.5, 0.0], &m).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn outer_plan_is_never_better() {
        let m = crate::tree::load_tree(
            "vehicle - 0\nanimal vehicle 1\ngiraffe animal 1\nelephant animal 1\ntruck vehicle 1\nplane vehicle 1\n",
        )
        .unwrap()
        .to_cost_matrix();
        let p = [0.2, 0.4, 0.2, 0.2];
        let q = [0.0, 0.5, 0.5, 0.0];
        let (v, _) = exact_emd(&p, &q, &m).unwrap();
        assert!((v - 0.9).abs() < 1e-12);
        assert!(plan_cost(&TransportPlan::outer(&p, &q), &m).unwrap() >= v);
    }

    #[test]
    fn errors() {
        let m = swap2();
        assert!(matches!(
            exact_emd(&[0.5, 0.5], &[0.5, 0.6], &m),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            exact_emd_capped(&[0.5, 0.5], &[0.5, 0.5], &m, 1),
            Err(Error::TooLarge { n: 2, cap: 1 })
        ));
        let m3 = ChainMetric::unit(3).unwrap().to_cost_matrix();
        assert!(matches!(
            exact_emd(&[0.5, 0.5], &[0.5, 0.5], &m3),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
