//! Closed-form EMD on chain-connected bins.
//!
//! On a chain every unit of mass travelling from bin `a` to bin `b` crosses
//! each edge in between, so the optimal cost is the sum over edges of the edge
//! cost times the net mass crossing it. The net crossing mass of edge `e`
//! (between bins `e` and `e + 1`) is the prefix sum `phi_e = sum_{j <= e} (p_j - q_j)`.
//!
//! The relaxed distance raises the crossing mass to a power `rho >= 1`;
//! `rho = 1` is the true EMD, `rho = 2` is smooth with a constant Hessian.
//!
//! Gradients are l1-preserving: they are derivatives along the zero-sum
//! directions `e_k - 1/N`, so a gradient step never creates or destroys mass.

use crate::distributions::check_pair;
use crate::error::{Error, Result};
use crate::matrix::{CostMatrix, SquareMatrix};

/// Positive costs between consecutive bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMetric {
    costs: Vec<f64>,
}

impl ChainMetric {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::TooFewBins(costs.len() + 1));
        }
        for (i, &c) in costs.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::NonPositiveCost {
                    what: format!("chain edge {i}"),
                    value: c,
                });
            }
        }
        Ok(Self { costs })
    }

    /// All consecutive costs equal to 1.
    pub fn unit(n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::TooFewBins(n_bins));
        }
        Ok(Self {
            costs: vec![1.0; n_bins - 1],
        })
    }

    /// Parses one positive cost per line (`#` comments and blanks ignored).
    pub fn parse(text: &str) -> Result<Self> {
        let mut costs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = crate::distributions::strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            costs.push(line.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("'{line}': {e}"),
            })?);
        }
        Self::new(costs)
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn n_bins(&self) -> usize {
        self.costs.len() + 1
    }

    /// Dense ground costs: `M[i][j]` is the sum of the consecutive costs between `i` and `j`.
    pub fn to_cost_matrix(&self) -> CostMatrix {
        // Summing edges (not differencing positions) keeps the matrix exactly symmetric.
        let n = self.n_bins();
        let m = SquareMatrix::from_fn(n, |r, c| {
            let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
            self.costs[lo..hi].iter().sum()
        });
        CostMatrix::new(m).expect("chain costs induce a valid cost matrix")
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.n_bins() != n {
            return Err(Error::LengthMismatch {
                left: self.n_bins(),
                right: n,
            });
        }
        Ok(())
    }
}

/// Signed excess mass crossing each of the `N - 1` chain edges.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeFlow {
    phi: Vec<f64>,
}

impl CumulativeFlow {
    pub fn values(&self) -> &[f64] {
        &self.phi
    }
}

pub fn cumulative_flow(p: &[f64], q: &[f64]) -> Result<CumulativeFlow> {
    check_pair(p, q)?;
    Ok(CumulativeFlow {
        phi: prefix_flow(p, q),
    })
}

pub(crate) fn prefix_flow(p: &[f64], q: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut phi = Vec::with_capacity(n.saturating_sub(1));
    let mut acc = 0.0;
    for (a, b) in p[..n - 1].iter().zip(q) {
        acc += a - b;
        phi.push(acc);
    }
    phi
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho >= 1.0 {
        Ok(())
    } else {
        Err(Error::BadRho(rho))
    }
}

/// `|phi|^rho`, exact for the common powers.
#[inline]
pub(crate) fn flow_cost(phi: f64, rho: f64) -> f64 {
    if rho == 1.0 {
        phi.abs()
    } else if rho == 2.0 {
        phi * phi
    } else {
        phi.abs().powf(rho)
    }
}

/// `sgn(phi) |phi|^(rho - 1)` with `sgn(0) = 0`.
#[inline]
pub(crate) fn flow_slope(phi: f64, rho: f64) -> f64 {
    if phi == 0.0 {
        0.0
    } else if rho == 1.0 {
        phi.signum()
    } else if rho == 2.0 {
        phi
    } else {
        phi.signum() * phi.abs().powf(rho - 1.0)
    }
}

/// Relaxed chain EMD: `sum_e cost_e |phi_e|^rho`.
pub fn chain_emd(p: &[f64], q: &[f64], metric: &ChainMetric, rho: f64) -> Result<f64> {
    check_pair(p, q)?;
    metric.check_len(p.len())?;
    check_rho(rho)?;
    Ok(chain_emd_unchecked(p, q, metric.costs(), rho))
}

pub(crate) fn chain_emd_unchecked(p: &[f64], q: &[f64], costs: &[f64], rho: f64) -> f64 {
    let mut acc = 0.0;
    compensated_sum(p.iter().zip(q).zip(costs).map(|((a, b), c)| {
        acc += a - b;
        c * flow_cost(acc, rho)
    }))
}

/// Neumaier summation, so that short sums of decimal inputs print as the
/// decimal one expects (0.19 rather than 0.19000000000000003).
pub(crate) fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in terms {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// l1-preserving gradient of the relaxed chain EMD with respect to `p`.
///
/// Component `k` is `rho * sum_e cost_e sgn(phi_e)|phi_e|^(rho-1) * (H(e >= k) - (e+1)/N)`.
/// For `rho = 1` this is a subgradient; it is not differentiable where some
/// `phi_e = 0`, and those edges contribute nothing.
pub fn chain_emd_grad(p: &[f64], q: &[f64], metric: &ChainMetric, rho: f64) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    metric.check_len(p.len())?;
    check_rho(rho)?;
    Ok(chain_emd_grad_unchecked(p, q, metric.costs(), rho))
}

pub(crate) fn chain_emd_grad_unchecked(p: &[f64], q: &[f64], costs: &[f64], rho: f64) -> Vec<f64> {
    let n = p.len();
    let phi = prefix_flow(p, q);
    // suffix[k] = sum over edges e >= k of the edge weight
    let mut suffix = vec![0.0; n];
    let mut acc = 0.0;
    for e in (0..n - 1).rev() {
        acc += costs[e] * flow_slope(phi[e], rho);
        suffix[e] = acc;
    }
    center_and_scale(&mut suffix, rho);
    suffix
}

/// Subtracts the mean and multiplies by `rho`; the mean term is the `-1/N`
/// part of the projected direction.
pub(crate) fn center_and_scale(v: &mut [f64], rho: f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x = rho * (*x - mean);
    }
}

/// Hessian of the `rho = 2` chain EMD in the unnormalized zero-sum basis
/// `N e_k - 1` (entry `N - 1` at `k`, `-1` elsewhere):
/// `H[k][l] = 2 sum_i cost_i (N H(i-l) - i)(N H(i-k) - i)` with 1-based edges `i`.
///
/// It does not depend on `p` or `q`. Because `chain_emd_grad` differentiates
/// along `e_k - 1/N` instead, the derivative of that gradient along `e_l - 1/N`
/// equals `H[k][l] / N^2`.
pub fn chain_emd2_hessian(metric: &ChainMetric, n: usize) -> Result<SquareMatrix> {
    if n < 2 {
        return Err(Error::BadSize(format!("need n >= 2, got {n}")));
    }
    if metric.n_bins() != n {
        return Err(Error::BadSize(format!(
            "metric has {} costs, expected {}",
            metric.costs.len(),
            n - 1
        )));
    }
    let nf = n as f64;
    let term = |edge: usize, bin: usize| -> f64 {
        let step = if edge >= bin { nf } else { 0.0 };
        step - (edge + 1) as f64
    };
    let mut h = SquareMatrix::zeros(n);
    for (e, &c) in metric.costs.iter().enumerate() {
        for k in 0..n {
            let tk = term(e, k);
            for l in 0..n {
                h[(k, l)] += 2.0 * c * tk * term(e, l);
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: [f64; 4] = [0.2, 0.4, 0.2, 0.2];
    const Q: [f64; 4] = [0.0, 0.5, 0.5, 0.0];

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cumulative_flow_examples() {
        assert_eq!(cumulative_flow(&P, &P).unwrap().values(), &[0.0; 3]);
        assert_eq!(
            cumulative_flow(&[1.0, 0.0], &[0.0, 1.0]).unwrap().values(),
            &[1.0]
        );
        let phi = cumulative_flow(&P, &Q).unwrap();
        assert!(close(phi.values(), &[0.2, 0.1, -0.2], 1e-15));
    }

    #[test]
    fn cumulative_flow_errors() {
        assert!(matches!(
            cumulative_flow(&[0.5, 0.5], &[1.0, 0.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            cumulative_flow(&[0.5, 0.5], &[0.5, 0.49]),
            Err(Error::MassMismatch { .. })
        ));
    }

    #[test]
    fn distance_examples() {
        let unit = ChainMetric::unit(4).unwrap();
        assert_eq!(chain_emd(&P, &P, &unit, 1.0).unwrap(), 0.0);
        assert_eq!(chain_emd(&P, &P, &unit, 2.0).unwrap(), 0.0);
        assert!((chain_emd(&P, &Q, &unit, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((chain_emd(&P, &Q, &unit, 2.0).unwrap() - 0.09).abs() < 1e-15);
    }

    #[test]
    fn bad_rho_rejected() {
        let unit = ChainMetric::unit(4).unwrap();
        assert_eq!(chain_emd(&P, &Q, &unit, 0.5), Err(Error::BadRho(0.5)));
        assert!(matches!(
            chain_emd_grad(&P, &Q, &unit, f64::NAN),
            Err(Error::BadRho(_))
        ));
    }

    #[test]
    fn metric_length_checked() {
        let short = ChainMetric::unit(3).unwrap();
        assert!(matches!(
            chain_emd(&P, &Q, &short, 1.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let unit = ChainMetric::unit(4).unwrap();
        let g1 = chain_emd_grad(&P, &Q, &unit, 1.0).unwrap();
        assert!(close(&g1, &[1.0, 0.0, -1.0, 0.0], 1e-12), "{g1:?}");
        let g2 = chain_emd_grad(&P, &Q, &unit, 2.0).unwrap();
        assert!(close(&g2, &[0.3, -0.1, -0.3, 0.1], 1e-12), "{g2:?}");
        let g0 = chain_emd_grad(&P, &P, &unit, 2.0).unwrap();
        assert_eq!(g0, vec![0.0; 4]);
    }

    #[test]
    fn hessian_two_bins() {
        let h = chain_emd2_hessian(&ChainMetric::unit(2).unwrap(), 2).unwrap();
        assert_eq!(h.as_slice(), &[2.0, -2.0, -2.0, 2.0]);
    }

    #[test]
    fn hessian_is_symmetric_with_zero_row_sums() {
        let metric = ChainMetric::new(vec![1.0, 2.5, 0.3, 4.0, 1.1]).unwrap();
        let h = chain_emd2_hessian(&metric, 6).unwrap();
        assert!(h.is_symmetric());
        for s in h.row_sums() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_size_errors() {
        let metric = ChainMetric::unit(4).unwrap();
        assert!(matches!(
            chain_emd2_hessian(&metric, 1),
            Err(Error::BadSize(_))
        ));
        assert!(matches!(
            chain_emd2_hessian(&metric, 5),
            Err(Error::BadSize(_))
        ));
    }

    #[test]
    fn cost_matrix_examples() {
        let unit = ChainMetric::unit(3).unwrap().to_cost_matrix();
        assert_eq!(
            unit.matrix().as_slice(),
            &[0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0]
        );
        let m = ChainMetric::new(vec![2.0, 3.0]).unwrap().to_cost_matrix();
        assert_eq!(
            m.matrix().as_slice(),
            &[0.0, 2.0, 5.0, 2.0, 0.0, 3.0, 5.0, 3.0, 0.0]
        );
    }

    #[test]
    fn metric_validation() {
        assert!(matches!(
            ChainMetric::new(vec![1.0, 0.0]),
            Err(Error::NonPositiveCost { .. })
        ));
        assert!(ChainMetric::new(vec![]).is_err());
        assert_eq!(
            ChainMetric::parse("# costs\n1\n2.5\n").unwrap().costs(),
            &[1.0, 2.5]
        );
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn unit_pair(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
                .prop_filter_map("zero mass", |(p, q)| {
                    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
                    (sp > 0.0 && sq > 0.0).then(|| {
                        (
                            p.iter().map(|v| v / sp).collect(),
                            q.iter().map(|v| v / sq).collect(),
                        )
                    })
                })
        }

        fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            (2usize..24).prop_flat_map(|n| {
                (unit_pair(n), proptest::collection::vec(0.1f64..5.0, n - 1))
                    .prop_map(|((p, q), c)| (p, q, c))
            })
        }

        proptest! {
            #[test]
            fn symmetric_in_arguments((p, q, c) in instance(), rho in 1.0f64..3.0) {
                let m = ChainMetric::new(c).unwrap();
                prop_assert_eq!(chain_emd(&p, &q, &m, rho).unwrap(), chain_emd(&q, &p, &m, rho).unwrap());
            }

            #[test]
            fn gradient_sums_to_zero((p, q, c) in instance(), rho in 1.0f64..3.0) {
                let m = ChainMetric::new(c).unwrap();
                let g = chain_emd_grad(&p, &q, &m, rho).unwrap();
                prop_assert!(g.iter().sum::<f64>().abs() <= 1e-12);
            }

            #[test]
            fn additive_along_chain(c in proptest::collection::vec(0.1f64..5.0, 1..20)) {
                let m = ChainMetric::new(c).unwrap().to_cost_matrix();
                let n = m.n();
                for i in 0..n {
                    for j in i..n {
                        for k in j..n {
                            prop_assert!((m[(i, k)] - m[(i, j)] - m[(j, k)]).abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }
}
