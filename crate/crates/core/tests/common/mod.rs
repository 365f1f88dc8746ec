#![allow(dead_code)]

use emd_core::{generate_random_tree, ChainMetric, MetricTree, TreeGenParams};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Unit-mass vector with every entry strictly positive.
pub fn positive_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_chain(rng: &mut impl Rng, n: usize) -> ChainMetric {
    ChainMetric::new((0..n - 1).map(|_| rng.random_range(0.1..5.0)).collect()).unwrap()
}

pub fn random_tree(rng: &mut impl Rng, max_leaves: usize) -> MetricTree {
    let n_leaves = rng.random_range(2..=max_leaves);
    let mut params = TreeGenParams::new(n_leaves, rng.random());
    params.max_depth = rng.random_range(2..=7);
    params.cost_range = (0.1, 5.0);
    generate_random_tree(&params).unwrap()
}

/// `p + t (e_k - 1/N)`: a step along the simplex tangent towards bin `k`.
pub fn shifted(p: &[f64], k: usize, t: f64) -> Vec<f64> {
    let nf = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(j, &x)| x + t * (if j == k { 1.0 } else { 0.0 } - 1.0 / nf))
        .collect()
}

/// Central difference of `f` along `e_k - 1/N`.
pub fn tangent_fd(f: impl Fn(&[f64]) -> f64, p: &[f64], k: usize, h: f64) -> f64 {
    (f(&shifted(p, k, h)) - f(&shifted(p, k, -h))) / (2.0 * h)
}

/// Chain of `costs.len() + 1` bins rebuilt as a caterpillar tree: a spine of
/// interior nodes joined by the chain costs, each bin a leaf hanging off its
/// spine node by a zero-cost link.
pub fn caterpillar(costs: &[f64]) -> MetricTree {
    use emd_core::{TreeEdge, TreeOptions};
    let n = costs.len() + 1;
    let mut edges = vec![TreeEdge::new("s0", None, 0.0)];
    for (i, &c) in costs.iter().enumerate() {
        edges.push(TreeEdge::new(
            format!("s{}", i + 1),
            Some(&format!("s{i}")),
            c,
        ));
    }
    for i in 0..n {
        edges.push(TreeEdge::new(
            format!("bin{i}"),
            Some(&format!("s{i}")),
            0.0,
        ));
    }
    MetricTree::from_edges(
        &edges,
        TreeOptions {
            allow_zero_cost: true,
        },
    )
    .unwrap()
}
