//! Deterministic inputs shared by the benchmarks.

use emd_core::{generate_random_tree, MetricTree, TreeGenParams};

/// Random hierarchy with 1000 leaves and 374 interior nodes (1374 in total).
pub fn hierarchy_1374(seed: u64) -> MetricTree {
    let params = TreeGenParams {
        n_internal: Some(374),
        ..TreeGenParams::new(1000, seed)
    };
    generate_random_tree(&params).expect("valid generator parameters")
}

/// Smooth strictly positive unit-mass vector; `phase` shifts its shape.
pub fn smooth_unit(n: usize, phase: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..n)
        .map(|i| 1.5 + (i as f64 * 0.37 + phase).sin())
        .collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        let tree = hierarchy_1374(1);
        assert_eq!(tree.n_nodes(), 1374);
        assert_eq!(tree.n_leaves(), 1000);
        let p = smooth_unit(1000, 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
    }
}
