//! Earth Mover's Distance toolkit for chain- and tree-structured output spaces.
//!
//! * [`chain`] and [`tree`]: closed-form EMD^rho, l1-preserving gradients,
//!   and the constant `rho = 2` Hessian on chains.
//! * [`oracle`]: exact EMD by min-cost flow, used as ground truth.
//! * [`sinkhorn`]: entropically regularized EMD in `f32` or `f64`.
//! * [`descent`] and [`analysis`]: the convergence and stability experiments.

pub mod analysis;
pub mod chain;
pub mod descent;
pub mod distributions;
pub mod error;
pub mod fmt;
pub mod matrix;
pub mod oracle;
pub mod selfcheck;
pub mod sinkhorn;
pub mod tree;

pub use chain::{
    chain_emd, chain_emd2_hessian, chain_emd_grad, cumulative_flow, ChainMetric, CumulativeFlow,
};
pub use distributions::{generate_pair, normalize_l1, Distribution, RandomInstanceSpec, Setting};
pub use error::{Error, Result};
pub use matrix::{plan_cost, CostMatrix, SquareMatrix, TransportPlan};
pub use oracle::{exact_emd, exact_emd_capped};
pub use sinkhorn::{epsilon_smooth, sinkhorn, Precision, SinkhornConfig, SinkhornResult};
pub use tree::{
    generate_random_tree, load_tree, subtree_flow, tree_emd, tree_emd_grad, tree_to_cost_matrix,
    MetricTree, SubtreeFlow, TreeEdge, TreeGenParams, TreeOptions,
};
