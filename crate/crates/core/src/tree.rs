//! Closed-form EMD on tree-connected spaces.
//!
//! Mass lives on the leaves. Every unit moving between two leaves follows the
//! unique tree path, so the optimal cost is the sum over edges of the edge
//! cost times the net mass that must leave the subtree below it. For an edge
//! `(i, parent(i))` that net mass is the leaf sum `phi_i = sum_{j in leaves(i)} (p_j - q_j)`,
//! which one post-order pass computes for every node.
//!
//! Tree file format, one edge per line:
//!
//! ```text
//! # child  parent  cost
//! vehicle  -       0
//! animal   vehicle 1
//! giraffe  animal  1
//! ```
//!
//! The root is written with parent `-`. Leaves are ordered by first appearance,
//! and distribution files are matched to that order positionally.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::chain::{center_and_scale, check_rho, compensated_sum, flow_cost, flow_slope};
use crate::distributions::check_pair;
use crate::error::{Error, Result};
use crate::matrix::{CostMatrix, SquareMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreeOptions {
    /// Permit zero-cost edges, used to hang mass-carrying leaves off interior
    /// positions. Costs must still be non-negative.
    pub allow_zero_cost: bool,
}

/// One line of a tree file.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeEdge {
    pub child: String,
    /// `None` for the root.
    pub parent: Option<String>,
    /// Cost of the edge to the parent; ignored for the root.
    pub cost: f64,
}

impl TreeEdge {
    pub fn new(child: impl Into<String>, parent: Option<&str>, cost: f64) -> Self {
        Self {
            child: child.into(),
            parent: parent.map(str::to_string),
            cost,
        }
    }
}

/// Rooted tree with positive edge costs and an ordered set of leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTree {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    /// Cost of the edge to the parent; 0 for the root.
    cost: Vec<f64>,
    children: Vec<Vec<usize>>,
    root: usize,
    /// Children before parents.
    post_order: Vec<usize>,
    leaves: Vec<usize>,
    options: TreeOptions,
}

impl MetricTree {
    pub fn from_edges(edges: &[TreeEdge], options: TreeOptions) -> Result<Self> {
        let mut index = HashMap::with_capacity(edges.len());
        let mut ids = Vec::with_capacity(edges.len());
        for e in edges {
            if index.insert(e.child.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(e.child.clone()));
            }
            ids.push(e.child.clone());
        }
        let mut parent = Vec::with_capacity(edges.len());
        let mut cost = Vec::with_capacity(edges.len());
        for e in edges {
            match &e.parent {
                None => {
                    parent.push(None);
                    cost.push(0.0);
                }
                Some(pid) => {
                    let &pi = index
                        .get(pid)
                        .ok_or_else(|| Error::DisconnectedNode(pid.clone()))?;
                    check_cost(&e.child, e.cost, options)?;
                    parent.push(Some(pi));
                    cost.push(e.cost);
                }
            }
        }
        Self::assemble(ids, index, parent, cost, None, options)
    }

    /// Validates structure and derives children, traversal order and leaves.
    fn assemble(
        ids: Vec<String>,
        index: HashMap<String, usize>,
        parent: Vec<Option<usize>>,
        cost: Vec<f64>,
        leaf_order: Option<Vec<usize>>,
        options: TreeOptions,
    ) -> Result<Self> {
        let n = ids.len();
        // Walk parent pointers; a node that revisits its own walk is on a cycle.
        // 0 = unseen, 1 = on current walk, 2 = reaches a root
        let mut state = vec![0u8; n];
        for start in 0..n {
            let mut walk = Vec::new();
            let mut v = start;
            loop {
                match state[v] {
                    2 => break,
                    1 => return Err(Error::Cycle(ids[v].clone())),
                    _ => {}
                }
                state[v] = 1;
                walk.push(v);
                match parent[v] {
                    Some(p) => v = p,
                    None => break,
                }
            }
            for w in walk {
                state[w] = 2;
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::TooFewLeaves(0)),
            many => {
                return Err(Error::MultipleRoots(
                    many.iter().map(|&r| ids[r].clone()).collect(),
                ))
            }
        };
        let mut children = vec![Vec::new(); n];
        for (v, &pv) in parent.iter().enumerate() {
            if let Some(p) = pv {
                children[p].push(v);
            }
        }
        let post_order = post_order(root, &children);
        debug_assert_eq!(post_order.len(), n);

        let leaves = match leaf_order {
            Some(order) => order,
            None => (0..n).filter(|&v| children[v].is_empty()).collect(),
        };
        if leaves.len() < 2 {
            return Err(Error::TooFewLeaves(leaves.len()));
        }
        Ok(Self {
            ids,
            index,
            parent,
            cost,
            children,
            root,
            post_order,
            leaves,
            options,
        })
    }

    /// Parses the tree file format.
    pub fn parse(text: &str, options: TreeOptions) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = crate::distributions::strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [child, parent, cost] = fields.as_slice() else {
                return Err(Error::Parse {
                    line: lineno + 1,
                    msg: format!("expected 'child parent cost', got '{line}'"),
                });
            };
            let cost = cost.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: format!("cost '{cost}': {e}"),
            })?;
            let parent = (*parent != "-").then_some(*parent);
            edges.push(TreeEdge::new(*child, parent, cost));
        }
        Self::from_edges(&edges, options)
    }

    /// Serializes to the tree file format. Leaves are written last, in leaf
    /// order, so parsing the output reproduces the same leaf order.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} - 0\n", self.ids[self.root]);
        let mut preorder: Vec<usize> = self.post_order.iter().rev().copied().collect();
        preorder.retain(|&v| v != self.root && !self.children[v].is_empty());
        for v in preorder.into_iter().chain(self.leaves.iter().copied()) {
            let p = self.parent[v].expect("non-root has a parent");
            out.push_str(&format!(
                "{} {} {}\n",
                self.ids[v], self.ids[p], self.cost[v]
            ));
        }
        out
    }

    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    /// Number of leaves, the dimension of distributions on this tree.
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> &str {
        &self.ids[self.root]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent_of(&self, id: &str) -> Option<&str> {
        let v = self.node_index(id)?;
        self.parent[v].map(|p| self.ids[p].as_str())
    }

    pub fn edge_cost(&self, id: &str) -> Option<f64> {
        let v = self.node_index(id)?;
        self.parent[v].map(|_| self.cost[v])
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = &str> {
        self.leaves.iter().map(|&v| self.ids[v].as_str())
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        self.node_index(id)
            .is_some_and(|v| self.children[v].is_empty())
    }

    /// Nodes that can become the root without changing the leaf set.
    pub fn valid_roots(&self) -> Vec<&str> {
        if self.children[self.root].len() < 2 {
            // The old root would turn into a leaf under any other root.
            return vec![self.root()];
        }
        (0..self.n_nodes())
            .filter(|&v| !self.children[v].is_empty())
            .map(|v| self.ids[v].as_str())
            .collect()
    }

    /// Same undirected tree with parent pointers oriented towards `new_root`.
    pub fn reroot(&self, new_root: &str) -> Result<Self> {
        let target = self
            .node_index(new_root)
            .ok_or_else(|| Error::UnknownNode(new_root.to_string()))?;
        if target == self.root {
            return Ok(self.clone());
        }
        let n = self.n_nodes();
        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for v in 0..n {
            if let Some(p) = self.parent[v] {
                adjacency[v].push((p, self.cost[v]));
                adjacency[p].push((v, self.cost[v]));
            }
        }
        let mut parent = vec![None; n];
        let mut cost = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut stack = vec![target];
        seen[target] = true;
        while let Some(v) = stack.pop() {
            for &(w, c) in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    cost[w] = c;
                    stack.push(w);
                }
            }
        }
        let mut has_child = vec![false; n];
        for p in parent.iter().flatten() {
            has_child[*p] = true;
        }
        let same_leaves = (0..n).all(|v| has_child[v] != self.children[v].is_empty());
        if !same_leaves {
            return Err(Error::LeafRootChange(new_root.to_string()));
        }
        Self::assemble(
            self.ids.clone(),
            self.index.clone(),
            parent,
            cost,
            Some(self.leaves.clone()),
            self.options,
        )
    }

    /// Leaf-to-leaf path costs in leaf order.
    pub fn to_cost_matrix(&self) -> CostMatrix {
        tree_to_cost_matrix(self)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_leaves() {
            return Err(Error::LengthMismatch {
                left: self.n_leaves(),
                right: len,
            });
        }
        Ok(())
    }
}

fn check_cost(child: &str, cost: f64, options: TreeOptions) -> Result<()> {
    let ok = cost.is_finite() && (cost > 0.0 || (options.allow_zero_cost && cost == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::NonPositiveCost {
            what: format!("edge above '{child}'"),
            value: cost,
        })
    }
}

/// Iterative post-order; deep path-like trees must not overflow the call stack.
fn post_order(root: usize, children: &[Vec<usize>]) -> Vec<usize> {
    let mut order = Vec::with_capacity(children.len());
    let mut stack = vec![(root, 0usize)];
    while let Some((v, next)) = stack.pop() {
        if let Some(&c) = children[v].get(next) {
            stack.push((v, next + 1));
            stack.push((c, 0));
        } else {
            order.push(v);
        }
    }
    order
}

/// Parses a tree file with default options (strictly positive costs).
pub fn load_tree(text: &str) -> Result<MetricTree> {
    MetricTree::parse(text, TreeOptions::default())
}

/// Net mass leaving the subtree below each node, indexed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtreeFlow {
    phi: Vec<f64>,
}

impl SubtreeFlow {
    /// Values indexed like `MetricTree::node_ids`.
    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    pub fn get(&self, tree: &MetricTree, id: &str) -> Option<f64> {
        tree.node_index(id).map(|v| self.phi[v])
    }
}

pub fn subtree_flow(tree: &MetricTree, p: &[f64], q: &[f64]) -> Result<SubtreeFlow> {
    check_pair(p, q)?;
    tree.check_len(p.len())?;
    Ok(SubtreeFlow {
        phi: subtree_flow_unchecked(tree, p, q),
    })
}

fn subtree_flow_unchecked(tree: &MetricTree, p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut phi = vec![0.0; tree.n_nodes()];
    for (slot, &leaf) in tree.leaves.iter().enumerate() {
        phi[leaf] = p[slot] - q[slot];
    }
    for &v in &tree.post_order {
        if let Some(parent) = tree.parent[v] {
            phi[parent] += phi[v];
        }
    }
    phi
}

/// Relaxed tree EMD: `sum_{i != root} cost_i |phi_i|^rho`.
pub fn tree_emd(tree: &MetricTree, p: &[f64], q: &[f64], rho: f64) -> Result<f64> {
    check_pair(p, q)?;
    tree.check_len(p.len())?;
    check_rho(rho)?;
    Ok(tree_emd_unchecked(tree, p, q, rho))
}

pub(crate) fn tree_emd_unchecked(tree: &MetricTree, p: &[f64], q: &[f64], rho: f64) -> f64 {
    let phi = subtree_flow_unchecked(tree, p, q);
    compensated_sum(
        tree.post_order
            .iter()
            .filter(|&&v| v != tree.root)
            .map(|&v| tree.cost[v] * flow_cost(phi[v], rho)),
    )
}

/// l1-preserving gradient of the relaxed tree EMD with respect to the leaf masses.
///
/// Component `k` is `rho * sum_i cost_i sgn(phi_i)|phi_i|^(rho-1) * sum_{j in leaves(i)} (delta_jk - 1/N)`.
/// The first part of the inner sum is the weight accumulated on the path from
/// leaf `k` up to the root; the `-|leaves(i)|/N` part is its mean over leaves.
pub fn tree_emd_grad(tree: &MetricTree, p: &[f64], q: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    tree.check_len(p.len())?;
    check_rho(rho)?;
    Ok(tree_emd_grad_unchecked(tree, p, q, rho))
}

pub(crate) fn tree_emd_grad_unchecked(
    tree: &MetricTree,
    p: &[f64],
    q: &[f64],
    rho: f64,
) -> Vec<f64> {
    let phi = subtree_flow_unchecked(tree, p, q);
    let mut path_weight = vec![0.0; tree.n_nodes()];
    for &v in tree.post_order.iter().rev() {
        if let Some(parent) = tree.parent[v] {
            path_weight[v] = path_weight[parent] + tree.cost[v] * flow_slope(phi[v], rho);
        }
    }
    let mut grad: Vec<f64> = tree.leaves.iter().map(|&leaf| path_weight[leaf]).collect();
    center_and_scale(&mut grad, rho);
    grad
}

/// `M[a][b]` = sum of edge costs on the path between leaves `a` and `b`.
pub fn tree_to_cost_matrix(tree: &MetricTree) -> CostMatrix {
    let n = tree.n_nodes();
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for v in 0..n {
        if let Some(p) = tree.parent[v] {
            adjacency[v].push((p, tree.cost[v]));
            adjacency[p].push((v, tree.cost[v]));
        }
    }
    let n_leaves = tree.n_leaves();
    let mut m = SquareMatrix::zeros(n_leaves);
    let mut dist = vec![f64::NAN; n];
    let mut stack = Vec::new();
    for a in 0..n_leaves {
        dist.iter_mut().for_each(|d| *d = f64::NAN);
        let src = tree.leaves[a];
        dist[src] = 0.0;
        stack.push(src);
        while let Some(v) = stack.pop() {
            for &(w, c) in &adjacency[v] {
                if dist[w].is_nan() {
                    dist[w] = dist[v] + c;
                    stack.push(w);
                }
            }
        }
        for b in a + 1..n_leaves {
            let d = dist[tree.leaves[b]];
            m[(a, b)] = d;
            m[(b, a)] = d;
        }
    }
    CostMatrix::new(m).expect("tree path costs induce a valid cost matrix")
}

/// Parameters for a synthetic random hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeGenParams {
    pub n_leaves: usize,
    /// Interior nodes including the root; defaults to about 0.374 per leaf,
    /// the interior-to-leaf ratio of a 1374-node, 1000-leaf class hierarchy.
    pub n_internal: Option<usize>,
    /// Maximum leaf depth (root has depth 0).
    pub max_depth: usize,
    /// Edge costs are drawn uniformly from this closed range.
    pub cost_range: (f64, f64),
    pub seed: u64,
}

impl TreeGenParams {
    pub fn new(n_leaves: usize, seed: u64) -> Self {
        Self {
            n_leaves,
            n_internal: None,
            max_depth: 8,
            cost_range: (1.0, 1.0),
            seed,
        }
    }

    fn internal_count(&self) -> usize {
        self.n_internal
            .unwrap_or_else(|| ((self.n_leaves as f64 * 0.374).round() as usize).max(1))
    }
}

/// Random rooted tree: interior nodes attach to uniformly chosen earlier
/// interior nodes (respecting the depth limit), then leaves fill every
/// childless interior node and the rest attach uniformly. The root always has
/// at least two children, so every interior node is a valid re-rooting target.
pub fn generate_random_tree(params: &TreeGenParams) -> Result<MetricTree> {
    let n_leaves = params.n_leaves;
    let n_internal = params.internal_count();
    let (lo, hi) = params.cost_range;
    if n_leaves < 2 {
        return Err(Error::BadParams(format!(
            "need at least 2 leaves, got {n_leaves}"
        )));
    }
    if n_internal == 0 {
        return Err(Error::BadParams("need at least one interior node".into()));
    }
    if params.max_depth == 0 || (n_internal > 1 && params.max_depth < 2) {
        return Err(Error::BadParams(format!(
            "max_depth {} too small for {n_internal} interior nodes",
            params.max_depth
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi >= lo) {
        return Err(Error::BadParams(format!("bad cost range ({lo}, {hi})")));
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(params.seed);
    let mut depth = vec![0usize];
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut interior_children = vec![0usize];
    let mut eligible = vec![0usize];
    for v in 1..n_internal {
        let p = eligible[rng.random_range(0..eligible.len())];
        parent.push(Some(p));
        depth.push(depth[p] + 1);
        interior_children.push(0);
        interior_children[p] += 1;
        if depth[v] + 1 < params.max_depth {
            eligible.push(v);
        }
    }

    let mut slots = Vec::with_capacity(n_leaves);
    for v in 0..n_internal {
        let need = if v == 0 {
            2usize.saturating_sub(interior_children[0])
        } else {
            usize::from(interior_children[v] == 0)
        };
        slots.extend(std::iter::repeat_n(v, need));
    }
    if slots.len() > n_leaves {
        return Err(Error::BadParams(format!(
            "{n_leaves} leaves cannot cover {} childless interior nodes",
            slots.len()
        )));
    }
    while slots.len() < n_leaves {
        slots.push(rng.random_range(0..n_internal));
    }
    slots.shuffle(&mut rng);

    let mut edges = Vec::with_capacity(n_internal + n_leaves);
    edges.push(TreeEdge::new("n0", None, 0.0));
    let draw_cost = |rng: &mut Xoshiro256PlusPlus| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    for (v, pv) in parent.iter().enumerate().take(n_internal).skip(1) {
        let p = pv.expect("non-root");
        let c = draw_cost(&mut rng);
        edges.push(TreeEdge::new(format!("n{v}"), Some(&format!("n{p}")), c));
    }
    for (j, &p) in slots.iter().enumerate() {
        let c = draw_cost(&mut rng);
        edges.push(TreeEdge::new(format!("leaf{j}"), Some(&format!("n{p}")), c));
    }
    MetricTree::from_edges(&edges, TreeOptions::default())
}
