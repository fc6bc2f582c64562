//! Soft decision trees.
//!
//! A branch routes an input to its right child with the logistic probability
//! `ψ((x_j - c) / τ)`, so smaller feature values lean left. The probability of
//! reaching a leaf is the product of the routing factors along its path, and
//! the tree's output is the leaf values averaged under those probabilities.
//! As `τ → 0` the tree collapses onto an ordinary step-function tree.

mod likelihood;

pub use likelihood::{
    leaf_probability_matrix, sample_leaf_values, weighted_marginal_loglik, LeafPosterior, LeafPrior, LeafStats,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Softness that makes routing numerically indistinguishable from a hard split.
pub const HARD_SOFTNESS: f64 = 1e-8;

/// Logistic probability of routing `x` to the right of cut `c`.
pub fn gate_prob(x: f64, cut: f64, softness: f64) -> Result<f64> {
    if !(softness > 0.0) {
        return Err(Error::invalid(format!("softness must be positive, got {softness}")));
    }
    Ok(route(x, cut, softness).1)
}

/// `(P(left), P(right))` computed with a single exponential.
#[inline(always)]
fn route(x: f64, cut: f64, softness: f64) -> (f64, f64) {
    let z = (x - cut) / softness;
    let e = (-z.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    if z >= 0.0 {
        (e * inv, inv)
    } else {
        (inv, e * inv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Branch { rule: SplitRule, left: usize, right: usize },
}

/// Binary soft tree stored as a preorder arena: the root is node 0, every
/// child index exceeds its parent's, and leaves appear left to right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftTree {
    nodes: Vec<Node>,
    softness: f64,
}

impl SoftTree {
    pub fn leaf(value: f64, softness: f64) -> Self {
        SoftTree {
            nodes: vec![Node::Leaf { value }],
            softness,
        }
    }

    /// Builds a tree from an arbitrary arena rooted at node 0, checking that
    /// it forms a proper binary tree over `feature_dim` features.
    pub fn from_nodes(nodes: Vec<Node>, softness: f64, feature_dim: usize) -> Result<Self> {
        if !(softness > 0.0) {
            return Err(Error::invalid(format!("softness must be positive, got {softness}")));
        }
        if nodes.is_empty() {
            return Err(Error::invalid("tree has no nodes"));
        }
        let mut parents = vec![0usize; nodes.len()];
        for node in &nodes {
            if let Node::Branch { rule, left, right } = node {
                if rule.feature >= feature_dim {
                    return Err(Error::invalid(format!(
                        "split feature {} outside dimension {feature_dim}",
                        rule.feature
                    )));
                }
                if !rule.cut.is_finite() {
                    return Err(Error::invalid("non-finite cut"));
                }
                for &c in [left, right] {
                    if c == 0 || c >= nodes.len() {
                        return Err(Error::invalid(format!("invalid child index {c}")));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents.iter().skip(1).any(|&p| p != 1) {
            return Err(Error::invalid("every non-root node needs exactly one parent"));
        }
        let count = nodes.len();
        let tree = SoftTree { nodes, softness }.canonical();
        if tree.nodes.len() != count {
            return Err(Error::invalid("tree contains nodes unreachable from the root"));
        }
        Ok(tree)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn softness(&self) -> f64 {
        self.softness
    }

    pub fn set_softness(&mut self, softness: f64) {
        debug_assert!(softness > 0.0);
        self.softness = softness;
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.len().div_ceil(2)
    }

    pub fn num_branches(&self) -> usize {
        self.nodes.len() / 2
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { value } => Some(*value),
                Node::Branch { .. } => None,
            })
            .collect()
    }

    pub fn set_leaf_values(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.num_leaves());
        let mut it = values.iter();
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value = *it.next().expect("one value per leaf");
            }
        }
    }

    /// Depth of every node (root at 0).
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0usize; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if let Node::Branch { left, right, .. } = self.nodes[i] {
                depth[left] = depth[i] + 1;
                depth[right] = depth[i] + 1;
            }
        }
        depth
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Branch { left, right, .. } = *node {
                parent[left] = Some(i);
                parent[right] = Some(i);
            }
        }
        parent
    }

    /// Leaf-membership probabilities of `x`, in left-to-right leaf order.
    pub fn leaf_probs(&self, x: &[f64]) -> Vec<f64> {
        let mut mass = vec![0.0; self.nodes.len()];
        let mut out = vec![0.0; self.num_leaves()];
        self.leaf_probs_into(x, &mut mass, &mut out);
        out
    }

    /// Allocation-free variant of [`SoftTree::leaf_probs`]; `mass` needs one
    /// slot per node and `out` one per leaf.
    #[inline]
    pub fn leaf_probs_into(&self, x: &[f64], mass: &mut [f64], out: &mut [f64]) {
        mass[0] = 1.0;
        let mut leaf = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Branch { rule, left, right } => {
                    let m = mass[i];
                    if m == 0.0 {
                        mass[left] = 0.0;
                        mass[right] = 0.0;
                    } else {
                        let (pl, pr) = route(x[rule.feature], rule.cut, self.softness);
                        mass[left] = m * pl;
                        mass[right] = m * pr;
                    }
                }
                Node::Leaf { .. } => {
                    out[leaf] = mass[i];
                    leaf += 1;
                }
            }
        }
    }

    /// Expected leaf value under the routing probabilities.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let probs = self.leaf_probs(x);
        probs.iter().zip(self.leaf_values()).map(|(p, v)| p * v).sum()
    }

    /// Index of the leaf reached by deterministic routing (`x >= c` goes right).
    pub fn hard_leaf(&self, x: &[f64]) -> usize {
        let mut node = 0;
        while let Node::Branch { rule, left, right } = self.nodes[node] {
            node = if x[rule.feature] >= rule.cut { right } else { left };
        }
        self.nodes[..node]
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Number of branches splitting on each feature.
    pub fn split_counts(&self, counts: &mut [usize]) {
        for node in &self.nodes {
            if let Node::Branch { rule, .. } = node {
                counts[rule.feature] += 1;
            }
        }
    }

    pub(crate) fn leaf_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Leaf { .. }))
            .collect()
    }

    pub(crate) fn branch_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i], Node::Branch { .. }))
            .collect()
    }

    /// Branches whose two children are both leaves.
    pub(crate) fn prunable_indices(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| match self.nodes[i] {
                Node::Branch { left, right, .. } => self.is_leaf(left) && self.is_leaf(right),
                Node::Leaf { .. } => false,
            })
            .collect()
    }

    /// `(parent, child)` pairs of adjacent branches.
    pub(crate) fn swappable_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Branch { left, right, .. } = *node {
                for child in [left, right] {
                    if !self.is_leaf(child) {
                        pairs.push((i, child));
                    }
                }
            }
        }
        pairs
    }

    pub(crate) fn is_leaf(&self, i: usize) -> bool {
        matches!(self.nodes[i], Node::Leaf { .. })
    }

    pub(crate) fn rule(&self, i: usize) -> Option<SplitRule> {
        match self.nodes[i] {
            Node::Branch { rule, .. } => Some(rule),
            Node::Leaf { .. } => None,
        }
    }

    /// Splits leaf `i` with `rule`; both children start at value 0.
    pub(crate) fn grown(&self, i: usize, rule: SplitRule) -> SoftTree {
        debug_assert!(self.is_leaf(i));
        let mut nodes = self.nodes.clone();
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[i] = Node::Branch {
            rule,
            left,
            right: left + 1,
        };
        SoftTree {
            nodes,
            softness: self.softness,
        }
        .canonical()
    }

    /// Collapses branch `i` (whose children are leaves) into a leaf.
    pub(crate) fn pruned(&self, i: usize) -> SoftTree {
        let mut nodes = self.nodes.clone();
        nodes[i] = Node::Leaf { value: 0.0 };
        SoftTree {
            nodes,
            softness: self.softness,
        }
        .canonical()
    }

    pub(crate) fn with_rule(&self, i: usize, new_rule: SplitRule) -> SoftTree {
        let mut tree = self.clone();
        if let Node::Branch { rule, .. } = &mut tree.nodes[i] {
            *rule = new_rule;
        }
        tree
    }

    pub(crate) fn with_swapped_rules(&self, a: usize, b: usize) -> SoftTree {
        let (ra, rb) = (self.rule(a), self.rule(b));
        let mut tree = self.clone();
        if let (Some(ra), Some(rb)) = (ra, rb) {
            if let Node::Branch { rule, .. } = &mut tree.nodes[a] {
                *rule = rb;
            }
            if let Node::Branch { rule, .. } = &mut tree.nodes[b] {
                *rule = ra;
            }
        }
        tree
    }

    /// Re-lays the reachable nodes out in preorder.
    fn canonical(self) -> SoftTree {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, None::<(usize, bool)>)];
        while let Some((old, slot)) = stack.pop() {
            let new = nodes.len();
            if let Some((parent, is_right)) = slot {
                if let Node::Branch { left, right, .. } = &mut nodes[parent] {
                    if is_right {
                        *right = new;
                    } else {
                        *left = new;
                    }
                }
            }
            match self.nodes[old] {
                Node::Leaf { value } => nodes.push(Node::Leaf { value }),
                Node::Branch { rule, left, right } => {
                    nodes.push(Node::Branch {
                        rule,
                        left: 0,
                        right: 0,
                    });
                    stack.push((right, Some((new, true))));
                    stack.push((left, Some((new, false))));
                }
            }
        }
        SoftTree {
            nodes,
            softness: self.softness,
        }
    }
}

/// Sum of soft trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<SoftTree>,
    feature_dim: usize,
}

impl Forest {
    pub fn new(trees: Vec<SoftTree>, feature_dim: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        for tree in &trees {
            for node in tree.nodes() {
                if let Node::Branch { rule, .. } = node {
                    if rule.feature >= feature_dim {
                        return Err(Error::DimensionMismatch {
                            expected: feature_dim,
                            found: rule.feature + 1,
                        });
                    }
                }
            }
        }
        Ok(Forest { trees, feature_dim })
    }

    pub fn trees(&self) -> &[SoftTree] {
        &self.trees
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum())
    }
}
