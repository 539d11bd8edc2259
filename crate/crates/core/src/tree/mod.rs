//! Scenario trees approximating the conditional distribution of future
//! netload, and the constructions that turn a batch of sampled scenarios
//! into a tree.
//!
//! | construction        | controller | shape                                  |
//! |---------------------|------------|----------------------------------------|
//! | [`average_branch`]  | MPC        | one branch, the probability-weighted mean |
//! | [`build_fan`]       | 2S-SP      | one branch per sample                  |
//! | [`cluster_fan`]     | 2S-SP-C    | one branch per non-empty k-means cluster |
//! | [`reduce_to_tree`]  | SP         | stagewise-reduced multistage tree      |

mod construct;
mod kmeans;
mod reduction;

pub use construct::{average_branch, build_fan, cluster_fan};
pub use kmeans::{kmeans, KMeansResult, MAX_LLOYD_ITERATIONS};
pub use reduction::{backward_reduction, reduce_to_tree};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on probability conservation.
pub const PROBABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid scenario matrix: {0}")]
    InvalidSamples(String),
    #[error("cluster count {requested} must lie in 1..={available}")]
    ClusterCount { requested: usize, available: usize },
    #[error("tolerance {0} must lie in [0, 1]")]
    InvalidTolerance(f64),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("tree JSON: {0}")]
    Json(String),
}

/// K sampled scenarios of R future netload values with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    rows: Vec<Vec<f64>>,
    probabilities: Vec<f64>,
}

impl ScenarioMatrix {
    /// Equiprobable scenarios.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, TreeError> {
        let k = rows.len();
        let p = if k == 0 { 0.0 } else { 1.0 / k as f64 };
        Self::with_probabilities(rows, vec![p; k])
    }

    pub fn with_probabilities(
        rows: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    ) -> Result<Self, TreeError> {
        if rows.is_empty() {
            return Err(TreeError::InvalidSamples("no scenarios".into()));
        }
        if rows.len() != probabilities.len() {
            return Err(TreeError::InvalidSamples(format!(
                "{} rows but {} probabilities",
                rows.len(),
                probabilities.len()
            )));
        }
        let horizon = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != horizon) {
            return Err(TreeError::InvalidSamples(format!(
                "row {i} has length {} instead of {horizon}",
                rows[i].len()
            )));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TreeError::InvalidSamples("non-finite value".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(TreeError::InvalidSamples("negative or non-finite probability".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(TreeError::InvalidSamples(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(ScenarioMatrix {
            rows,
            probabilities,
        })
    }

    /// Number of scenarios.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of future steps per scenario.
    pub fn horizon(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Probability-weighted mean of `points` (all the same length).
///
/// Computed as an offset from the first point so that identical points
/// average to themselves exactly.
pub(crate) fn weighted_mean<'a>(
    points: impl IntoIterator<Item = (&'a [f64], f64)>,
) -> Vec<f64> {
    let mut iter = points.into_iter().peekable();
    let Some(&(first, _)) = iter.peek() else {
        return Vec::new();
    };
    let base = first.to_vec();
    let mut acc = vec![0.0; base.len()];
    let mut total = 0.0;
    for (p, w) in iter {
        total += w;
        for ((a, &x), &b) in acc.iter_mut().zip(p).zip(&base) {
            *a += w * (x - b);
        }
    }
    if total <= 0.0 {
        return base;
    }
    base.iter().zip(acc).map(|(b, a)| b + a / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Netload realized at this node (kWh).
    pub value: f64,
    /// Unconditional probability of reaching this node.
    pub probability: f64,
}

/// Rooted tree of netload realizations. Node ids equal their index and
/// every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    nodes: Vec<TreeNode>,
}

impl ScenarioTree {
    /// A tree made of the root alone.
    pub fn root_only(value: f64) -> Self {
        ScenarioTree {
            nodes: vec![TreeNode {
                id: 0,
                parent: None,
                depth: 0,
                value,
                probability: 1.0,
            }],
            children: vec![Vec::new()],
        }
    }

    /// Appends a child of `parent` and returns its id.
    pub fn push_child(&mut self, parent: usize, value: f64, probability: f64) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode {
            id,
            parent: Some(parent),
            depth,
            value,
            probability,
        });
        self.children.push(Vec::new());
        self.children[parent].push(id);
        id
    }

    /// Builds and validates a tree from its node list.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self, TreeError> {
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(TreeError::InvalidTree(format!("node at index {i} has id {}", n.id)));
            }
            if let Some(p) = n.parent {
                if p >= i {
                    return Err(TreeError::InvalidTree(format!(
                        "node {i} has parent {p} that does not precede it"
                    )));
                }
                children[p].push(i);
            }
        }
        let tree = ScenarioTree { nodes, children };
        tree.validate()?;
        Ok(tree)
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let doc: TreeDocument =
            serde_json::from_str(text).map_err(|e| TreeError::Json(e.to_string()))?;
        Self::from_nodes(doc.nodes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TreeDocument {
            nodes: self.nodes.clone(),
        })
        .expect("tree nodes are always serializable")
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.children[id].is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> + '_ {
        self.nodes.iter().filter(|n| self.children[n.id].is_empty())
    }

    /// Depth of the deepest node.
    pub fn horizon(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaf_probability_sum(&self) -> f64 {
        self.leaves().map(|n| n.probability).sum()
    }

    /// Checks the structural and probabilistic invariants of the tree.
    pub fn validate(&self) -> Result<(), TreeError> {
        let Some(root) = self.nodes.first() else {
            return Err(TreeError::InvalidTree("empty tree".into()));
        };
        if root.parent.is_some() || root.depth != 0 {
            return Err(TreeError::InvalidTree("node 0 must be a root at depth 0".into()));
        }
        if (root.probability - 1.0).abs() > PROBABILITY_TOL {
            return Err(TreeError::InvalidTree(format!(
                "root probability is {}",
                root.probability
            )));
        }
        for n in &self.nodes[1..] {
            let Some(p) = n.parent else {
                return Err(TreeError::InvalidTree(format!("node {} has no parent", n.id)));
            };
            if n.depth != self.nodes[p].depth + 1 {
                return Err(TreeError::InvalidTree(format!("node {} has wrong depth", n.id)));
            }
            if !(n.value.is_finite() && n.probability.is_finite() && n.probability >= 0.0) {
                return Err(TreeError::InvalidTree(format!("node {} has invalid data", n.id)));
            }
        }
        for (id, kids) in self.children.iter().enumerate() {
            if kids.is_empty() {
                continue;
            }
            let sum: f64 = kids.iter().map(|&c| self.nodes[c].probability).sum();
            if (sum - self.nodes[id].probability).abs() > PROBABILITY_TOL {
                return Err(TreeError::InvalidTree(format!(
                    "children of node {id} carry probability {sum}, expected {}",
                    self.nodes[id].probability
                )));
            }
        }
        let horizon = self.horizon();
        if let Some(leaf) = self.leaves().find(|n| n.depth != horizon) {
            return Err(TreeError::InvalidTree(format!(
                "leaf {} at depth {} but horizon is {horizon}",
                leaf.id, leaf.depth
            )));
        }
        Ok(())
    }

    /// Root-to-leaf value paths (root excluded) with leaf probabilities,
    /// sorted so that trees differing only in branch order compare equal.
    pub fn scenarios(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = self
            .leaves()
            .map(|leaf| {
                let mut path = Vec::with_capacity(leaf.depth);
                let mut cur = leaf;
                while let Some(p) = cur.parent {
                    path.push(cur.value);
                    cur = &self.nodes[p];
                }
                path.reverse();
                (path, leaf.probability)
            })
            .collect();
        out.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.total_cmp(&b.1))
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let samples = ScenarioMatrix::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let tree = build_fan(&samples, 0.5);
        let back = ScenarioTree::from_json(&tree.to_json()).unwrap();
        assert_eq!(back, tree);
    }

    #[test]
    fn invalid_trees_are_rejected() {
        let bad_prob = r#"{"nodes":[
            {"id":0,"parent":null,"depth":0,"value":0.0,"probability":1.0},
            {"id":1,"parent":0,"depth":1,"value":1.0,"probability":0.4}]}"#;
        assert!(ScenarioTree::from_json(bad_prob).is_err());
        let bad_depth = r#"{"nodes":[
            {"id":0,"parent":null,"depth":0,"value":0.0,"probability":1.0},
            {"id":1,"parent":0,"depth":2,"value":1.0,"probability":1.0}]}"#;
        assert!(ScenarioTree::from_json(bad_depth).is_err());
        let uneven = r#"{"nodes":[
            {"id":0,"parent":null,"depth":0,"value":0.0,"probability":1.0},
            {"id":1,"parent":0,"depth":1,"value":1.0,"probability":0.5},
            {"id":2,"parent":0,"depth":1,"value":1.0,"probability":0.5},
            {"id":3,"parent":1,"depth":2,"value":1.0,"probability":0.5}]}"#;
        assert!(ScenarioTree::from_json(uneven).is_err());
    }

    #[test]
    fn matrix_validation() {
        assert!(ScenarioMatrix::new(vec![]).is_err());
        assert!(ScenarioMatrix::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(ScenarioMatrix::with_probabilities(vec![vec![1.0], vec![2.0]], vec![0.5, 0.6]).is_err());
        assert!(ScenarioMatrix::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn weighted_mean_of_identical_points_is_exact() {
        let p = [0.1, 0.7, 1.3];
        let m = weighted_mean((0..7).map(|_| (&p[..], 1.0 / 7.0)));
        assert_eq!(m, p.to_vec());
    }
}
