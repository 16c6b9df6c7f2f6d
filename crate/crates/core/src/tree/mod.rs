//! Decision trees that unfold a compiled network.
//!
//! Each internal node tests one row of the current effective map against
//! the breakpoints of its activation and has one child slot per region.
//! Leaves hold the final effective map for their categorization vector.

mod dot;
mod json;

pub use dot::{explain, export_dot, DotOptions};
pub use json::{export_json, import_json, read_tree, write_tree, TREE_FORMAT_VERSION};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::activation::locate;
use crate::effective::{PathCost, Program};
use crate::error::{Error, Result};
use crate::linalg::{self, homogeneous};
use crate::network::{CategorizationVector, NetworkSpec, OutputActivation};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    #[default]
    Unknown,
    Feasible,
    Infeasible,
    /// Kept, but the feasibility check was numerically borderline.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionNode {
    /// One row of the effective map; length `d_0 + 1`.
    pub filter_row: Vec<f64>,
    pub breakpoints: Vec<f64>,
    /// Indexed by region; `None` once a branch has been pruned.
    pub children: Vec<Option<NodeId>>,
    /// Decision stage (activated layer) the filter comes from.
    pub layer_index: usize,
    pub unit_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafNode {
    /// `(d_out + 1) × (d_0 + 1)` with homogeneous last row.
    pub final_map: Array2<f64>,
    pub category: CategorizationVector,
    pub feasible: Feasibility,
    pub realized_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Decision(DecisionNode),
    Leaf(LeafNode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildStats {
    pub node_count: usize,
    pub leaf_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub root: NodeId,
    /// Largest region count of any decision.
    pub k: usize,
    /// `Σ m_i` over stages with more than one region.
    pub depth: usize,
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub output_activation: Option<OutputActivation>,
    /// Per-coordinate bounds the tree was pruned against, if any.
    pub domain: Option<Vec<(f64, f64)>>,
    /// Set when leaves were dropped for reasons other than infeasibility.
    pub lossy: bool,
    pub stats: BuildStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeLimits {
    pub max_leaves: usize,
    pub max_depth: Option<usize>,
}

pub const DEFAULT_MAX_LEAVES: usize = 1 << 20;

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { max_leaves: DEFAULT_MAX_LEAVES, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeEvaluation {
    pub output: Vec<f64>,
    pub leaf: NodeId,
    pub cost: PathCost,
}

impl DecisionTree {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn leaf(&self, id: NodeId) -> Option<&LeafNode> {
        match self.nodes.get(id) {
            Some(Node::Leaf(l)) => Some(l),
            _ => None,
        }
    }

    /// Leaf ids in depth-first order, lowest region first.
    pub fn leaf_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.walk(|id, _| {
            if matches!(self.nodes[id], Node::Leaf(_)) {
                out.push(id);
            }
        });
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_ids().len()
    }

    pub fn decision_count(&self) -> usize {
        let mut n = 0;
        self.walk(|id, _| {
            if matches!(self.nodes[id], Node::Decision(_)) {
                n += 1;
            }
        });
        n
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count() + self.decision_count()
    }

    /// Preorder traversal from the root; the callback gets `(id, depth)`.
    pub fn walk(&self, mut f: impl FnMut(NodeId, usize)) {
        let mut stack = vec![(self.root, 0)];
        while let Some((id, depth)) = stack.pop() {
            f(id, depth);
            if let Node::Decision(d) = &self.nodes[id] {
                for child in d.children.iter().rev().flatten() {
                    stack.push((*child, depth + 1));
                }
            }
        }
    }

    /// Root-to-leaf chain of `(node, region taken)` pairs.
    pub fn path_to(&self, leaf: NodeId) -> Option<Vec<(NodeId, usize)>> {
        fn search(tree: &DecisionTree, id: NodeId, target: NodeId, path: &mut Vec<(NodeId, usize)>) -> bool {
            if id == target {
                return true;
            }
            if let Node::Decision(d) = &tree.nodes[id] {
                for (r, child) in d.children.iter().enumerate() {
                    if let Some(c) = child {
                        path.push((id, r));
                        if search(tree, *c, target, path) {
                            return true;
                        }
                        path.pop();
                    }
                }
            }
            false
        }
        let mut path = Vec::new();
        search(self, self.root, leaf, &mut path).then_some(path)
    }

    /// Routes `x0` to a leaf and applies its map.
    pub fn eval(&self, x0: &[f64]) -> Result<TreeEvaluation> {
        if x0.len() != self.input_dim {
            return Err(Error::dim("tree input", self.input_dim, x0.len()));
        }
        let x = homogeneous(x0);
        let mut cost = PathCost::default();
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                Node::Decision(d) => {
                    let z = linalg::dot(ArrayView1::from(&d.filter_row), &x);
                    cost.row(self.input_dim);
                    let (region, comparisons) = locate(&d.breakpoints, z);
                    cost.comparisons += comparisons;
                    id = d.children[region].ok_or(Error::PrunedBranch { node: id })?;
                }
                Node::Leaf(leaf) => {
                    let output = (0..self.output_dim)
                        .map(|r| {
                            cost.row(self.input_dim);
                            linalg::dot(leaf.final_map.row(r), &x)
                        })
                        .collect();
                    return Ok(TreeEvaluation { output, leaf: id, cost });
                }
            }
        }
    }

    /// Raw output passed through the output activation, if any.
    pub fn predict(&self, x0: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.eval(x0)?.output;
        if let Some(act) = self.output_activation {
            for v in &mut out {
                *v = act.apply(*v);
            }
        }
        Ok(out)
    }

    pub fn classify(&self, x0: &[f64]) -> Result<usize> {
        let out = self.eval(x0)?.output;
        Ok(usize::from(out.first().copied().unwrap_or(0.0) >= 0.0))
    }

    pub(crate) fn refresh_stats(&mut self) {
        self.stats = BuildStats { node_count: self.decision_count(), leaf_count: self.leaf_count() };
    }
}

/// Unfolds the network into its equivalent tree.
pub fn build_tree(net: &NetworkSpec, limits: TreeLimits) -> Result<DecisionTree> {
    let program = Program::compile(net)?;
    let mut tree = build_tree_from(&program, limits)?;
    tree.output_activation = net.output_activation;
    Ok(tree)
}

pub fn build_tree_from(program: &Program, limits: TreeLimits) -> Result<DecisionTree> {
    let required = program.leaf_count();
    if required > limits.max_leaves as f64 {
        return Err(Error::LeafBudget { required, limit: limits.max_leaves });
    }
    let depth = program.depth();
    if let Some(limit) = limits.max_depth {
        if depth > limit {
            return Err(Error::DepthBudget { depth, limit });
        }
    }
    let mut builder = TreeBuilder {
        program,
        nodes: Vec::with_capacity(2 * required as usize),
        patterns: Vec::with_capacity(program.stages.len()),
    };
    let root = builder.grow(0, &program.initial, Vec::new())?;
    let mut tree = DecisionTree {
        nodes: builder.nodes,
        root,
        k: program.max_regions(),
        depth,
        widths: program.widths(),
        input_dim: program.input_dim,
        output_dim: program.output_dim,
        output_activation: None,
        domain: None,
        lossy: false,
        stats: BuildStats::default(),
    };
    tree.refresh_stats();
    Ok(tree)
}

struct TreeBuilder<'a> {
    program: &'a Program,
    nodes: Vec<Node>,
    patterns: Vec<Vec<usize>>,
}

impl TreeBuilder<'_> {
    /// Builds the subtree for `stage`, where `current` holds the regions of
    /// the units already decided in this stage.
    fn grow(&mut self, stage: usize, map: &Array2<f64>, mut current: Vec<usize>) -> Result<NodeId> {
        let Some(st) = self.program.stages.get(stage) else {
            let id = self.nodes.len();
            self.nodes.push(Node::Leaf(LeafNode {
                final_map: map.clone(),
                category: CategorizationVector::new(self.patterns.clone()),
                feasible: Feasibility::Unknown,
                realized_count: 0,
            }));
            return Ok(id);
        };
        if st.activation.is_linear() {
            current = vec![0; st.width];
        }
        if current.len() == st.width {
            let next = st.advance(&current, map.view())?;
            self.patterns.push(current);
            let id = self.grow(stage + 1, &next, Vec::new());
            self.patterns.pop();
            return id;
        }
        let unit = current.len();
        let id = self.nodes.len();
        self.nodes.push(Node::Decision(DecisionNode {
            filter_row: map.row(unit).to_vec(),
            breakpoints: st.activation.breakpoints.clone(),
            children: Vec::new(),
            layer_index: stage,
            unit_index: unit,
        }));
        let mut children = Vec::with_capacity(st.regions());
        for region in 0..st.regions() {
            let mut next = current.clone();
            next.push(region);
            children.push(Some(self.grow(stage, map, next)?));
        }
        if let Node::Decision(d) = &mut self.nodes[id] {
            d.children = children;
        }
        Ok(id)
    }
}

pub fn tree_eval(tree: &DecisionTree, x0: &[f64]) -> Result<TreeEvaluation> {
    tree.eval(x0)
}
