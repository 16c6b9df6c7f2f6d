//! Tree files: a flat list of decision nodes and a flat list of leaves,
//! linked by id. Children of pruned branches are `null`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BuildStats, DecisionNode, DecisionTree, Feasibility, LeafNode, Node, NodeId};
use crate::error::{Error, Result};
use crate::network::{CategorizationVector, OutputActivation};

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    version: u32,
    k: usize,
    d: usize,
    widths: Vec<usize>,
    input_dim: usize,
    output_dim: usize,
    root: NodeId,
    #[serde(default)]
    output_activation: Option<OutputActivation>,
    #[serde(default)]
    lossy: bool,
    #[serde(default)]
    domain: Option<Vec<(f64, f64)>>,
    nodes: Vec<NodeEntry>,
    leaves: Vec<LeafEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: NodeId,
    filter_row: Vec<f64>,
    breakpoints: Vec<f64>,
    children: Vec<Option<NodeId>>,
    layer: usize,
    unit: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafEntry {
    id: NodeId,
    /// Row-major, `(output_dim + 1) × (input_dim + 1)`.
    final_map: Vec<Vec<f64>>,
    category: Vec<Vec<usize>>,
    #[serde(default)]
    feasibility: Feasibility,
    #[serde(default)]
    realized_count: usize,
}

pub fn export_json(tree: &DecisionTree) -> String {
    let mut nodes = Vec::new();
    let mut leaves = Vec::new();
    // ids are renumbered in preorder so unreachable arena slots vanish
    let mut order = Vec::new();
    tree.walk(|id, _| order.push(id));
    let mut renumber = vec![usize::MAX; tree.nodes.len()];
    for (new, &old) in order.iter().enumerate() {
        renumber[old] = new;
    }
    for &old in &order {
        let id = renumber[old];
        match &tree.nodes[old] {
            Node::Decision(d) => nodes.push(NodeEntry {
                id,
                filter_row: d.filter_row.clone(),
                breakpoints: d.breakpoints.clone(),
                children: d.children.iter().map(|c| c.map(|c| renumber[c])).collect(),
                layer: d.layer_index,
                unit: d.unit_index,
            }),
            Node::Leaf(l) => leaves.push(LeafEntry {
                id,
                final_map: l.final_map.rows().into_iter().map(|r| r.to_vec()).collect(),
                category: l.category.patterns.clone(),
                feasibility: l.feasible,
                realized_count: l.realized_count,
            }),
        }
    }
    let file = TreeFile {
        version: TREE_FORMAT_VERSION,
        k: tree.k,
        d: tree.depth,
        widths: tree.widths.clone(),
        input_dim: tree.input_dim,
        output_dim: tree.output_dim,
        root: renumber[tree.root],
        output_activation: tree.output_activation,
        lossy: tree.lossy,
        domain: tree.domain.clone(),
        nodes,
        leaves,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("tree serializes");
    text.push('\n');
    text
}

pub fn import_json(text: &str) -> Result<DecisionTree> {
    let file: TreeFile = serde_json::from_str(text)
        .map_err(|e| Error::schema(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    if file.version != TREE_FORMAT_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported tree format {} (expected {TREE_FORMAT_VERSION})", file.version),
        ));
    }
    let total = file.nodes.len() + file.leaves.len();
    let mut slots: Vec<Option<Node>> = vec![None; total];
    let cols = file.input_dim + 1;
    let place = |slots: &mut Vec<Option<Node>>, id: NodeId, node: Node| -> Result<()> {
        match slots.get_mut(id) {
            None => Err(Error::schema(format!("node {id}"), format!("id out of range (tree has {total} nodes)"))),
            Some(Some(_)) => Err(Error::schema(format!("node {id}"), "duplicate id")),
            Some(slot) => {
                *slot = Some(node);
                Ok(())
            }
        }
    };
    for n in file.nodes {
        let at = format!("node {}", n.id);
        if n.filter_row.len() != cols {
            return Err(Error::schema(at, format!("filter_row has {} entries, expected {cols}", n.filter_row.len())));
        }
        if n.breakpoints.windows(2).any(|w| w[0] >= w[1]) || n.breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::schema(at, "breakpoints must be finite and strictly increasing"));
        }
        if n.children.len() != n.breakpoints.len() + 1 {
            return Err(Error::schema(
                at,
                format!("{} children for {} breakpoints", n.children.len(), n.breakpoints.len()),
            ));
        }
        place(
            &mut slots,
            n.id,
            Node::Decision(DecisionNode {
                filter_row: n.filter_row,
                breakpoints: n.breakpoints,
                children: n.children,
                layer_index: n.layer,
                unit_index: n.unit,
            }),
        )?;
    }
    for l in file.leaves {
        let at = format!("leaf {}", l.id);
        let rows = file.output_dim + 1;
        if l.final_map.len() != rows || l.final_map.iter().any(|r| r.len() != cols) {
            return Err(Error::schema(at, format!("final_map must be {rows}×{cols}")));
        }
        let flat: Vec<f64> = l.final_map.into_iter().flatten().collect();
        let final_map = Array2::from_shape_vec((rows, cols), flat).expect("checked shape");
        if !crate::linalg::has_homogeneous_row(final_map.view()) {
            return Err(Error::schema(at, "final_map last row must be [0 … 0 1]"));
        }
        place(
            &mut slots,
            l.id,
            Node::Leaf(LeafNode {
                final_map,
                category: CategorizationVector::new(l.category),
                feasible: l.feasibility,
                realized_count: l.realized_count,
            }),
        )?;
    }
    let nodes: Vec<Node> = slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::schema(format!("node {i}"), "missing id")))
        .collect::<Result<_>>()?;
    if file.root >= nodes.len() {
        return Err(Error::schema("root", format!("root {} does not exist", file.root)));
    }
    // every node reachable exactly once from the root
    let mut seen = HashSet::new();
    let mut stack = vec![file.root];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            return Err(Error::schema(format!("node {id}"), "reached twice (not a tree)"));
        }
        if let Node::Decision(d) = &nodes[id] {
            for &c in d.children.iter().flatten() {
                if c >= nodes.len() {
                    return Err(Error::schema(format!("node {id}"), format!("child {c} does not exist")));
                }
                stack.push(c);
            }
        }
    }
    if seen.len() != nodes.len() {
        let orphan = (0..nodes.len()).find(|i| !seen.contains(i)).unwrap_or(0);
        return Err(Error::schema(format!("node {orphan}"), "unreachable from root"));
    }
    let mut tree = DecisionTree {
        nodes,
        root: file.root,
        k: file.k,
        depth: file.d,
        widths: file.widths,
        input_dim: file.input_dim,
        output_dim: file.output_dim,
        output_activation: file.output_activation,
        domain: file.domain,
        lossy: file.lossy,
        stats: BuildStats::default(),
    };
    tree.refresh_stats();
    Ok(tree)
}

pub fn write_tree(tree: &DecisionTree, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, export_json(tree))?;
    Ok(())
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<DecisionTree> {
    import_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::PwlActivation;
    use crate::network::NetworkSpec;
    use crate::tree::{build_tree, TreeLimits};
    use ndarray::array;

    fn tree() -> DecisionTree {
        let net = NetworkSpec::dense_from_weights(
            "t",
            vec![(array![[1.0, 0.5], [-0.5, 2.0]], array![0.2, 0.4]), (array![[1.0, -2.0]], array![0.5])],
            &PwlActivation::hard_tanh(),
        )
        .unwrap();
        build_tree(&net, TreeLimits::default()).unwrap()
    }

    #[test]
    fn round_trip_is_identical() {
        let t = tree();
        let text = export_json(&t);
        let back = import_json(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(export_json(&back), text);
    }

    #[test]
    fn rejects_bad_child_count() {
        let mut v: serde_json::Value = serde_json::from_str(&export_json(&tree())).unwrap();
        v["nodes"][2]["children"].as_array_mut().unwrap().pop();
        let id = v["nodes"][2]["id"].as_u64().unwrap();
        let err = import_json(&v.to_string()).unwrap_err();
        match err {
            Error::Schema { location, .. } => assert_eq!(location, format!("node {id}")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_unknown_version_and_garbage() {
        let mut v: serde_json::Value = serde_json::from_str(&export_json(&tree())).unwrap();
        v["version"] = 99.into();
        assert!(matches!(import_json(&v.to_string()), Err(Error::Schema { .. })));
        assert!(matches!(import_json("{\"version\": 1,"), Err(Error::Schema { .. })));
    }
}
