use std::collections::HashSet;
use std::fmt::Write;

use super::{DecisionNode, DecisionTree, Node};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DotOptions {
    /// Print scalar-input rules as direct inequalities on `x`.
    pub show_rules_1d: bool,
    pub max_nodes: usize,
}

impl Default for DotOptions {
    fn default() -> Self {
        DotOptions { show_rules_1d: true, max_nodes: 10_000 }
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

/// `a·x + b` style text for one affine row over `[x; 1]`.
pub(crate) fn affine_text(row: &[f64]) -> String {
    let d = row.len() - 1;
    let mut out = String::new();
    for (i, &w) in row[..d].iter().enumerate() {
        let var = if d == 1 { "x".to_string() } else { format!("x{i}") };
        if out.is_empty() {
            let _ = write!(out, "{}·{var}", num(w));
        } else if w < 0.0 {
            let _ = write!(out, " - {}·{var}", num(-w));
        } else {
            let _ = write!(out, " + {}·{var}", num(w));
        }
    }
    let b = row[d];
    if out.is_empty() {
        num(b)
    } else if b < 0.0 {
        format!("{out} - {}", num(-b))
    } else {
        format!("{out} + {}", num(b))
    }
}

/// x-interval text for region `j` of a scalar rule `w x + β` (half-open on
/// the side the breakpoint convention dictates).
pub(crate) fn interval_1d(node: &DecisionNode, j: usize) -> String {
    let (w, beta) = (node.filter_row[0], node.filter_row[1]);
    let bp = &node.breakpoints;
    if w == 0.0 {
        return format!("const {}", num(beta));
    }
    let cut = |t: f64| (t - beta) / w;
    let lo = (j > 0).then(|| cut(bp[j - 1]));
    let hi = bp.get(j).map(|&t| cut(t));
    let (lo, hi, lo_closed) = if w > 0.0 { (lo, hi, true) } else { (hi, lo, false) };
    match (lo, hi) {
        (None, None) => "any x".into(),
        (Some(a), None) => format!("x {} {}", if lo_closed { "≥" } else { ">" }, num(a)),
        (None, Some(b)) => format!("x {} {}", if lo_closed { "<" } else { "≤" }, num(b)),
        (Some(a), Some(b)) => {
            let (l, r) = if lo_closed { ("[", ")") } else { ("(", "]") };
            format!("x ∈ {l}{}, {}{r}", num(a), num(b))
        }
    }
}

/// Human-readable rule for a decision node.
pub(crate) fn rule_text(node: &DecisionNode, direct_1d: bool) -> String {
    if direct_1d && node.filter_row.len() == 2 && node.breakpoints.len() == 1 {
        interval_1d(node, 1)
    } else if node.breakpoints.len() == 1 {
        format!("{} ≥ {}", affine_text(&node.filter_row), num(node.breakpoints[0]))
    } else {
        affine_text(&node.filter_row)
    }
}

fn edge_text(node: &DecisionNode, j: usize, direct_1d: bool) -> String {
    let k = node.breakpoints.len() + 1;
    if k == 2 {
        return if j == 1 { "yes".into() } else { "no".into() };
    }
    if direct_1d && node.filter_row.len() == 2 {
        return interval_1d(node, j);
    }
    let bp = &node.breakpoints;
    match j {
        0 => format!("< {}", num(bp[0])),
        j if j == k - 1 => format!("≥ {}", num(bp[j - 1])),
        j => format!("[{}, {})", num(bp[j - 1]), num(bp[j])),
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

pub fn export_dot(tree: &DecisionTree, options: DotOptions) -> String {
    let direct_1d = options.show_rules_1d && tree.input_dim == 1;
    let mut order = Vec::new();
    tree.walk(|id, _| order.push(id));
    let total = order.len();
    let shown: Vec<usize> = order.into_iter().take(options.max_nodes).collect();
    let shown_set: HashSet<usize> = shown.iter().copied().collect();

    let mut out = String::from("digraph tree {\n");
    if shown.len() < total {
        let _ = writeln!(out, "  // truncated: showing {} of {} nodes", shown.len(), total);
    }
    out.push_str("  node [fontname=\"Helvetica\"];\n");
    for &id in &shown {
        match &tree.nodes[id] {
            Node::Decision(d) => {
                let _ = writeln!(out, "  n{id} [shape=box, label=\"{}\"];", escape(&rule_text(d, direct_1d)));
            }
            Node::Leaf(leaf) => {
                let rows: Vec<String> = (0..tree.output_dim)
                    .map(|r| affine_text(leaf.final_map.row(r).as_slice().unwrap_or(&leaf.final_map.row(r).to_vec())))
                    .collect();
                let mut label = rows.join("\n");
                if tree.output_activation.is_some() {
                    label = format!("{label}\nclass = [{} ≥ 0]", rows.first().cloned().unwrap_or_default());
                }
                let _ = writeln!(out, "  n{id} [shape=ellipse, color=red, label=\"{}\"];", escape(&label));
            }
        }
    }
    for &id in &shown {
        if let Node::Decision(d) = &tree.nodes[id] {
            for (j, child) in d.children.iter().enumerate() {
                if let Some(c) = child {
                    if shown_set.contains(c) {
                        let _ = writeln!(out, "  n{id} -> n{c} [label=\"{}\"];", escape(&edge_text(d, j, direct_1d)));
                    }
                }
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Rule chain that routes `x0` to its leaf, one line per decision, followed
/// by the leaf's affine output. Scalar-input rules read as intervals on `x`.
pub fn explain(tree: &DecisionTree, x0: &[f64]) -> Result<String> {
    let leaf = tree.eval(x0)?.leaf;
    let path = tree.path_to(leaf).ok_or(Error::Invalid(format!("leaf {leaf} is unreachable")))?;
    let mut out = String::new();
    for (depth, &(id, j)) in path.iter().enumerate() {
        let Node::Decision(d) = &tree.nodes[id] else { continue };
        let text = if tree.input_dim == 1 {
            interval_1d(d, j)
        } else {
            let f = affine_text(&d.filter_row);
            let bp = &d.breakpoints;
            match (j.checked_sub(1).map(|i| bp[i]), bp.get(j)) {
                (None, Some(t)) => format!("{f} < {}", num(*t)),
                (Some(t), None) => format!("{f} ≥ {}", num(t)),
                (Some(a), Some(b)) => format!("{} ≤ {f} < {}", num(a), num(*b)),
                (None, None) => f,
            }
        };
        let _ = writeln!(out, "{:>2}. node {id} (layer {}, unit {}): {text}", depth + 1, d.layer_index, d.unit_index);
    }
    let Node::Leaf(l) = &tree.nodes[leaf] else { unreachable!("eval ends at a leaf") };
    let _ = writeln!(out, "leaf {leaf} [{}]", l.category.label());
    for r in 0..tree.output_dim {
        let _ = writeln!(out, "  y{r} = {}", affine_text(&l.final_map.row(r).to_vec()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(row: Vec<f64>, bps: Vec<f64>) -> DecisionNode {
        DecisionNode {
            children: vec![None; bps.len() + 1],
            filter_row: row,
            breakpoints: bps,
            layer_index: 0,
            unit_index: 0,
        }
    }

    #[test]
    fn direct_inequalities() {
        assert_eq!(rule_text(&node(vec![2.0, -1.0], vec![0.0]), true), "x ≥ 0.5000");
        assert_eq!(rule_text(&node(vec![-1.0, 1.0], vec![0.0]), true), "x ≤ 1.0000");
        assert_eq!(rule_text(&node(vec![2.0, -1.0], vec![0.0]), false), "2.0000·x - 1.0000 ≥ 0.0000");
    }

    #[test]
    fn affine_forms() {
        assert_eq!(affine_text(&[0.55, 0.09]), "0.5500·x + 0.0900");
        assert_eq!(affine_text(&[-0.98, -0.49, 0.95]), "-0.9800·x0 - 0.4900·x1 + 0.9500");
        assert_eq!(affine_text(&[0.0]), "0.0000");
    }

    #[test]
    fn multi_region_intervals() {
        let n = node(vec![-2.0, 0.0], vec![-1.0, 1.0]);
        assert_eq!(interval_1d(&n, 0), "x > 0.5000");
        assert_eq!(interval_1d(&n, 1), "x ∈ (-0.5000, 0.5000]");
        assert_eq!(interval_1d(&n, 2), "x ≤ -0.5000");
    }

    #[test]
    fn explain_lists_the_path() {
        use crate::network::NetworkSpec;
        use crate::tree::{build_tree, TreeLimits};
        use ndarray::array;
        let net = NetworkSpec::dense_from_weights(
            "t",
            vec![(array![[1.0], [-1.0]], array![0.0, 0.5]), (array![[1.0, 1.0]], array![0.0])],
            &crate::PwlActivation::relu(),
        )
        .unwrap();
        let tree = build_tree(&net, TreeLimits::default()).unwrap();
        let text = explain(&tree, &[0.25]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].ends_with("x ≥ 0.0000"), "{text}");
        assert!(lines[1].ends_with("x ≤ 0.5000"), "{text}");
        assert_eq!(lines[3], "  y0 = 0.0000·x + 0.5000");
    }
}
