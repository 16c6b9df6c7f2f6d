//! Lossless tree pruning.
//!
//! A leaf is removed only when its path polytope is proved empty. Decision
//! nodes left with a single child are replaced by that child, which records
//! the node's rule as implied by its ancestors.

mod simplex;

use std::fmt::Write;

use crate::activation::locate;
use crate::error::{Error, Result};
use crate::tree::{DecisionNode, DecisionTree, Feasibility, LeafNode, Node, NodeId};

/// Margin that turns strict inequalities into closed ones.
pub const EPS_STRICT: f64 = 1e-7;
/// Regions whose largest inscribed slack is at most this are treated as
/// having no interior.
pub const EMPTY_INTERIOR: f64 = 1e-9;
pub const DEFAULT_DOMAIN: (f64, f64) = (-1e6, 1e6);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `normal · x̃ ≥ rhs`
    Ge,
    /// `normal · x̃ < rhs`
    Lt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceRule {
    /// Over the augmented input `[x; 1]`.
    pub normal: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl HalfspaceRule {
    /// Signed slack: non-negative when satisfied (zero is a violation for
    /// `Lt`).
    pub fn slack(&self, x0: &[f64]) -> f64 {
        let d = x0.len();
        let z = self.normal[..d].iter().zip(x0).map(|(a, b)| a * b).sum::<f64>() + self.normal[d];
        match self.sense {
            Sense::Ge => z - self.rhs,
            Sense::Lt => self.rhs - z,
        }
    }

    pub fn holds(&self, x0: &[f64]) -> bool {
        let s = self.slack(x0);
        match self.sense {
            Sense::Ge => s >= 0.0,
            Sense::Lt => s > 0.0,
        }
    }

    /// Rescaled so the non-homogeneous part has unit length; `None` for a
    /// constant rule.
    fn normalized(&self) -> Option<(Vec<f64>, f64)> {
        let d = self.normal.len() - 1;
        let norm = self.normal[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 0.0).then(|| {
            let g = self.normal[..d].iter().map(|v| v / norm).collect();
            (g, (self.rhs - self.normal[d]) / norm)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPolytope {
    pub rules: Vec<HalfspaceRule>,
    pub domain_box: Option<Vec<(f64, f64)>>,
}

impl PathPolytope {
    pub fn contains(&self, x0: &[f64]) -> bool {
        self.rules.iter().all(|r| r.holds(x0))
    }
}

/// Region constraints of every ancestor of `leaf`: a lower bound unless the
/// region is the lowest one, an upper bound unless it is the highest.
pub fn path_constraints(tree: &DecisionTree, leaf: NodeId) -> Result<PathPolytope> {
    let path =
        tree.path_to(leaf).ok_or_else(|| Error::Invalid(format!("node {leaf} is not reachable from the root")))?;
    let mut rules = Vec::new();
    for (id, region) in path {
        let Node::Decision(d) = &tree.nodes[id] else { unreachable!() };
        if region > 0 {
            rules.push(HalfspaceRule {
                normal: d.filter_row.clone(),
                sense: Sense::Ge,
                rhs: d.breakpoints[region - 1],
            });
        }
        if region < d.breakpoints.len() {
            rules.push(HalfspaceRule { normal: d.filter_row.clone(), sense: Sense::Lt, rhs: d.breakpoints[region] });
        }
    }
    Ok(PathPolytope { rules, domain_box: tree.domain.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityCheck {
    pub verdict: Feasibility,
    /// Satisfies every rule with normalized margin at least `EPS_STRICT / 2`
    /// when the verdict is `Feasible`.
    pub witness: Option<Vec<f64>>,
    /// Phase-1 optimum: the smallest achievable worst violation of the
    /// `EPS_STRICT`-tightened rules.
    pub objective: f64,
    /// `EPS_STRICT − objective`: the largest slack every rule can keep at
    /// once (capped at `EPS_STRICT`).
    pub margin: f64,
}

/// Decides whether the polytope has interior points. Without a domain box
/// the default `[-1e6, 1e6]` per coordinate is used.
///
/// All rules are tightened by `EPS_STRICT` and phase 1 minimizes the worst
/// violation. A region is infeasible when no point keeps a slack above
/// `EMPTY_INTERIOR` (this includes closures that only touch, such as
/// `z ≥ 0` with `z < 0`), feasible when a witness keeps `EPS_STRICT / 2`,
/// and degenerate in between.
pub fn is_feasible(p: &PathPolytope) -> FeasibilityCheck {
    let d = p.rules.first().map_or_else(|| p.domain_box.as_ref().map_or(0, Vec::len), |r| r.normal.len() - 1);
    let bounds = p.domain_box.clone().unwrap_or_else(|| vec![DEFAULT_DOMAIN; d]);
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();

    let mut rows = Vec::with_capacity(p.rules.len() + d);
    for rule in &p.rules {
        match rule.normalized() {
            // constant rules are decided exactly, the tree sees `0·x + β`
            None => {
                if !rule.holds(&vec![0.0; d]) {
                    return FeasibilityCheck {
                        verdict: Feasibility::Infeasible,
                        witness: None,
                        objective: f64::INFINITY,
                        margin: f64::NEG_INFINITY,
                    };
                }
            }
            Some((g, h)) => {
                // both senses tightened by the margin, written as a·x ≤ b
                let (a, b): (Vec<f64>, f64) = match rule.sense {
                    Sense::Ge => (g.iter().map(|v| -v).collect(), -h - EPS_STRICT),
                    Sense::Lt => (g, h - EPS_STRICT),
                };
                let shift: f64 = a.iter().zip(&lo).map(|(a, l)| a * l).sum();
                rows.push((a, b - shift, true));
            }
        }
    }
    for (j, &(l, u)) in bounds.iter().enumerate() {
        let mut a = vec![0.0; d];
        a[j] = 1.0;
        rows.push((a, u - l, false));
    }
    let sol = simplex::phase1(d, &rows);
    let x: Vec<f64> = sol.point.iter().zip(&lo).map(|(y, l)| y + l).collect();

    // `margin` is the largest common slack any point of the box achieves
    let margin = EPS_STRICT - sol.objective;
    let verdict = if margin <= EMPTY_INTERIOR {
        Feasibility::Infeasible
    } else if margin >= EPS_STRICT / 2.0 && witness_margin(p, &x) >= EPS_STRICT / 2.0 {
        Feasibility::Feasible
    } else {
        Feasibility::Degenerate
    };
    FeasibilityCheck {
        verdict,
        witness: (verdict != Feasibility::Infeasible).then_some(x),
        objective: sol.objective,
        margin,
    }
}

/// Smallest normalized slack over the rules (constant rules excluded).
pub fn witness_margin(p: &PathPolytope, x0: &[f64]) -> f64 {
    p.rules
        .iter()
        .filter_map(|r| {
            let (g, h) = r.normalized()?;
            let z: f64 = g.iter().zip(x0).map(|(a, b)| a * b).sum();
            Some(match r.sense {
                Sense::Ge => z - h,
                Sense::Lt => h - z,
            })
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafVerdict {
    pub leaf: NodeId,
    /// Id in the pruned tree.
    pub new_leaf: Option<NodeId>,
    pub category: String,
    pub check: FeasibilityCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub leaves: Vec<LeafVerdict>,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub leaves_before: usize,
    pub leaves_after: usize,
    /// Decision nodes replaced by their only surviving child.
    pub implied_rules: usize,
}

impl PruneReport {
    pub fn degenerate(&self) -> usize {
        self.leaves.iter().filter(|v| v.check.verdict == Feasibility::Degenerate).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# nodes_before={} nodes_after={} leaves_before={} leaves_after={} implied_rules={} degenerate={}",
            self.nodes_before,
            self.nodes_after,
            self.leaves_before,
            self.leaves_after,
            self.implied_rules,
            self.degenerate()
        );
        out.push_str("leaf,new_leaf,category,verdict,objective,witness\n");
        for v in &self.leaves {
            let verdict = match v.check.verdict {
                Feasibility::Unknown => "unknown",
                Feasibility::Feasible => "feasible",
                Feasibility::Infeasible => "infeasible",
                Feasibility::Degenerate => "degenerate",
            };
            let witness = v
                .check
                .witness
                .as_ref()
                .map_or(String::new(), |w| w.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" "));
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{}",
                v.leaf,
                v.new_leaf.map_or(String::new(), |n| n.to_string()),
                v.category,
                verdict,
                v.check.objective,
                witness
            );
        }
        out
    }
}

/// Copies the reachable part of `tree` keeping only leaves accepted by
/// `keep`, collapsing single-child decisions. Returns the new tree, the
/// old→new id map and the number of collapsed decisions.
fn rebuild(
    tree: &DecisionTree,
    mut keep: impl FnMut(NodeId, &LeafNode) -> Option<LeafNode>,
) -> Result<(DecisionTree, Vec<Option<NodeId>>, usize)> {
    // first pass decides which subtrees survive
    fn survives(
        tree: &DecisionTree,
        id: NodeId,
        kept: &mut Vec<Option<LeafNode>>,
        keep: &mut dyn FnMut(NodeId, &LeafNode) -> Option<LeafNode>,
    ) -> bool {
        match &tree.nodes[id] {
            Node::Leaf(l) => {
                kept[id] = keep(id, l);
                kept[id].is_some()
            }
            Node::Decision(d) => {
                let mut any = false;
                for c in d.children.iter().flatten() {
                    any |= survives(tree, *c, kept, keep);
                }
                any
            }
        }
    }
    fn copy(
        tree: &DecisionTree,
        id: NodeId,
        kept: &mut Vec<Option<LeafNode>>,
        out: &mut Vec<Node>,
        map: &mut Vec<Option<NodeId>>,
        collapsed: &mut usize,
    ) -> Option<NodeId> {
        match &tree.nodes[id] {
            Node::Leaf(_) => {
                let leaf = kept[id].take()?;
                let new = out.len();
                out.push(Node::Leaf(leaf));
                map[id] = Some(new);
                Some(new)
            }
            Node::Decision(d) => {
                let alive: Vec<bool> =
                    d.children.iter().map(|c| c.is_some_and(|c| subtree_alive(tree, c, kept))).collect();
                let count = alive.iter().filter(|a| **a).count();
                if count == 0 {
                    return None;
                }
                if count == 1 {
                    *collapsed += 1;
                    let j = alive.iter().position(|a| *a).expect("one child");
                    return copy(tree, d.children[j].expect("alive"), kept, out, map, collapsed);
                }
                let new = out.len();
                out.push(Node::Decision(DecisionNode { children: Vec::new(), ..d.clone() }));
                map[id] = Some(new);
                let children = d
                    .children
                    .iter()
                    .zip(&alive)
                    .map(|(c, &a)| if a { copy(tree, c.expect("alive"), kept, out, map, collapsed) } else { None })
                    .collect();
                if let Node::Decision(nd) = &mut out[new] {
                    nd.children = children;
                }
                Some(new)
            }
        }
    }
    fn subtree_alive(tree: &DecisionTree, id: NodeId, kept: &[Option<LeafNode>]) -> bool {
        match &tree.nodes[id] {
            Node::Leaf(_) => kept[id].is_some(),
            Node::Decision(d) => d.children.iter().flatten().any(|c| subtree_alive(tree, *c, kept)),
        }
    }

    let mut kept = vec![None; tree.nodes.len()];
    if !survives(tree, tree.root, &mut kept, &mut keep) {
        return Err(Error::Invalid("pruning would remove every leaf".into()));
    }
    let mut out = Vec::new();
    let mut map = vec![None; tree.nodes.len()];
    let mut collapsed = 0;
    let root = copy(tree, tree.root, &mut kept, &mut out, &mut map, &mut collapsed).expect("survives");
    let mut pruned = DecisionTree { nodes: out, root, ..tree.clone() };
    pruned.refresh_stats();
    Ok((pruned, map, collapsed))
}

/// Removes leaves whose path polytope is empty inside `domain` (default
/// `[-1e6, 1e6]` per coordinate). Inputs outside the domain may route
/// differently afterwards.
pub fn prune_infeasible(tree: &DecisionTree, domain: Option<Vec<(f64, f64)>>) -> Result<(DecisionTree, PruneReport)> {
    let domain = domain.unwrap_or_else(|| vec![DEFAULT_DOMAIN; tree.input_dim]);
    if domain.len() != tree.input_dim {
        return Err(Error::dim("domain box", tree.input_dim, domain.len()));
    }
    if let Some(i) = domain.iter().position(|&(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
        return Err(Error::Invalid(format!("domain bounds for x{i} must be finite with lo ≤ hi")));
    }
    let mut with_domain = tree.clone();
    with_domain.domain = Some(domain);

    let ids = with_domain.leaf_ids();
    let mut verdicts = Vec::with_capacity(ids.len());
    for &id in &ids {
        let p = path_constraints(&with_domain, id)?;
        verdicts.push((id, is_feasible(&p)));
    }
    let mut checks = vec![None; with_domain.nodes.len()];
    for (id, c) in &verdicts {
        checks[*id] = Some(c.verdict);
    }
    let (pruned, map, implied_rules) = rebuild(&with_domain, |id, leaf| {
        let verdict = checks[id].expect("checked");
        (verdict != Feasibility::Infeasible).then(|| LeafNode { feasible: verdict, ..leaf.clone() })
    })?;
    let report = PruneReport {
        leaves: verdicts
            .into_iter()
            .map(|(id, check)| LeafVerdict {
                leaf: id,
                new_leaf: map[id],
                category: with_domain.leaf(id).expect("leaf").category.label(),
                check,
            })
            .collect(),
        nodes_before: tree.node_count(),
        nodes_after: pruned.node_count(),
        leaves_before: tree.leaf_count(),
        leaves_after: pruned.leaf_count(),
        implied_rules,
    };
    Ok((pruned, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Interval {
    lo: f64,
    lo_closed: bool,
    hi: f64,
    hi_closed: bool,
}

impl Interval {
    const ALL: Interval = Interval { lo: f64::NEG_INFINITY, lo_closed: false, hi: f64::INFINITY, hi_closed: false };

    fn intersect(self, o: Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > o.lo || (self.lo == o.lo && !self.lo_closed) {
            (self.lo, self.lo_closed)
        } else {
            (o.lo, o.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < o.hi || (self.hi == o.hi && !self.hi_closed) {
            (self.hi, self.hi_closed)
        } else {
            (o.hi, o.hi_closed)
        };
        Interval { lo, lo_closed, hi, hi_closed }
    }

    fn is_empty(self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }
}

/// `x`-interval of region `j` for a rule already normalized to `±x`.
fn region_interval(sign: f64, breakpoints: &[f64], j: usize) -> Interval {
    let lower = if j > 0 { breakpoints[j - 1] } else { f64::NEG_INFINITY };
    let upper = breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
    if sign > 0.0 {
        Interval { lo: lower, lo_closed: j > 0, hi: upper, hi_closed: false }
    } else {
        // −x ∈ [lower, upper)  ⇔  x ∈ (−upper, −lower]
        Interval { lo: -upper, lo_closed: false, hi: -lower, hi_closed: j > 0 }
    }
}

/// Rewrites every rule of a scalar-input tree as a threshold on `±x` and
/// removes decisions already implied by their ancestors.
///
/// The filter row `[w, β]` becomes `[sign(w), 0]` with breakpoints
/// `(t − β)/|w|`, which keeps the left-closed region convention. Zero-weight
/// rules are constant and folded away.
pub fn simplify_rules_1d(tree: &DecisionTree) -> Result<(DecisionTree, usize)> {
    if tree.input_dim != 1 {
        return Err(Error::dim("simplify_rules_1d input", 1, tree.input_dim));
    }
    struct Ctx<'a> {
        tree: &'a DecisionTree,
        out: Vec<Node>,
        removed: usize,
    }
    fn go(ctx: &mut Ctx, id: NodeId, reach: Interval) -> Result<Option<NodeId>> {
        let node = &ctx.tree.nodes[id];
        let d = match node {
            Node::Leaf(l) => {
                let new = ctx.out.len();
                ctx.out.push(Node::Leaf(l.clone()));
                return Ok(Some(new));
            }
            Node::Decision(d) => d,
        };
        let (w, beta) = (d.filter_row[0], d.filter_row[1]);
        if w == 0.0 {
            let (j, _) = locate(&d.breakpoints, beta);
            ctx.removed += 1;
            return match d.children[j] {
                Some(c) => go(ctx, c, reach),
                None => Ok(None),
            };
        }
        let sign = w.signum();
        let breakpoints: Vec<f64> = d.breakpoints.iter().map(|t| (t - beta) / w.abs()).collect();
        let parts: Vec<Interval> =
            (0..breakpoints.len() + 1).map(|j| region_interval(sign, &breakpoints, j).intersect(reach)).collect();
        let open: Vec<usize> = (0..parts.len()).filter(|&j| !parts[j].is_empty()).collect();
        if open.len() == 1 {
            ctx.removed += 1;
            return match d.children[open[0]] {
                Some(c) => go(ctx, c, parts[open[0]]),
                None => Ok(None),
            };
        }
        let new = ctx.out.len();
        ctx.out.push(Node::Decision(DecisionNode {
            filter_row: vec![sign, 0.0],
            breakpoints,
            children: Vec::new(),
            layer_index: d.layer_index,
            unit_index: d.unit_index,
        }));
        let mut children = Vec::with_capacity(parts.len());
        for (j, part) in parts.iter().enumerate() {
            children.push(match d.children[j] {
                Some(c) if !part.is_empty() => go(ctx, c, *part)?,
                _ => None,
            });
        }
        if let Node::Decision(nd) = &mut ctx.out[new] {
            nd.children = children;
        }
        Ok(Some(new))
    }
    let mut ctx = Ctx { tree, out: Vec::new(), removed: 0 };
    let root = go(&mut ctx, tree.root, Interval::ALL)?
        .ok_or_else(|| Error::Invalid("every branch of the tree is pruned".into()))?;
    let mut simplified = DecisionTree { nodes: ctx.out, root, ..tree.clone() };
    simplified.refresh_stats();
    Ok((simplified, ctx.removed))
}

/// Counts how many of `data` route to every leaf.
pub fn mark_realized(tree: &mut DecisionTree, data: &[Vec<f64>]) -> Result<()> {
    for node in &mut tree.nodes {
        if let Node::Leaf(l) = node {
            l.realized_count = 0;
        }
    }
    for x in data {
        let leaf = tree.eval(x)?.leaf;
        if let Node::Leaf(l) = &mut tree.nodes[leaf] {
            l.realized_count += 1;
        }
    }
    Ok(())
}

/// Drops leaves no data point reached. The result is no longer equivalent
/// to the network and is flagged `lossy`.
pub fn drop_unrealized(tree: &DecisionTree) -> Result<DecisionTree> {
    let (mut out, _, _) = rebuild(tree, |_, leaf| (leaf.realized_count > 0).then(|| leaf.clone()))?;
    out.lossy = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(normal: Vec<f64>, sense: Sense, rhs: f64) -> HalfspaceRule {
        HalfspaceRule { normal, sense, rhs }
    }

    fn poly(rules: Vec<HalfspaceRule>) -> PathPolytope {
        PathPolytope { rules, domain_box: None }
    }

    #[test]
    fn contradictory_interval() {
        let p = poly(vec![rule(vec![1.0, 0.0], Sense::Ge, 0.0), rule(vec![1.0, 0.0], Sense::Lt, -1.0)]);
        let c = is_feasible(&p);
        assert_eq!(c.verdict, Feasibility::Infeasible);
        assert!(c.witness.is_none());
    }

    #[test]
    fn interval_with_witness() {
        let p = poly(vec![rule(vec![1.0, 0.0], Sense::Ge, -1.0), rule(vec![1.0, 0.0], Sense::Lt, 1.0)]);
        let c = is_feasible(&p);
        assert_eq!(c.verdict, Feasibility::Feasible);
        let w = c.witness.unwrap();
        assert!(p.contains(&w));
        assert!(witness_margin(&p, &w) >= EPS_STRICT / 2.0);
    }

    #[test]
    fn touching_closures_are_empty() {
        // x ≥ 0 and −x ≥ 0 only contain the point 0
        let p = poly(vec![rule(vec![1.0, 0.0], Sense::Ge, 0.0), rule(vec![-1.0, 0.0], Sense::Ge, 0.0)]);
        assert_eq!(is_feasible(&p).verdict, Feasibility::Infeasible);
        let p = poly(vec![rule(vec![1.5, -0.5], Sense::Ge, 0.0), rule(vec![1.5, -0.5], Sense::Lt, 0.0)]);
        assert_eq!(is_feasible(&p).verdict, Feasibility::Infeasible);
    }

    #[test]
    fn thin_slab_is_degenerate() {
        let p = poly(vec![rule(vec![1.0, 0.0], Sense::Ge, 0.0), rule(vec![1.0, 0.0], Sense::Lt, 2e-8)]);
        let c = is_feasible(&p);
        assert_eq!(c.verdict, Feasibility::Degenerate);
        assert!(c.witness.is_some());
    }

    #[test]
    fn constant_rules() {
        let yes = poly(vec![rule(vec![0.0, 0.0, 2.0], Sense::Ge, 1.0)]);
        assert_eq!(is_feasible(&yes).verdict, Feasibility::Feasible);
        let no = poly(vec![rule(vec![0.0, 0.0, 2.0], Sense::Lt, 2.0)]);
        assert_eq!(is_feasible(&no).verdict, Feasibility::Infeasible);
    }

    #[test]
    fn domain_box_is_respected() {
        let mut p = poly(vec![rule(vec![1.0, 1.0, 0.0], Sense::Ge, 5.0)]);
        p.domain_box = Some(vec![(-2.0, 2.0), (-2.0, 2.0)]);
        assert_eq!(is_feasible(&p).verdict, Feasibility::Infeasible);
        p.domain_box = Some(vec![(-2.0, 3.0), (-2.0, 3.0)]);
        let c = is_feasible(&p);
        assert_eq!(c.verdict, Feasibility::Feasible);
        let w = c.witness.unwrap();
        assert!(w.iter().all(|v| (-2.0..=3.0).contains(v)));
    }

    #[test]
    fn interval_intersection() {
        let a = region_interval(1.0, &[0.0], 1);
        let b = region_interval(-1.0, &[0.0], 1);
        // x ≥ 0 and x ≤ 0 meet at 0
        assert!(!a.intersect(b).is_empty());
        let c = region_interval(-1.0, &[0.0], 0);
        // x ≥ 0 and x > 0
        assert!(!a.intersect(c).is_empty());
        let left = region_interval(1.0, &[0.0], 0);
        assert!(a.intersect(left).is_empty());
    }
}
