mod common;

use ndarray::array;
use nntree::prune::{
    drop_unrealized, is_feasible, mark_realized, path_constraints, prune_infeasible, simplify_rules_1d, EPS_STRICT,
};
use nntree::tree::{build_tree, Feasibility, Node, TreeLimits};
use nntree::{NetworkSpec, PwlActivation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn duplicate_units_halve_the_leaves() {
    let net = NetworkSpec::dense_from_weights(
        "dup",
        vec![(array![[1.5], [1.5]], array![-0.5, -0.5]), (array![[1.0, -2.0]], array![0.25])],
        &PwlActivation::relu(),
    )
    .unwrap();
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    assert_eq!(tree.leaf_count(), 4);
    let (pruned, report) = prune_infeasible(&tree, None).unwrap();
    assert_eq!(pruned.leaf_count(), 2);
    assert_eq!(report.leaves_after, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for x in uniform_points(&mut rng, 1000, &[(-5.0, 5.0)]) {
        assert_eq!(pruned.eval(&x).unwrap().output, tree.eval(&x).unwrap().output);
    }
}

#[test]
fn samples_satisfy_exactly_their_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = dense_net(&mut rng, 2, &[3, 2], &PwlActivation::hard_tanh());
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    let polys: Vec<_> = tree.leaf_ids().into_iter().map(|id| (id, path_constraints(&tree, id).unwrap())).collect();
    for x in uniform_points(&mut rng, 1000, &[(-3.0, 3.0), (-3.0, 3.0)]) {
        let leaf = tree.eval(&x).unwrap().leaf;
        for (id, p) in &polys {
            assert_eq!(p.contains(&x), *id == leaf);
        }
    }
}

#[test]
fn rule_counts_follow_regions() {
    let net = NetworkSpec::dense_from_weights(
        "relu",
        vec![(array![[1.0], [-1.0]], array![0.0, 0.5]), (array![[1.0, 1.0]], array![0.0])],
        &PwlActivation::relu(),
    )
    .unwrap();
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    let Node::Decision(root) = tree.node(tree.root) else { panic!() };
    let right = root.children[1].unwrap();
    let Node::Decision(d) = tree.node(right) else { panic!() };
    let leaf = d.children[0].unwrap();
    let p = path_constraints(&tree, leaf).unwrap();
    assert_eq!(p.rules.len(), 2);

    let net = NetworkSpec::dense_from_weights(
        "ht",
        vec![(array![[1.0]], array![0.0]), (array![[1.0]], array![0.0])],
        &PwlActivation::hard_tanh(),
    )
    .unwrap();
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    let counts: Vec<usize> =
        tree.leaf_ids().into_iter().map(|id| path_constraints(&tree, id).unwrap().rules.len()).collect();
    // lowest and highest regions are one-sided
    assert_eq!(counts, vec![1, 2, 1]);
}

#[test]
fn witnesses_route_to_their_leaf() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let net = dense_net(&mut rng, 2, &[3, 3], &PwlActivation::leaky_relu(0.3));
        let tree = build_tree(&net, TreeLimits::default()).unwrap();
        for id in tree.leaf_ids() {
            let p = path_constraints(&tree, id).unwrap();
            let check = is_feasible(&p);
            if check.verdict == Feasibility::Feasible {
                let w = check.witness.unwrap();
                assert!(p.contains(&w));
                assert!(nntree::prune::witness_margin(&p, &w) >= EPS_STRICT / 2.0);
                assert_eq!(tree.eval(&w).unwrap().leaf, id);
            }
        }
    }
}

#[test]
fn simplify_removes_implied_checks() {
    // unit 0 is positive iff x < -1.16, unit 1 iff x < 0.32
    let net = NetworkSpec::dense_from_weights(
        "nested",
        vec![(array![[-2.0], [-1.0]], array![-2.32, 0.32]), (array![[1.0, 3.0]], array![0.1])],
        &PwlActivation::relu(),
    )
    .unwrap();
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    assert_eq!(tree.decision_count(), 3);
    let (simple, removed) = simplify_rules_1d(&tree).unwrap();
    assert_eq!(removed, 1);
    assert_eq!(simple.decision_count(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for x in uniform_points(&mut rng, 10_000, &[(-4.0, 4.0)]) {
        let (a, b) = (tree.eval(&x).unwrap(), simple.eval(&x).unwrap());
        assert_eq!(a.output, b.output);
        assert_eq!(tree.leaf(a.leaf).unwrap().category, simple.leaf(b.leaf).unwrap().category);
    }
    for node in &simple.nodes {
        if let Node::Decision(d) = node {
            assert!(d.filter_row == [1.0, 0.0] || d.filter_row == [-1.0, 0.0]);
        }
    }
}

#[test]
fn zero_weight_rule_folds() {
    let net = NetworkSpec::dense_from_weights(
        "const",
        vec![(array![[0.0], [1.0]], array![0.5, 0.0]), (array![[1.0, 1.0]], array![0.0])],
        &PwlActivation::relu(),
    )
    .unwrap();
    let tree = build_tree(&net, TreeLimits::default()).unwrap();
    let (simple, _) = simplify_rules_1d(&tree).unwrap();
    assert_eq!(simple.leaf_count(), 2);
    for x in [-1.0, 0.0, 2.0] {
        assert_eq!(simple.eval(&[x]).unwrap().output, tree.eval(&[x]).unwrap().output);
    }
}

#[test]
fn realized_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = dense_net(&mut rng, 2, &[3, 2], &PwlActivation::relu());
    let mut tree = build_tree(&net, TreeLimits::default()).unwrap();
    mark_realized(&mut tree, &[vec![0.1, 0.2]]).unwrap();
    let counts: Vec<usize> = tree.leaf_ids().iter().map(|&id| tree.leaf(id).unwrap().realized_count).collect();
    assert_eq!(counts.iter().sum::<usize>(), 1);
    assert_eq!(counts.iter().filter(|&&c| c == 1).count(), 1);

    let data = uniform_points(&mut rng, 500, &[(-1.0, 1.0), (-1.0, 1.0)]);
    mark_realized(&mut tree, &data).unwrap();
    let total: usize = tree.leaf_ids().iter().map(|&id| tree.leaf(id).unwrap().realized_count).sum();
    assert_eq!(total, 500);
    let lossy = drop_unrealized(&tree).unwrap();
    assert!(lossy.lossy);
    for x in &data {
        assert_eq!(lossy.eval(x).unwrap().output, tree.eval(x).unwrap().output);
    }
}

#[test]
fn pruning_is_lossless_and_matches_census() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let acts = activations();
    let mut mismatches = Vec::new();
    for i in 0..12 {
        let d0 = 1 + i % 2;
        let domain = if d0 == 1 { vec![(-2.0, 2.0)] } else { vec![(-0.5, 0.5); 2] };
        let act = &acts[i % acts.len()];
        let hidden = rng.random_range(1..=2);
        let widths = random_widths(&mut rng, hidden, 3);
        let net = dense_net(&mut rng, d0, &widths, act);
        let tree = build_tree(&net, TreeLimits::default()).unwrap();
        let (pruned, report) = prune_infeasible(&tree, Some(domain.clone())).unwrap();
        assert!(pruned.node_count() <= tree.node_count());
        assert_eq!(report.leaves_after, pruned.leaf_count());
        for x in uniform_points(&mut rng, 2000, &domain) {
            let (a, b) = (tree.eval(&x).unwrap(), pruned.eval(&x).unwrap());
            assert_eq!(a.output, b.output);
            assert_eq!(tree.leaf(a.leaf).unwrap().category, pruned.leaf(b.leaf).unwrap().category);
        }
        let seen = census(&net, &domain, 1e-3);
        if seen.len() != pruned.leaf_count() {
            mismatches.push((i, seen.len(), pruned.leaf_count(), report.degenerate()));
        }
    }
    assert!(mismatches.is_empty(), "census mismatches (case, census, leaves, degenerate): {mismatches:?}");
}
