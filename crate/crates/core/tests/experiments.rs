mod common;

use std::fs;
use std::path::Path;

use nntree::experiments::{cost_report, gen_halfmoons, run_experiment, Dataset, Task, PARABOLA_DOMAIN};
use nntree::io::load_network;
use nntree::tree::read_tree;
use serde_json::Value;

use common::{census, Interpreter};

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn bundles_are_byte_reproducible() {
    for task in [Task::Parabola, Task::Halfmoon] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sa = run_experiment(task, a.path(), 3).unwrap();
        run_experiment(task, b.path(), 3).unwrap();
        let (fa, fb) = (files(a.path()), files(b.path()));
        assert_eq!(fa.len(), sa.files.len());
        for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
            assert_eq!(na, nb);
            assert!(ba == bb, "{task:?}: {na} differs between runs");
        }
    }
}

#[test]
fn parabola_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(Task::Parabola, dir.path(), 7).unwrap();
    assert!(s.target_met, "mse {}", s.metric);
    assert_eq!((s.depth, s.leaves), (4, 16));

    let net = load_network(dir.path().join("weights.json")).unwrap();
    let pruned = read_tree(dir.path().join("tree_pruned.json")).unwrap();
    let patterns = census(&net, &PARABOLA_DOMAIN, 1e-3);
    assert!(pruned.leaf_count() <= 16);
    assert_eq!(pruned.leaf_count(), patterns.len());
    println!("parabola: 16 -> {} leaves (seed {})", pruned.leaf_count(), s.init_seed);

    // every training point lands in exactly one leaf
    let data = Task::Parabola.dataset(7).unwrap();
    let realized: usize = pruned.leaf_ids().iter().map(|&id| pruned.leaf(id).unwrap().realized_count).sum();
    assert_eq!(realized, data.len());
    if s.unrealized_leaves == 0 {
        println!("parabola: every surviving leaf is realized by the training grid");
    } else {
        println!("parabola: {} feasible leaves see no training point", s.unrealized_leaves);
    }

    // curve.csv: tree and network agree on every row
    let curve = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    for line in curve.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[2] - f[3]).abs() <= 1e-12 * (1.0 + f[2].abs()), "{line}");
    }
}

#[test]
fn halfmoon_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_experiment(Task::Halfmoon, dir.path(), 7).unwrap();
    assert!(s.target_met, "accuracy {}", s.metric);
    let regions = fs::read_to_string(dir.path().join("regions.csv")).unwrap();
    let mut rows = 0;
    for line in regions.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[3], f[4], "class mismatch at {line}");
        rows += 1;
    }
    assert_eq!(rows, 251 * 176);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cost_convention"], "dense-row-v1");
    assert_eq!(manifest["leaves"], 16);
}

#[test]
fn tree_costs_match_step_counting_interpreter() {
    for task in [Task::Parabola, Task::Halfmoon] {
        let dir = tempfile::tempdir().unwrap();
        run_experiment(task, dir.path(), 11).unwrap();
        let net = load_network(dir.path().join("weights.json")).unwrap();
        let full = read_tree(dir.path().join("tree.json")).unwrap();
        let pruned = read_tree(dir.path().join("tree_pruned.json")).unwrap();
        let data = task.dataset(11).unwrap();
        let report = cost_report(task.name(), &net, &[("tree", &full), ("tree_pruned", &pruned)], &data).unwrap();

        for (model, file) in [("tree", "tree.json"), ("tree_pruned", "tree_pruned.json")] {
            let interp = Interpreter::load(&dir.path().join(file));
            let (mut cmp, mut ops) = (0, 0);
            for x in &data.inputs {
                let (out, c, o) = interp.run(x);
                let y = pruned.eval(x).unwrap().output;
                assert!(common::rel_dev(&out, &y) <= 1e-12);
                cmp += c;
                ops += o;
            }
            let n = data.len() as f64;
            let row = report.row(model).unwrap();
            assert_eq!(row.comparisons, cmp as f64 / n, "{task:?} {model}");
            assert_eq!(row.mult_adds, ops as f64 / n, "{task:?} {model}");
        }
        let nn = report.row("nn").unwrap();
        let expected = match task {
            Task::Parabola => (13, 4.0),
            Task::Halfmoon => (15, 5.0),
        };
        assert_eq!((nn.params, nn.comparisons), expected);
    }
}

#[test]
fn cost_report_csv_carries_reference_columns() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(Task::Parabola, dir.path(), 5).unwrap();
    let csv = fs::read_to_string(dir.path().join("cost_report.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# task=parabola convention=dense-row-v1"));
    assert_eq!(lines.next().unwrap(), "model,params,comparisons,mult_adds,ref_params,ref_comparisons,ref_mult_adds");
    let nn = lines.next().unwrap();
    assert!(nn.starts_with("nn,13,4,") && nn.ends_with(",13,4,16"), "{nn}");
    assert!(lines.all(|l| l.ends_with(",14,2.6,2")));
}

#[test]
fn halfmoon_datasets_differ_by_seed() {
    let a: Dataset = gen_halfmoons(100, 0.1, 1).unwrap();
    let b = gen_halfmoons(100, 0.1, 2).unwrap();
    assert_ne!(a.inputs, b.inputs);
    assert_eq!(a.targets, b.targets);
}
