use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use super::{
    accuracy, cost_report, evaluate_loss, gen_halfmoons, gen_parabola, train, Architecture, CostReport, Dataset, Loss,
    TrainConfig, TrainOutcome,
};
use crate::effective::COST_CONVENTION;
use crate::error::{Error, Result};
use crate::io::network_to_string;
use crate::network::{forward, NetworkSpec};
use crate::prune::{mark_realized, prune_infeasible, simplify_rules_1d, EPS_STRICT};
use crate::tree::{build_tree, export_dot, export_json, DecisionTree, DotOptions, Feasibility, TreeLimits};

pub const PARABOLA_DOMAIN: [(f64, f64); 1] = [(-2.5, 2.5)];
/// Covers the noisy moons with margin; also the pruning box.
pub const HALFMOON_DOMAIN: [(f64, f64); 2] = [(-2.0, 3.0), (-1.5, 2.0)];
const HALFMOON_GRID_STEP: f64 = 0.02;
const PARABOLA_MSE_TARGET: f64 = 0.05;
const HALFMOON_ACCURACY_TARGET: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Parabola,
    Halfmoon,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parabola" => Ok(Task::Parabola),
            "halfmoon" => Ok(Task::Halfmoon),
            _ => Err(Error::Invalid(format!("unknown task '{s}' (parabola or halfmoon)"))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Parabola => "parabola",
            Task::Halfmoon => "halfmoon",
        }
    }

    pub fn architecture(self) -> &'static str {
        match self {
            Task::Parabola => "1-2-2-1:lrelu0.3",
            Task::Halfmoon => "2-2-2-1:lrelu0.3:sigmoid",
        }
    }

    pub fn dataset(self, seed: u64) -> Result<Dataset> {
        match self {
            Task::Parabola => gen_parabola(5000, PARABOLA_DOMAIN[0].0, PARABOLA_DOMAIN[0].1),
            Task::Halfmoon => gen_halfmoons(1000, 0.1, seed),
        }
    }

    pub fn train_config(self, seed: u64) -> TrainConfig {
        match self {
            Task::Parabola => TrainConfig { epochs: 300, batch_size: 32, learning_rate: 0.01, seed, loss: Loss::Mse },
            Task::Halfmoon => TrainConfig { epochs: 300, batch_size: 32, learning_rate: 0.3, seed, loss: Loss::Bce },
        }
    }

    pub fn domain(self) -> Vec<(f64, f64)> {
        match self {
            Task::Parabola => PARABOLA_DOMAIN.to_vec(),
            Task::Halfmoon => HALFMOON_DOMAIN.to_vec(),
        }
    }

    /// Restarts tried before giving up on the training target.
    pub const RESTARTS: u64 = 8;
}

/// Training-set metric: MSE for the parabola, accuracy for the moons.
pub fn training_metric(task: Task, net: &NetworkSpec, data: &Dataset) -> Result<f64> {
    match task {
        Task::Parabola => evaluate_loss(net, data, Loss::Mse),
        Task::Halfmoon => accuracy(net, data),
    }
}

fn meets_target(task: Task, metric: f64) -> bool {
    match task {
        Task::Parabola => metric <= PARABOLA_MSE_TARGET,
        Task::Halfmoon => metric >= HALFMOON_ACCURACY_TARGET,
    }
}

fn better(task: Task, a: f64, b: f64) -> bool {
    match task {
        Task::Parabola => a < b,
        Task::Halfmoon => a > b,
    }
}

/// Trains from `seed`, `seed + 1`, … until a run meets the task target (or
/// the restarts run out, keeping the best). Returns the outcome, the seed
/// used, the metric and the number of runs.
pub fn train_task(task: Task, data: &Dataset, seed: u64) -> Result<(TrainOutcome, u64, f64, u64)> {
    let arch: Architecture = task.architecture().parse()?;
    let mut best: Option<(TrainOutcome, u64, f64)> = None;
    for r in 0..Task::RESTARTS {
        let s = seed.wrapping_add(r);
        let net = arch.init(task.name(), s)?;
        let outcome = match train(&net, data, &task.train_config(s)) {
            Ok(o) => o,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        let metric = training_metric(task, &outcome.net, data)?;
        if meets_target(task, metric) {
            return Ok((outcome, s, metric, r + 1));
        }
        if best.as_ref().is_none_or(|b| better(task, metric, b.2)) {
            best = Some((outcome, s, metric));
        }
    }
    let (outcome, s, metric) = best.ok_or(Error::Divergence { epoch: 0, reason: "every restart diverged".into() })?;
    Ok((outcome, s, metric, Task::RESTARTS))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleSummary {
    pub task: Task,
    pub seed: u64,
    pub init_seed: u64,
    pub runs: u64,
    pub architecture: String,
    pub train_config: TrainConfig,
    /// `mse` for the parabola, `accuracy` for the moons.
    pub metric_name: String,
    pub metric: f64,
    pub target_met: bool,
    pub samples: usize,
    pub depth: usize,
    pub leaves: usize,
    pub leaves_pruned: usize,
    pub nodes: usize,
    pub nodes_pruned: usize,
    pub degenerate_leaves: usize,
    /// Surviving leaves no training point reaches.
    pub unrealized_leaves: usize,
    pub domain: Vec<(f64, f64)>,
    pub eps_strict: f64,
    pub cost_convention: String,
    pub files: Vec<String>,
    #[serde(skip)]
    pub cost: Option<CostReport>,
}

/// Trains the task network and writes the full artifact bundle to
/// `out_dir`.
pub fn run_experiment(task: Task, out_dir: impl AsRef<Path>, seed: u64) -> Result<BundleSummary> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let data = task.dataset(seed)?;
    let (outcome, init_seed, metric, runs) = train_task(task, &data, seed)?;
    let mut net = outcome.net;
    net.seed = init_seed;

    let tree = build_tree(&net, TreeLimits::default())?;
    let domain = task.domain();
    let (mut pruned, report) = prune_infeasible(&tree, Some(domain.clone()))?;
    if task == Task::Parabola {
        pruned = simplify_rules_1d(&pruned)?.0;
    }
    mark_realized(&mut pruned, &data.inputs)?;
    let unrealized_leaves = pruned
        .leaf_ids()
        .into_iter()
        .filter(|&id| {
            let l = pruned.leaf(id).expect("leaf");
            l.realized_count == 0 && l.feasible == Feasibility::Feasible
        })
        .count();
    let cost = cost_report(task.name(), &net, &[("tree", &tree), ("tree_pruned", &pruned)], &data)?;

    let mut files = Vec::new();
    let mut write = |name: &str, text: String| -> Result<()> {
        fs::write(out.join(name), text)?;
        files.push(name.to_string());
        Ok(())
    };
    write("weights.json", network_to_string(&net))?;
    write("tree.json", export_json(&tree))?;
    write("tree_pruned.json", export_json(&pruned))?;
    write("tree.dot", export_dot(&pruned, DotOptions::default()))?;
    write("prune_report.csv", report.to_csv())?;
    write("cost_report.csv", cost.to_csv())?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in outcome.curve.iter().enumerate() {
        let _ = writeln!(curve, "{e},{l}");
    }
    write("train_loss.csv", curve)?;
    match task {
        Task::Parabola => write("curve.csv", parabola_curve(&net, &pruned, &data)?)?,
        Task::Halfmoon => write("regions.csv", halfmoon_regions(&net, &pruned)?)?,
    }

    let summary = BundleSummary {
        task,
        seed,
        init_seed,
        runs,
        architecture: task.architecture().into(),
        train_config: task.train_config(init_seed),
        metric_name: match task {
            Task::Parabola => "mse".into(),
            Task::Halfmoon => "accuracy".into(),
        },
        metric,
        target_met: meets_target(task, metric),
        samples: data.len(),
        depth: tree.depth,
        leaves: tree.leaf_count(),
        leaves_pruned: pruned.leaf_count(),
        nodes: tree.node_count(),
        nodes_pruned: pruned.node_count(),
        degenerate_leaves: report.degenerate(),
        unrealized_leaves,
        domain,
        eps_strict: EPS_STRICT,
        cost_convention: COST_CONVENTION.into(),
        files: {
            let mut f = files.clone();
            f.push("manifest.json".into());
            f
        },
        cost: Some(cost),
    };
    let mut manifest = serde_json::to_string_pretty(&summary).expect("manifest serializes");
    manifest.push('\n');
    fs::write(out.join("manifest.json"), manifest)?;
    Ok(summary)
}

fn parabola_curve(net: &NetworkSpec, tree: &DecisionTree, data: &Dataset) -> Result<String> {
    let mut out = String::from("x,y,nn,tree,leaf\n");
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let (y, _) = forward(net, x)?;
        let e = tree.eval(x)?;
        let _ = writeln!(out, "{},{},{},{},{}", x[0], t[0], y[0], e.output[0], e.leaf);
    }
    Ok(out)
}

/// Grid over [`HALFMOON_DOMAIN`] with the leaf and class of every point.
pub fn halfmoon_grid() -> Vec<[f64; 2]> {
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let n = ((hi - lo) / HALFMOON_GRID_STEP).round() as usize;
        (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
    };
    let (xs, ys) = (axis(HALFMOON_DOMAIN[0]), axis(HALFMOON_DOMAIN[1]));
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect()
}

fn halfmoon_regions(net: &NetworkSpec, tree: &DecisionTree) -> Result<String> {
    let mut out = String::from("x0,x1,leaf,tree_class,nn_class\n");
    for p in halfmoon_grid() {
        let e = tree.eval(&p)?;
        let (y, _) = forward(net, &p)?;
        let tree_class = usize::from(e.output[0] >= 0.0);
        let _ = writeln!(out, "{},{},{},{},{}", p[0], p[1], e.leaf, tree_class, net.classify(&y));
    }
    Ok(out)
}
