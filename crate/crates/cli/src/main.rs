//! `nntree` command-line front end.
//!
//! Exit codes: 0 ok, 2 usage, 3 training failure, 4 resource limit,
//! 5 verification failure, 6 I/O or schema error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use nntree::experiments::{cost_report, run_experiment, train, train_task, training_metric, Architecture, Task};
use nntree::io::{check_verification, load_network, load_verification, save_network};
use nntree::prune::{prune_infeasible, simplify_rules_1d};
use nntree::tree::{
    build_tree, explain, export_dot, export_json, read_tree, write_tree, DecisionTree, DotOptions, TreeLimits,
    DEFAULT_MAX_LEAVES,
};
use nntree::{forward, Error, NetworkSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const USAGE: u8 = 2;
const TRAINING: u8 = 3;
const LIMIT: u8 = 4;
const VERIFICATION: u8 = 5;
const IO: u8 = 6;

/// Fallback box for inputs when neither `--domain` nor the tree gives one.
const DEFAULT_BOX: (f64, f64) = (-3.0, 3.0);

#[derive(Parser)]
#[command(name = "nntree", version, about = "Compile piecewise-linear networks into equivalent decision trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy-task network and write its weight file.
    Train {
        #[arg(long)]
        task: Task,
        /// Architecture such as `1-2-2-1:lrelu0.3` (default: the task's).
        #[arg(long, value_parser = parse_architecture)]
        arch: Option<Architecture>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Unfold a weight file into its decision tree.
    Compile {
        weights: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_LEAVES)]
        max_leaves: usize,
    },
    /// Check a tree against its network on random and grid inputs.
    Verify {
        weights: PathBuf,
        tree: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `lo,hi` per input axis (default: the tree's pruning box).
        #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
        domain: Vec<(f64, f64)>,
    },
    /// Remove leaves whose path polytope is empty.
    Prune {
        tree: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
        domain: Vec<(f64, f64)>,
        /// Per-leaf verdicts as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also drop implied checks on scalar-input trees.
        #[arg(long)]
        simplify: bool,
    },
    /// Cost report (NN vs tree) over a task's training data, as CSV.
    Cost {
        weights: PathBuf,
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_LEAVES)]
        max_leaves: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a tree as DOT, JSON or a CSV leaf table.
    Export {
        tree: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        max_nodes: usize,
    },
    /// Check a weight file against externally computed verification vectors.
    Check {
        weights: PathBuf,
        vectors: PathBuf,
        /// Overrides the tolerance stored with the vectors.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Evaluate a tree on one input.
    Eval {
        tree: PathBuf,
        /// Comma-separated input vector.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        x: Vec<f64>,
        /// Print the rule chain and the leaf's affine form.
        #[arg(long)]
        explain: bool,
    },
    /// Train, compile, prune and report a toy task into a bundle directory.
    Run {
        #[arg(long)]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Dot,
    Json,
    Csv,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } => TRAINING,
            Error::LeafBudget { .. } | Error::DepthBudget { .. } => LIMIT,
            Error::Io(_) | Error::Json(_) | Error::Schema { .. } => IO,
            _ => USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

fn parse_architecture(s: &str) -> Result<Architecture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
    if !(lo < hi) {
        return Err(format!("empty interval [{lo}, {hi}]"));
    }
    Ok((lo, hi))
}

/// File loads fail with the I/O/schema code whatever the cause.
fn load_weights(path: &Path) -> Result<NetworkSpec, Failure> {
    load_network(path).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn load_tree(path: &Path) -> Result<DecisionTree, Failure> {
    read_tree(path).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn domain_for(explicit: Vec<(f64, f64)>, tree: &DecisionTree) -> Result<Vec<(f64, f64)>, Failure> {
    let domain = if !explicit.is_empty() {
        explicit
    } else if let Some(d) = &tree.domain {
        d.clone()
    } else {
        vec![DEFAULT_BOX; tree.input_dim]
    };
    if domain.len() != tree.input_dim {
        return Err(Failure::new(
            USAGE,
            format!("--domain given for {} axes, the tree has {} inputs", domain.len(), tree.input_dim),
        ));
    }
    Ok(domain)
}

/// Regular grid with `per_axis` points along every axis, ends included.
fn grid(domain: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut points = vec![Vec::new()];
    for &(lo, hi) in domain {
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                (0..per_axis).map(move |i| {
                    let mut q = p.clone();
                    q.push(lo + (hi - lo) * i as f64 / (per_axis - 1) as f64);
                    q
                })
            })
            .collect();
    }
    points
}

fn cmd_train(
    task: Task,
    arch: Option<Architecture>,
    seed: u64,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    output: &Path,
) -> Result<(), Failure> {
    let data = task.dataset(seed)?;
    let (net, metric) = if arch.is_none() && epochs.is_none() && learning_rate.is_none() {
        let (outcome, init_seed, metric, runs) = train_task(task, &data, seed)?;
        println!("runs={runs} init_seed={init_seed}");
        let mut net = outcome.net;
        net.seed = init_seed;
        (net, metric)
    } else {
        let arch = match arch {
            Some(a) => a,
            None => task.architecture().parse()?,
        };
        let net = arch.init(task.name(), seed)?;
        if net.input_dim() != data.input_dim() {
            return Err(Failure::new(
                USAGE,
                format!("architecture takes {} inputs, task {} has {}", net.input_dim(), task.name(), data.input_dim()),
            ));
        }
        let mut cfg = task.train_config(seed);
        cfg.epochs = epochs.unwrap_or(cfg.epochs);
        cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
        let outcome = train(&net, &data, &cfg)?;
        let metric = training_metric(task, &outcome.net, &data)?;
        (outcome.net, metric)
    };
    save_network(&net, output).map_err(|e| Failure::new(IO, e.to_string()))?;
    let name = match task {
        Task::Parabola => "mse",
        Task::Halfmoon => "accuracy",
    };
    println!("{name}={metric}");
    Ok(())
}

fn cmd_compile(weights: &Path, output: &Path, max_leaves: usize) -> Result<(), Failure> {
    let net = load_weights(weights)?;
    let limits = TreeLimits { max_leaves, max_depth: None };
    let tree = build_tree(&net, limits).map_err(|e| match e {
        Error::LeafBudget { required, limit } => {
            let bits = required.log2();
            let power =
                if (bits - bits.round()).abs() < 1e-9 { format!("2^{}", bits.round()) } else { format!("2^{bits:.2}") };
            Failure::new(LIMIT, format!("tree needs {required} = {power} leaves, over --max-leaves {limit}"))
        }
        e => e.into(),
    })?;
    write_tree(&tree, output).map_err(|e| Failure::new(IO, e.to_string()))?;
    println!("d={} leaves={} k={}", tree.depth, tree.leaf_count(), tree.k);
    Ok(())
}

fn cmd_verify(
    weights: &Path,
    tree_path: &Path,
    samples: usize,
    tolerance: f64,
    seed: u64,
    domain: Vec<(f64, f64)>,
) -> Result<(), Failure> {
    let net = load_weights(weights)?;
    let tree = load_tree(tree_path)?;
    if net.input_dim() != tree.input_dim || net.output_dim() != tree.output_dim {
        return Err(Failure::new(IO, "weights and tree dimensions differ"));
    }
    let domain = domain_for(domain, &tree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Vec<f64>> =
        (0..samples).map(|_| domain.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()).collect();
    let per_axis = match domain.len() {
        1 => 1001,
        2 => 101,
        3 => 21,
        _ => 3,
    };
    if domain.len() <= 8 {
        inputs.extend(grid(&domain, per_axis));
    }

    let (mut worst, mut worst_x) = (0.0f64, None);
    let mut misrouted = 0;
    for x in &inputs {
        let (y, trace) = forward(&net, x)?;
        let e = match tree.eval(x) {
            Ok(e) => e,
            Err(err) => return Err(Failure::new(VERIFICATION, format!("input {x:?}: {err}"))),
        };
        let dev = y.iter().zip(&e.output).map(|(a, b)| (a - b).abs() / (1.0 + a.abs())).fold(0.0, f64::max);
        if dev > worst || worst_x.is_none() {
            worst = dev;
            worst_x = Some(x.clone());
        }
        if tree.leaf(e.leaf).is_some_and(|l| l.category != trace) {
            misrouted += 1;
        }
    }
    println!("checked={} max_deviation={worst:e} misrouted={misrouted}", inputs.len());
    if worst > tolerance || misrouted > 0 {
        return Err(Failure::new(
            VERIFICATION,
            format!("verification failed (tolerance {tolerance:e}); worst input {:?}", worst_x.unwrap_or_default()),
        ));
    }
    Ok(())
}

fn cmd_prune(
    tree_path: &Path,
    output: &Path,
    domain: Vec<(f64, f64)>,
    report_path: Option<&Path>,
    simplify: bool,
) -> Result<(), Failure> {
    let tree = load_tree(tree_path)?;
    let domain = if domain.is_empty() { None } else { Some(domain_for(domain, &tree)?) };
    let (mut pruned, report) = prune_infeasible(&tree, domain)?;
    let mut removed = 0;
    if simplify {
        (pruned, removed) = simplify_rules_1d(&pruned)?;
    }
    write_tree(&pruned, output).map_err(|e| Failure::new(IO, e.to_string()))?;
    if let Some(p) = report_path {
        write_text(p, &report.to_csv())?;
    }
    println!(
        "leaves {} -> {} nodes {} -> {} degenerate={} implied_rules_removed={removed}",
        report.leaves_before,
        pruned.leaf_count(),
        report.nodes_before,
        pruned.node_count(),
        report.degenerate()
    );
    Ok(())
}

fn cmd_cost(weights: &Path, task: Task, seed: u64, max_leaves: usize, output: Option<&Path>) -> Result<(), Failure> {
    let net = load_weights(weights)?;
    let data = task.dataset(seed)?;
    if net.input_dim() != data.input_dim() {
        return Err(Failure::new(
            USAGE,
            format!("weights take {} inputs, task {} has {}", net.input_dim(), task.name(), data.input_dim()),
        ));
    }
    let tree = build_tree(&net, TreeLimits { max_leaves, max_depth: None })?;
    let (pruned, _) = prune_infeasible(&tree, Some(task.domain()))?;
    let report = cost_report(task.name(), &net, &[("tree", &tree), ("tree_pruned", &pruned)], &data)?;
    match output {
        Some(p) => write_text(p, &report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn leaf_table(tree: &DecisionTree) -> String {
    let mut out = String::from("leaf,category,feasibility,realized,depth,map\n");
    tree.walk(|id, depth| {
        if let Some(l) = tree.leaf(id) {
            let map: Vec<String> = (0..tree.output_dim)
                .map(|r| l.final_map.row(r).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
                .collect();
            let _ = writeln!(
                out,
                "{id},{},{:?},{},{depth},{}",
                l.category.label(),
                l.feasible,
                l.realized_count,
                map.join(";")
            );
        }
    });
    out
}

fn cmd_export(tree_path: &Path, format: Format, output: Option<&Path>, max_nodes: usize) -> Result<(), Failure> {
    let tree = load_tree(tree_path)?;
    let text = match format {
        Format::Dot => export_dot(&tree, DotOptions { max_nodes, ..DotOptions::default() }),
        Format::Json => export_json(&tree),
        Format::Csv => leaf_table(&tree),
    };
    match output {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_check(weights: &Path, vectors: &Path, tolerance: Option<f64>) -> Result<(), Failure> {
    let net = load_weights(weights)?;
    let mut set = load_verification(vectors).map_err(|e| Failure::new(IO, format!("{}: {e}", vectors.display())))?;
    if let Some(t) = tolerance {
        set.tolerance = t;
    }
    let report = check_verification(&net, &set).map_err(|e| Failure::new(IO, e.to_string()))?;
    println!("checked={} max_deviation={:e} tolerance={:e}", report.checked, report.max_deviation, set.tolerance);
    if !report.passed {
        return Err(Failure::new(VERIFICATION, "verification vectors do not match"));
    }
    Ok(())
}

fn cmd_eval(tree_path: &Path, x: &[f64], explain_path: bool) -> Result<(), Failure> {
    let tree = load_tree(tree_path)?;
    let e = tree.eval(x)?;
    let leaf = tree.leaf(e.leaf).expect("evaluation ends at a leaf");
    println!("output={:?}", e.output);
    if tree.output_activation.is_some() {
        println!("prediction={:?} class={}", tree.predict(x)?, tree.classify(x)?);
    }
    println!("leaf={} category={}", e.leaf, leaf.category.label());
    println!("comparisons={} multiplies={} adds={}", e.cost.comparisons, e.cost.multiplies, e.cost.adds);
    if explain_path {
        print!("{}", explain(&tree, x)?);
    }
    Ok(())
}

fn cmd_run(task: Task, seed: u64, output: &Path) -> Result<(), Failure> {
    let s = run_experiment(task, output, seed)?;
    println!(
        "{} seed={} runs={} {}={} target_met={} leaves {} -> {} unrealized={}",
        task.name(),
        s.init_seed,
        s.runs,
        s.metric_name,
        s.metric,
        s.target_met,
        s.leaves,
        s.leaves_pruned,
        s.unrealized_leaves
    );
    if let Some(cost) = &s.cost {
        print!("{}", cost.to_csv());
    }
    Ok(())
}

/// Parses the command line; usage errors also print the usage line of the
/// subcommand involved.
fn parse_args() -> Result<Cli, ExitCode> {
    Cli::try_parse().map_err(|e| {
        let _ = e.print();
        if e.use_stderr() {
            let mut cmd = Cli::command();
            cmd.build();
            let sub = std::env::args().nth(1).and_then(|name| cmd.find_subcommand_mut(&name).cloned());
            let usage = match sub {
                Some(mut s) => s.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
        }
        ExitCode::from(e.exit_code() as u8)
    })
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    let result = match cli.command {
        Command::Train { task, arch, seed, epochs, learning_rate, output } => {
            cmd_train(task, arch, seed, epochs, learning_rate, &output)
        }
        Command::Compile { weights, output, max_leaves } => cmd_compile(&weights, &output, max_leaves),
        Command::Verify { weights, tree, samples, tolerance, seed, domain } => {
            cmd_verify(&weights, &tree, samples, tolerance, seed, domain)
        }
        Command::Prune { tree, output, domain, report, simplify } => {
            cmd_prune(&tree, &output, domain, report.as_deref(), simplify)
        }
        Command::Cost { weights, task, seed, max_leaves, output } => {
            cmd_cost(&weights, task, seed, max_leaves, output.as_deref())
        }
        Command::Export { tree, format, output, max_nodes } => cmd_export(&tree, format, output.as_deref(), max_nodes),
        Command::Check { weights, vectors, tolerance } => cmd_check(&weights, &vectors, tolerance),
        Command::Eval { tree, x, explain } => cmd_eval(&tree, &x, explain),
        Command::Run { task, seed, output } => cmd_run(task, seed, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
