//! The two toy studies: data, training, cost accounting and bundles.

mod bundle;
mod cost;

pub use bundle::{
    halfmoon_grid, run_experiment, train_task, training_metric, BundleSummary, Task, HALFMOON_DOMAIN, PARABOLA_DOMAIN,
};
pub use cost::{cost_report, nn_cost, tree_cost, CostReport, CostRow, REFERENCE_TABLE1};

use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activation::PwlActivation;
use crate::error::{Error, Result};
use crate::network::{forward, DenseLayer, InputShape, Layer, NetworkSpec, OutputActivation};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub seed: u64,
    pub inputs: Vec<Vec<f64>>,
    /// Regression targets, or class labels stored as `0.0` / `1.0`.
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, seed: u64, inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::dim("dataset targets", inputs.len(), targets.len()));
        }
        if let Some(first) = inputs.first() {
            if let Some(bad) = inputs.iter().find(|x| x.len() != first.len()) {
                return Err(Error::dim("dataset input", first.len(), bad.len()));
            }
        }
        Ok(Dataset { name: name.into(), seed, inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// `n` regularly spaced points on `[lo, hi]` (endpoints included) with
/// `y = x²`.
pub fn gen_parabola(n: usize, lo: f64, hi: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Invalid("the parabola grid needs at least two points".into()));
    }
    let xs: Vec<f64> =
        (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect();
    let targets = xs.iter().map(|x| vec![x * x]).collect();
    Dataset::new("parabola", 0, xs.into_iter().map(|x| vec![x]).collect(), targets)
}

/// Two interleaved unit half circles: the upper arc `(cos t, sin t)` is
/// class 0, the lower arc `(1 − cos t, 0.5 − sin t)` class 1, with `t`
/// evenly spaced on `[0, π]` and Gaussian noise of standard deviation
/// `noise` added to both coordinates.
pub fn gen_halfmoons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Invalid(format!("half-moon size must be even and positive, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Invalid(format!("invalid noise level {noise}")));
    }
    let half = n / 2;
    let t = |i: usize| if half == 1 { 0.0 } else { PI * i as f64 / (half - 1) as f64 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let mut jitter = |v: f64| if noise == 0.0 { v } else { v + normal.sample(&mut rng) };
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..half {
        let (x, y) = (t(i).cos(), t(i).sin());
        inputs.push(vec![jitter(x), jitter(y)]);
        targets.push(vec![0.0]);
    }
    for i in 0..half {
        let (x, y) = (1.0 - t(i).cos(), 0.5 - t(i).sin());
        inputs.push(vec![jitter(x), jitter(y)]);
        targets.push(vec![1.0]);
    }
    Dataset::new("halfmoon", seed, inputs, targets)
}

/// Dense architecture such as `1-2-2-1:lrelu0.3` or
/// `2-2-2-1:lrelu0.3:sigmoid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub activation: PwlActivation,
    pub output_activation: Option<OutputActivation>,
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Invalid(format!("architecture '{s}': {why}"));
        let mut parts = s.split(':');
        let widths = parts
            .next()
            .unwrap_or_default()
            .split('-')
            .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("widths must be positive integers joined by '-'"))?;
        if widths.len() < 2 {
            return Err(bad("need at least an input and an output width"));
        }
        let act = parts.next().unwrap_or("relu");
        let activation = match act {
            "relu" => PwlActivation::relu(),
            "htanh" | "hard_tanh" => PwlActivation::hard_tanh(),
            "identity" | "linear" => PwlActivation::identity(),
            a if a.starts_with("lrelu") => {
                let slope = a["lrelu".len()..].parse::<f64>().map_err(|_| bad("bad leaky slope"))?;
                PwlActivation::leaky_relu(slope)
            }
            _ => return Err(bad("unknown activation")),
        };
        let output_activation = match parts.next() {
            None => None,
            Some("sigmoid") => Some(OutputActivation::Sigmoid),
            Some(_) => return Err(bad("unknown output activation")),
        };
        if parts.next().is_some() {
            return Err(bad("too many ':' sections"));
        }
        Ok(Architecture { widths, activation, output_activation })
    }
}

impl Architecture {
    /// Glorot-uniform weights and zero biases.
    pub fn init(&self, name: &str, seed: u64) -> Result<NetworkSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for (i, pair) in self.widths.windows(2).enumerate() {
            let (d_in, d_out) = (pair[0], pair[1]);
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            let w = Array2::from_shape_fn((d_out, d_in), |_| rng.random_range(-limit..limit));
            let act = (i + 1 < n).then(|| self.activation.clone());
            layers.push(Layer::Dense(DenseLayer::new(w, Array1::zeros(d_out), act)?));
        }
        let mut net = NetworkSpec::new(name, InputShape::Flat(self.widths[0]), layers)?;
        net.seed = seed;
        net.output_activation = self.output_activation;
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean squared error on the raw output.
    Mse,
    /// Binary cross-entropy on the sigmoid of the raw output.
    Bce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: Loss,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: NetworkSpec,
    /// Mean training loss after every epoch.
    pub curve: Vec<f64>,
}

/// Per-layer `(weights, bias, activation)` views of a dense-only network.
fn dense_layers(net: &NetworkSpec) -> Result<Vec<&DenseLayer>> {
    net.layers
        .iter()
        .map(|l| match l {
            Layer::Dense(d) => Ok(d),
            _ => Err(Error::Unsupported("training supports dense layers only".into())),
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    OutputActivation::Sigmoid.apply(z)
}

fn sample_loss(loss: Loss, y: f64, t: f64) -> f64 {
    match loss {
        Loss::Mse => (y - t) * (y - t),
        // log(1 + e^y) − t·y, written to stay finite for large |y|
        Loss::Bce => y.max(0.0) - t * y + (-y.abs()).exp().ln_1p(),
    }
}

/// Mean loss over the dataset.
pub fn evaluate_loss(net: &NetworkSpec, data: &Dataset, loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let (y, _) = forward(net, x)?;
        total += y.iter().zip(t).map(|(y, t)| sample_loss(loss, *y, *t)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Fraction of points whose class (`output ≥ 0`) matches the label.
pub fn accuracy(net: &NetworkSpec, data: &Dataset) -> Result<f64> {
    let mut hits = 0;
    for (x, t) in data.inputs.iter().zip(&data.targets) {
        let (y, _) = forward(net, x)?;
        hits += usize::from(net.classify(&y) == t[0] as usize);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Plain mini-batch gradient descent. Gradients go through the slope of the
/// region each pre-activation falls in, so ties at breakpoints use the
/// region above.
pub fn train(net: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if data.input_dim() != net.input_dim() {
        return Err(Error::dim("training input", net.input_dim(), data.input_dim()));
    }
    let layers = dense_layers(net)?;
    let mut weights: Vec<Array2<f64>> = layers.iter().map(|l| l.weights.clone()).collect();
    let mut biases: Vec<Array1<f64>> = layers.iter().map(|l| l.bias.clone()).collect();
    let acts: Vec<Option<PwlActivation>> = layers.iter().map(|l| l.activation.clone()).collect();
    let n_layers = weights.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    // activations per layer (index 0 is the input) and slopes per layer
    let mut a: Vec<Vec<f64>> = vec![Vec::new(); n_layers + 1];
    let mut slopes: Vec<Vec<f64>> = vec![Vec::new(); n_layers];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut gw: Vec<Array2<f64>> = weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
            let mut gb: Vec<Array1<f64>> = biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                a[0].clone_from(&data.inputs[i]);
                for l in 0..n_layers {
                    let w = &weights[l];
                    let mut out = Vec::with_capacity(w.nrows());
                    let mut sl = Vec::with_capacity(w.nrows());
                    for r in 0..w.nrows() {
                        let z = w.row(r).iter().zip(&a[l]).map(|(p, q)| p * q).sum::<f64>() + biases[l][r];
                        match &acts[l] {
                            Some(act) => {
                                let reg = act.select(z);
                                out.push(reg.slope * z + reg.intercept);
                                sl.push(reg.slope);
                            }
                            None => {
                                out.push(z);
                                sl.push(1.0);
                            }
                        }
                    }
                    a[l + 1] = out;
                    slopes[l] = sl;
                }
                let target = &data.targets[i];
                let mut delta: Vec<f64> = a[n_layers]
                    .iter()
                    .zip(target)
                    .map(|(&y, &t)| {
                        epoch_loss += sample_loss(cfg.loss, y, t);
                        match cfg.loss {
                            Loss::Mse => 2.0 * (y - t) * scale,
                            Loss::Bce => (sigmoid(y) - t) * scale,
                        }
                    })
                    .collect();
                for l in (0..n_layers).rev() {
                    for (r, d) in delta.iter().enumerate() {
                        gb[l][r] += d;
                        for (c, v) in a[l].iter().enumerate() {
                            gw[l][[r, c]] += d * v;
                        }
                    }
                    if l > 0 {
                        let w = &weights[l];
                        delta = (0..w.ncols())
                            .map(|c| {
                                let back: f64 = delta.iter().enumerate().map(|(r, d)| w[[r, c]] * d).sum();
                                back * slopes[l - 1][c]
                            })
                            .collect();
                    }
                }
            }
            for l in 0..n_layers {
                weights[l].scaled_add(-cfg.learning_rate, &gw[l]);
                biases[l].scaled_add(-cfg.learning_rate, &gb[l]);
            }
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || weights.iter().any(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, reason: format!("loss became {mean}") });
        }
        curve.push(mean);
    }

    let mut trained = net.clone();
    for (l, layer) in trained.layers.iter_mut().enumerate() {
        if let Layer::Dense(d) = layer {
            d.weights = weights[l].clone();
            d.bias = biases[l].clone();
        }
    }
    Ok(TrainOutcome { net: trained, curve })
}
