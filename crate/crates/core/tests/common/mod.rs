#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use nntree::conv::ConvLayer;
use nntree::rnn::RnnCell;
use nntree::{
    forward, quantize_activation, CategorizationVector, DenseLayer, InputShape, Layer, NetworkSpec, PwlActivation,
    ResidualBlock, RnnLayer,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

pub fn activations() -> Vec<PwlActivation> {
    vec![PwlActivation::relu(), PwlActivation::leaky_relu(0.3), PwlActivation::hard_tanh(), quantized_tanh_4()]
}

/// Two interpolation segments on [-3, 3] plus flat tails: four regions.
pub fn quantized_tanh_4() -> PwlActivation {
    let (act, _) = quantize_activation(f64::tanh, 2, -3.0, 3.0).unwrap();
    assert_eq!(act.regions(), 4);
    act
}

pub fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let n = Normal::new(0.0, scale).unwrap();
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

pub fn vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Array1<f64> {
    let n = Normal::new(0.0, scale).unwrap();
    Array1::from_shape_fn(len, |_| n.sample(rng))
}

/// Dense net `d0 → widths… → 1` with Gaussian weights.
pub fn dense_net(rng: &mut ChaCha8Rng, d0: usize, widths: &[usize], act: &PwlActivation) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut prev = d0;
    for &w in widths.iter().chain(std::iter::once(&1)) {
        layers.push((matrix(rng, w, prev, 1.0), vector(rng, w, 0.5)));
        prev = w;
    }
    NetworkSpec::dense_from_weights("random", layers, act).unwrap()
}

pub fn random_widths(rng: &mut ChaCha8Rng, hidden: usize, max_width: usize) -> Vec<usize> {
    (0..hidden).map(|_| rng.random_range(1..=max_width)).collect()
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, domain: &[(f64, f64)]) -> Vec<Vec<f64>> {
    (0..n).map(|_| domain.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect()).collect()
}

/// Grid points with spacing `step` covering `domain` (both ends included).
pub fn grid(domain: &[(f64, f64)], step: f64) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = domain
        .iter()
        .map(|&(lo, hi)| {
            let n = ((hi - lo) / step).round() as usize;
            (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Calls `f` on every grid point with spacing `step` over `domain`.
pub fn for_each_grid_point(domain: &[(f64, f64)], step: f64, mut f: impl FnMut(&[f64])) {
    let counts: Vec<usize> = domain.iter().map(|&(lo, hi)| ((hi - lo) / step).round() as usize).collect();
    let mut idx = vec![0usize; domain.len()];
    let mut x = vec![0.0; domain.len()];
    loop {
        for (k, &(lo, hi)) in domain.iter().enumerate() {
            x[k] = lo + (hi - lo) * idx[k] as f64 / counts[k] as f64;
        }
        f(&x);
        let mut k = 0;
        loop {
            if k == idx.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] <= counts[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Distinct activation patterns `forward` visits on a grid.
pub fn census(net: &NetworkSpec, domain: &[(f64, f64)], step: f64) -> BTreeSet<CategorizationVector> {
    let mut seen = BTreeSet::new();
    for_each_grid_point(domain, step, |x| {
        seen.insert(forward(net, x).unwrap().1);
    });
    seen
}

/// Largest `|a − b| / (1 + |b|)`.
pub fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / (1.0 + y.abs())).fold(0.0, f64::max)
}

pub fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// `dense (linear) → 1–3 residual blocks → dense` to a scalar.
pub fn residual_net(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let acts = activations();
    let d0 = rng.random_range(1..=3);
    let w = rng.random_range(1..=4);
    let mut layers = vec![Layer::Dense(DenseLayer::new(matrix(rng, w, d0, 1.0), vector(rng, w, 0.5), None).unwrap())];
    for _ in 0..rng.random_range(1..=3) {
        let act = pick(rng, &acts).clone();
        layers.push(Layer::Residual(ResidualBlock::new(matrix(rng, w, w, 0.5), act).unwrap()));
    }
    layers.push(Layer::Dense(DenseLayer::new(matrix(rng, 1, w, 1.0), vector(rng, 1, 0.5), None).unwrap()));
    NetworkSpec::new("residual", InputShape::Flat(d0), layers).unwrap()
}

/// One or two activated conv layers on an input of at most 6×6, then a
/// dense readout.
pub fn conv_net(rng: &mut ChaCha8Rng) -> NetworkSpec {
    let acts = activations();
    let channels = rng.random_range(1..=2);
    let (height, width) = (rng.random_range(3..=6), rng.random_range(3..=6));
    let (mut c, mut h, mut w) = (channels, height, width);
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let padding = rng.random_range(0..=1);
        let m = rng.random_range(1..=3.min(h + 2 * padding));
        let n = rng.random_range(1..=3.min(w + 2 * padding));
        let stride = rng.random_range(1..=2);
        let co = rng.random_range(1..=2);
        let normal = Normal::new(0.0, 0.7).unwrap();
        let kernel = Array4::from_shape_fn((co, c, m, n), |_| normal.sample(rng));
        let layer =
            ConvLayer::new(kernel, vector(rng, co, 0.3), stride, padding, Some(pick(rng, &acts).clone())).unwrap();
        (h, w) = layer.output_size(h, w).unwrap();
        c = co;
        layers.push(Layer::Conv(layer));
    }
    let flat = c * h * w;
    layers.push(Layer::Dense(DenseLayer::new(matrix(rng, 1, flat, 0.7), vector(rng, 1, 0.3), None).unwrap()));
    NetworkSpec::new("conv", InputShape::Image { channels, height, width }, layers).unwrap()
}

/// Elman cell with hidden size ≤ 3, unrolled over `steps`.
pub fn rnn_net(rng: &mut ChaCha8Rng, steps: usize) -> NetworkSpec {
    let acts = activations();
    let (h, d) = (rng.random_range(1..=3), rng.random_range(1..=2));
    let cell = RnnCell::new(
        matrix(rng, h, h, 0.6),
        matrix(rng, h, d, 1.0),
        matrix(rng, 1, h, 1.0),
        vector(rng, h, 0.3),
        pick(rng, &acts).clone(),
    )
    .unwrap();
    NetworkSpec::new("rnn", InputShape::Flat(h + steps * d), vec![Layer::Rnn(RnnLayer { cell, steps })]).unwrap()
}

/// Walks an exported tree file without touching the library evaluator and
/// counts every step it takes: one comparison per breakpoint test, `d`
/// multiplies and `d` adds per row applied.
pub struct Interpreter {
    d: usize,
    root: u64,
    nodes: HashMap<u64, (Vec<f64>, Vec<f64>, Vec<Option<u64>>)>,
    leaves: HashMap<u64, Vec<Vec<f64>>>,
    threshold: bool,
}

impl Interpreter {
    pub fn load(path: &Path) -> Self {
        let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        let floats = |v: &Value| v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<f64>>();
        let nodes = v["nodes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|n| {
                let children = n["children"].as_array().unwrap().iter().map(Value::as_u64).collect();
                (n["id"].as_u64().unwrap(), (floats(&n["filter_row"]), floats(&n["breakpoints"]), children))
            })
            .collect();
        let leaves = v["leaves"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| (l["id"].as_u64().unwrap(), l["final_map"].as_array().unwrap().iter().map(floats).collect()))
            .collect();
        Interpreter {
            d: v["input_dim"].as_u64().unwrap() as usize,
            root: v["root"].as_u64().unwrap(),
            nodes,
            leaves,
            threshold: !v["output_activation"].is_null(),
        }
    }

    /// `(outputs, comparisons, mult_adds)`
    pub fn run(&self, x: &[f64]) -> (Vec<f64>, usize, usize) {
        assert_eq!(x.len(), self.d);
        let row = |r: &[f64]| r[..self.d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + r[self.d];
        let (mut cmp, mut ops) = (0, 0);
        let mut id = self.root;
        loop {
            if let Some(map) = self.leaves.get(&id) {
                let out: Vec<f64> = map[..map.len() - 1].iter().map(|r| row(r)).collect();
                ops += 2 * self.d * out.len();
                return (out, cmp + usize::from(self.threshold), ops);
            }
            let (filter, breakpoints, children) = &self.nodes[&id];
            let z = row(filter);
            ops += 2 * self.d;
            let mut region = breakpoints.len();
            for (j, t) in breakpoints.iter().enumerate() {
                cmp += 1;
                if z < *t {
                    region = j;
                    break;
                }
            }
            id = children[region].expect("sample routed into a pruned branch");
        }
    }
}
