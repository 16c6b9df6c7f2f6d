//! Network description and the reference forward pass.
//!
//! Weight matrices use the "rows are output units" convention throughout:
//! a dense layer computes `W x + b` with `W` of shape `d_out × d_in`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::activation::PwlActivation;
use crate::conv::ConvLayer;
use crate::error::{Error, Result};
use crate::linalg::{self, augment};
use crate::rnn::RnnCell;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Option<PwlActivation>,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Option<PwlActivation>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::dim("dense bias", weights.nrows(), bias.len()));
        }
        Ok(DenseLayer { weights, bias, activation })
    }

    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .into_iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// `r ↦ r + W σ(r)`; the activation acts on the block input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub weights: Array2<f64>,
    pub activation: PwlActivation,
}

impl ResidualBlock {
    pub fn new(weights: Array2<f64>, activation: PwlActivation) -> Result<Self> {
        if weights.nrows() != weights.ncols() {
            return Err(Error::dim("residual weights (square)", weights.nrows(), weights.ncols()));
        }
        Ok(ResidualBlock { weights, activation })
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }
}

/// A recurrent cell unrolled over a fixed number of steps. The network input
/// is `[h0; x(1); …; x(T)]` and the output is `o(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLayer {
    pub cell: RnnCell,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Residual(ResidualBlock),
    Conv(ConvLayer),
    Rnn(RnnLayer),
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Residual(_) => "residual",
            Layer::Conv(_) => "conv",
            Layer::Rnn(_) => "rnn",
        }
    }

    pub fn activation(&self) -> Option<&PwlActivation> {
        match self {
            Layer::Dense(d) => d.activation.as_ref(),
            Layer::Residual(r) => Some(&r.activation),
            Layer::Conv(c) => c.activation.as_ref(),
            Layer::Rnn(r) => Some(&r.cell.activation),
        }
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            Layer::Residual(r) => r.weights.len(),
            Layer::Conv(c) => c.kernel.len() + c.bias.len(),
            Layer::Rnn(r) => r.cell.w_rec.len() + r.cell.u_in.len() + r.cell.v_out.len() + r.cell.bias_h.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputShape {
    Flat(usize),
    Image { channels: usize, height: usize, width: usize },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat(d) => d,
            InputShape::Image { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activation applied to the network output outside the tree equivalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
}

impl OutputActivation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub seed: u64,
    pub input: InputShape,
    pub layers: Vec<Layer>,
    pub output_activation: Option<OutputActivation>,
}

/// Region indices chosen at every decision stage, in evaluation order.
///
/// A decision stage is one activated layer (or one residual block, or one
/// time step of an unrolled recurrent cell). Conv stages are flattened
/// channel-major: `(channel, row, column)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategorizationVector {
    pub patterns: Vec<Vec<usize>>,
}

pub type ActivationTrace = CategorizationVector;

impl CategorizationVector {
    pub fn new(patterns: Vec<Vec<usize>>) -> Self {
        CategorizationVector { patterns }
    }

    /// Total number of unit decisions.
    pub fn len(&self) -> usize {
        self.patterns.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<usize> {
        self.patterns.iter().flatten().copied().collect()
    }

    /// Compact label such as `01|10`.
    pub fn label(&self) -> String {
        self.patterns
            .iter()
            .map(|p| {
                p.iter()
                    .map(|r| if *r < 10 { char::from(b'0' + *r as u8).to_string() } else { format!("({r})") })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input: InputShape, layers: Vec<Layer>) -> Result<Self> {
        let net = NetworkSpec { name: name.into(), seed: 0, input, layers, output_activation: None };
        net.validate()?;
        Ok(net)
    }

    /// Fully connected network from a list of layer widths; every layer but
    /// the last uses `activation`.
    pub fn dense_from_weights(
        name: impl Into<String>,
        weights: Vec<(Array2<f64>, Array1<f64>)>,
        activation: &PwlActivation,
    ) -> Result<Self> {
        let n = weights.len();
        let input = weights.first().map(|(w, _)| w.ncols()).ok_or_else(|| Error::Network("no layers".into()))?;
        let layers = weights
            .into_iter()
            .enumerate()
            .map(|(i, (w, b))| {
                let act = (i + 1 < n).then(|| activation.clone());
                DenseLayer::new(w, b, act).map(Layer::Dense)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, InputShape::Flat(input), layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input.len()
    }

    pub fn output_dim(&self) -> usize {
        let mut shape = self.input;
        for layer in &self.layers {
            shape = match layer_output_shape(layer, shape) {
                Ok(s) => s,
                Err(_) => return 0,
            };
        }
        shape.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn is_dense_only(&self) -> bool {
        self.layers.iter().all(|l| matches!(l, Layer::Dense(_) | Layer::Residual(_)))
    }

    /// Checks shapes chain, activations are valid, and unactivated layers only
    /// appear where they are allowed.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Network("network has no layers".into()));
        }
        if self.input.is_empty() {
            return Err(Error::Network("input dimension must be positive".into()));
        }
        let n = self.layers.len();
        let mut shape = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(act) = layer.activation() {
                act.validate()?;
            }
            let consumed = layer_input_len(layer);
            if let Some(consumed) = consumed {
                if consumed != shape.len() {
                    return Err(if i == 0 {
                        Error::dim("network input", consumed, shape.len())
                    } else {
                        Error::Chain { first: i - 1, second: i, produced: shape.len(), consumed }
                    });
                }
            }
            match layer {
                Layer::Dense(d) => {
                    if d.bias.len() != d.d_out() {
                        return Err(Error::dim(format!("layer {i} bias"), d.d_out(), d.bias.len()));
                    }
                    let next_is_residual = matches!(self.layers.get(i + 1), Some(Layer::Residual(_)));
                    if d.activation.is_none() && i + 1 != n && !next_is_residual {
                        return Err(Error::Network(format!(
                            "layer {i} has no activation but is neither final nor followed by a residual block"
                        )));
                    }
                }
                Layer::Residual(r) => {
                    if r.weights.nrows() != r.weights.ncols() {
                        return Err(Error::Network(format!("residual block {i} weights must be square")));
                    }
                }
                Layer::Conv(c) => {
                    c.validate()?;
                    let next_is_residual = matches!(self.layers.get(i + 1), Some(Layer::Residual(_)));
                    if c.activation.is_none() && i + 1 != n && !next_is_residual {
                        return Err(Error::Network(format!("conv layer {i} has no activation but is not final")));
                    }
                }
                Layer::Rnn(r) => {
                    if n != 1 {
                        return Err(Error::Unsupported(
                            "a recurrent layer must be the only layer of its network".into(),
                        ));
                    }
                    r.cell.validate()?;
                    if r.steps == 0 {
                        return Err(Error::Network("recurrent horizon must be at least 1".into()));
                    }
                }
            }
            shape = layer_output_shape(layer, shape).map_err(|e| match e {
                Error::Dimension { .. } | Error::Network(_) => Error::Network(format!("layer {i}: {e}")),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Threshold class from a raw output: positive pre-activation ⇔ class 1
    /// (equivalently sigmoid ≥ 0.5).
    pub fn classify(&self, output: &[f64]) -> usize {
        usize::from(output.first().copied().unwrap_or(0.0) >= 0.0)
    }
}

fn layer_input_len(layer: &Layer) -> Option<usize> {
    match layer {
        Layer::Dense(d) => Some(d.d_in()),
        Layer::Residual(r) => Some(r.width()),
        Layer::Conv(_) => None,
        Layer::Rnn(r) => Some(r.cell.hidden() + r.steps * r.cell.input_dim()),
    }
}

fn layer_output_shape(layer: &Layer, input: InputShape) -> Result<InputShape> {
    Ok(match layer {
        Layer::Dense(d) => InputShape::Flat(d.d_out()),
        Layer::Residual(r) => InputShape::Flat(r.width()),
        Layer::Conv(c) => {
            let InputShape::Image { channels, height, width } = input else {
                return Err(Error::Network("conv layer needs an image-shaped input".into()));
            };
            if channels != c.in_channels() {
                return Err(Error::dim("conv input channels", c.in_channels(), channels));
            }
            let (h, w) = c.output_size(height, width)?;
            InputShape::Image { channels: c.out_channels(), height: h, width: w }
        }
        Layer::Rnn(r) => InputShape::Flat(r.cell.output_dim()),
    })
}

/// Reference layer-by-layer evaluation. Returns the raw output (before any
/// [`OutputActivation`]) and the region index of every activation unit.
pub fn forward(net: &NetworkSpec, x0: &[f64]) -> Result<(Vec<f64>, ActivationTrace)> {
    if x0.len() != net.input_dim() {
        return Err(Error::dim("forward input", net.input_dim(), x0.len()));
    }
    let mut trace = Vec::new();
    let mut x = x0.to_vec();
    let mut shape = net.input;
    for layer in &net.layers {
        match layer {
            Layer::Dense(d) => {
                let z = d.pre_activation(&x);
                x = match &d.activation {
                    Some(act) => activate(act, &z, &mut trace),
                    None => z,
                };
            }
            Layer::Residual(r) => {
                let s = activate(&r.activation, &x, &mut trace);
                x = x
                    .iter()
                    .zip(r.weights.rows())
                    .map(|(v, row)| v + row.iter().zip(&s).map(|(w, a)| w * a).sum::<f64>())
                    .collect();
            }
            Layer::Conv(c) => {
                let InputShape::Image { height, width, .. } = shape else {
                    return Err(Error::Network("conv layer needs an image-shaped input".into()));
                };
                let z = c.forward_direct(&x, height, width)?;
                x = match &c.activation {
                    Some(act) => activate(act, &z, &mut trace),
                    None => z,
                };
            }
            Layer::Rnn(r) => {
                let h = r.cell.hidden();
                let d = r.cell.input_dim();
                let inputs: Vec<Vec<f64>> = (0..r.steps).map(|t| x[h + t * d..h + (t + 1) * d].to_vec()).collect();
                let run = crate::rnn::rnn_forward(&r.cell, &x[..h], &inputs)?;
                trace.extend(run.patterns);
                x = run.outputs.last().cloned().unwrap_or_default();
            }
        }
        shape = layer_output_shape(layer, shape)?;
    }
    Ok((x, CategorizationVector::new(trace)))
}

fn activate(act: &PwlActivation, z: &[f64], trace: &mut Vec<Vec<usize>>) -> Vec<f64> {
    let mut pattern = Vec::with_capacity(z.len());
    let out = z
        .iter()
        .map(|&v| {
            let r = act.select(v);
            pattern.push(r.index);
            r.slope * v + r.intercept
        })
        .collect();
    trace.push(pattern);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormPosition {
    /// Normalization applied to the layer input.
    Pre,
    /// Normalization applied to the layer output.
    Post,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
}

impl NormalizationSpec {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// `(gain, offset)` such that `norm(v) = gain ⊙ v + offset`.
    pub fn affine(&self) -> Result<(Array1<f64>, Array1<f64>)> {
        let n = self.scale.len();
        for (what, len) in [
            ("shift", self.shift.len()),
            ("running_mean", self.running_mean.len()),
            ("running_var", self.running_var.len()),
        ] {
            if len != n {
                return Err(Error::dim(format!("normalization {what}"), n, len));
            }
        }
        let mut gain = Array1::zeros(n);
        let mut offset = Array1::zeros(n);
        for i in 0..n {
            let denom = self.running_var[i] + self.epsilon;
            if !(denom > 0.0) {
                return Err(Error::Normalization(format!(
                    "running_var + epsilon must be positive (unit {i}: {denom})"
                )));
            }
            gain[i] = self.scale[i] / denom.sqrt();
            offset[i] = self.shift[i] - gain[i] * self.running_mean[i];
        }
        Ok((gain, offset))
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (g, h) = self.affine()?;
        if v.len() != g.len() {
            return Err(Error::dim("normalization input", g.len(), v.len()));
        }
        Ok(v.iter().zip(g.iter().zip(&h)).map(|(x, (g, h))| g * x + h).collect())
    }
}

/// Folds an inference-time normalization into the adjacent dense layer.
pub fn fold_normalization(layer: &DenseLayer, norm: &NormalizationSpec, position: NormPosition) -> Result<DenseLayer> {
    let (gain, offset) = norm.affine()?;
    let mut weights = layer.weights.clone();
    let mut bias = layer.bias.clone();
    match position {
        NormPosition::Post => {
            if gain.len() != layer.d_out() {
                return Err(Error::dim("post-normalization width", layer.d_out(), gain.len()));
            }
            for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
                row *= gain[i];
                bias[i] = gain[i] * layer.bias[i] + offset[i];
            }
        }
        NormPosition::Pre => {
            if gain.len() != layer.d_in() {
                return Err(Error::dim("pre-normalization width", layer.d_in(), gain.len()));
            }
            for (j, mut col) in weights.columns_mut().into_iter().enumerate() {
                col *= gain[j];
            }
            bias = &layer.bias + &layer.weights.dot(&offset);
        }
    }
    Ok(DenseLayer { weights, bias, activation: layer.activation.clone() })
}

/// One layer of a [`HomogeneousNetwork`]: an augmented matrix whose last
/// row is `[0 … 0 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousLayer {
    pub matrix: Array2<f64>,
    pub activation: Option<PwlActivation>,
    pub residual: bool,
}

/// Bias-free network over `[x0; 1]`. The trailing coordinate is never
/// activated, so it stays exactly 1 through every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousNetwork {
    pub input_dim: usize,
    pub layers: Vec<HomogeneousLayer>,
}

impl HomogeneousNetwork {
    pub fn forward(&self, x_aug: &[f64]) -> Result<Vec<f64>> {
        if x_aug.len() != self.input_dim + 1 {
            return Err(Error::dim("homogeneous input", self.input_dim + 1, x_aug.len()));
        }
        let mut x = x_aug.to_vec();
        for layer in &self.layers {
            if layer.residual {
                let n = x.len() - 1;
                let mut s = x.clone();
                if let Some(act) = &layer.activation {
                    for v in &mut s[..n] {
                        *v = act.apply(*v);
                    }
                }
                let update = linalg::apply(layer.matrix.view(), &s);
                for i in 0..n {
                    x[i] += update[i];
                }
            } else {
                x = linalg::apply(layer.matrix.view(), &x);
                if let Some(act) = &layer.activation {
                    let n = x.len() - 1;
                    for v in &mut x[..n] {
                        *v = act.apply(*v);
                    }
                }
            }
        }
        Ok(x)
    }
}

/// Rewrites a dense/residual network over the homogeneous input `[x0; 1]`.
pub fn augment_bias(net: &NetworkSpec) -> Result<HomogeneousNetwork> {
    let layers = net
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Dense(d) => Ok(HomogeneousLayer {
                matrix: augment(d.weights.view(), d.bias.view()),
                activation: d.activation.clone(),
                residual: false,
            }),
            Layer::Residual(r) => {
                let n = r.width();
                let mut m = Array2::zeros((n + 1, n + 1));
                m.slice_mut(ndarray::s![..n, ..n]).assign(&r.weights);
                Ok(HomogeneousLayer { matrix: m, activation: Some(r.activation.clone()), residual: true })
            }
            other => Err(Error::Unsupported(format!(
                "bias augmentation handles dense and residual layers, found {}",
                other.kind()
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HomogeneousNetwork { input_dim: net.input_dim(), layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn relu_pair() -> NetworkSpec {
        NetworkSpec::dense_from_weights(
            "pair",
            vec![(array![[1.0], [-1.0]], array![0.0, 0.0]), (array![[1.0, 1.0]], array![0.0])],
            &PwlActivation::relu(),
        )
        .unwrap()
    }

    #[test]
    fn linear_single_layer() {
        let net = NetworkSpec::new(
            "lin",
            InputShape::Flat(1),
            vec![Layer::Dense(DenseLayer::new(array![[2.0]], array![0.0], None).unwrap())],
        )
        .unwrap();
        let (y, trace) = forward(&net, &[3.0]).unwrap();
        assert_eq!(y, vec![6.0]);
        assert!(trace.is_empty());
    }

    #[test]
    fn relu_hand_example() {
        let (y, trace) = forward(&relu_pair(), &[2.0]).unwrap();
        assert_eq!(y, vec![2.0]);
        assert_eq!(trace.patterns, vec![vec![1, 0]]);
    }

    #[test]
    fn forward_rejects_wrong_input() {
        assert!(matches!(forward(&relu_pair(), &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn chain_error_names_layers() {
        let err = NetworkSpec::dense_from_weights(
            "bad",
            vec![
                (Array2::zeros((2, 3)), Array1::zeros(2)),
                (Array2::zeros((2, 2)), Array1::zeros(2)),
                (Array2::zeros((1, 3)), Array1::zeros(1)),
            ],
            &PwlActivation::relu(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Chain { first: 1, second: 2, .. }), "{err}");
    }

    #[test]
    fn hidden_layer_without_activation_rejected() {
        let l = |r, c| Layer::Dense(DenseLayer::new(Array2::zeros((r, c)), Array1::zeros(r), None).unwrap());
        assert!(NetworkSpec::new("x", InputShape::Flat(2), vec![l(2, 2), l(1, 2)]).is_err());
    }

    #[test]
    fn fold_identity_norm() {
        let layer = DenseLayer::new(array![[1.0, 2.0], [3.0, 4.0]], array![0.5, -0.5], None).unwrap();
        let norm = NormalizationSpec {
            scale: array![1.0, 1.0],
            shift: array![0.0, 0.0],
            running_mean: array![0.0, 0.0],
            running_var: array![1.0, 1.0],
            epsilon: 0.0,
        };
        for pos in [NormPosition::Pre, NormPosition::Post] {
            assert_eq!(fold_normalization(&layer, &norm, pos).unwrap(), layer);
        }
    }

    #[test]
    fn fold_post_closed_form() {
        let layer = DenseLayer::new(array![[1.0]], array![0.0], None).unwrap();
        let norm = NormalizationSpec {
            scale: array![2.0],
            shift: array![1.0],
            running_mean: array![0.0],
            running_var: array![1.0],
            epsilon: 0.0,
        };
        let folded = fold_normalization(&layer, &norm, NormPosition::Post).unwrap();
        assert_eq!(folded.weights, array![[2.0]]);
        assert_eq!(folded.bias, array![1.0]);
    }

    #[test]
    fn fold_rejects_bad_norms() {
        let layer = DenseLayer::new(array![[1.0]], array![0.0], None).unwrap();
        let mut norm = NormalizationSpec {
            scale: array![1.0],
            shift: array![0.0],
            running_mean: array![0.0],
            running_var: array![-1.0],
            epsilon: 0.5,
        };
        assert!(matches!(fold_normalization(&layer, &norm, NormPosition::Post), Err(Error::Normalization(_))));
        norm.running_var = array![1.0, 1.0];
        assert!(fold_normalization(&layer, &norm, NormPosition::Post).is_err());
    }

    #[test]
    fn augmented_closed_form() {
        let net = NetworkSpec::new(
            "aff",
            InputShape::Flat(1),
            vec![Layer::Dense(DenseLayer::new(array![[3.0]], array![5.0], None).unwrap())],
        )
        .unwrap();
        let aug = augment_bias(&net).unwrap();
        assert_eq!(aug.layers[0].matrix, array![[3.0, 5.0], [0.0, 1.0]]);
        assert_eq!(aug.forward(&[2.0, 1.0]).unwrap(), vec![11.0, 1.0]);
    }

    #[test]
    fn augmented_keeps_homogeneous_unit_under_quantized_activation() {
        let (q, _) = crate::activation::quantize_activation(f64::tanh, 2, -3.0, 3.0).unwrap();
        let net = NetworkSpec::dense_from_weights(
            "q",
            vec![(array![[0.7], [-1.3]], array![0.1, 0.2]), (array![[1.0, -2.0]], array![0.3])],
            &q,
        )
        .unwrap();
        let aug = augment_bias(&net).unwrap();
        for x in [-2.0, -0.1, 0.0, 0.4, 3.0] {
            let (y, _) = forward(&net, &[x]).unwrap();
            let ya = aug.forward(&[x, 1.0]).unwrap();
            assert_eq!(ya[1], 1.0);
            assert!((ya[0] - y[0]).abs() <= 1e-12 * (1.0 + y[0].abs()));
        }
    }
}
