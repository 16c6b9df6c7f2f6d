//! Weight files and verification vectors.
//!
//! Matrices are stored flat in row-major order next to their declared shape;
//! rows are always output units. Dense and conv layers without an
//! `activation` key (or with `null`) are linear.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::activation::PwlActivation;
use crate::conv::ConvLayer;
use crate::error::{Error, Result};
use crate::linalg::max_relative_deviation;
use crate::network::{forward, DenseLayer, InputShape, Layer, NetworkSpec, OutputActivation, ResidualBlock, RnnLayer};
use crate::rnn::RnnCell;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    version: u32,
    #[serde(default)]
    name: String,
    #[serde(default)]
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_dim: Option<usize>,
    /// `[channels, height, width]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_shape: Option<[usize; 3]>,
    #[serde(default)]
    output_activation: Option<OutputActivation>,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerEntry {
    Dense {
        shape: [usize; 2],
        weights: Vec<f64>,
        bias: Vec<f64>,
        #[serde(default)]
        activation: Option<PwlActivation>,
    },
    Residual {
        shape: [usize; 2],
        weights: Vec<f64>,
        activation: PwlActivation,
    },
    Conv {
        /// `[c_out, c_in, kernel_h, kernel_w]`
        shape: [usize; 4],
        weights: Vec<f64>,
        bias: Vec<f64>,
        stride: usize,
        padding: usize,
        #[serde(default)]
        activation: Option<PwlActivation>,
    },
    Rnn {
        /// `[hidden, input, output]`
        shape: [usize; 3],
        w_rec: Vec<f64>,
        u_in: Vec<f64>,
        v_out: Vec<f64>,
        bias: Vec<f64>,
        steps: usize,
        activation: PwlActivation,
    },
}

fn matrix(at: &str, field: &str, shape: [usize; 2], data: Vec<f64>) -> Result<Array2<f64>> {
    let n = data.len();
    Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|_| {
        Error::schema(format!("{at}.{field}"), format!("{n} values do not fill a {}×{} matrix", shape[0], shape[1]))
    })
}

fn activation(at: &str, act: Option<PwlActivation>) -> Result<Option<PwlActivation>> {
    match act {
        None => Ok(None),
        Some(a) => a.validate().map(|_| Some(a)).map_err(|e| Error::schema(format!("{at}.activation"), e.to_string())),
    }
}

fn check_finite(at: &str, field: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::schema(format!("{at}.{field}[{i}]"), "not a finite number")),
        None => Ok(()),
    }
}

fn layer_from_entry(i: usize, entry: LayerEntry) -> Result<Layer> {
    let at = format!("layers[{i}]");
    let at = at.as_str();
    Ok(match entry {
        LayerEntry::Dense { shape, weights, bias, activation: act } => {
            check_finite(at, "weights", &weights)?;
            check_finite(at, "bias", &bias)?;
            let w = matrix(at, "weights", shape, weights)?;
            if bias.len() != shape[0] {
                return Err(Error::schema(
                    format!("{at}.bias"),
                    format!("length {} but shape declares {} outputs", bias.len(), shape[0]),
                ));
            }
            Layer::Dense(DenseLayer::new(w, Array1::from(bias), activation(at, act)?)?)
        }
        LayerEntry::Residual { shape, weights, activation: act } => {
            check_finite(at, "weights", &weights)?;
            if shape[0] != shape[1] {
                return Err(Error::schema(format!("{at}.shape"), "residual weights must be square"));
            }
            let w = matrix(at, "weights", shape, weights)?;
            let act = activation(at, Some(act))?.expect("present");
            Layer::Residual(ResidualBlock::new(w, act)?)
        }
        LayerEntry::Conv { shape, weights, bias, stride, padding, activation: act } => {
            check_finite(at, "weights", &weights)?;
            check_finite(at, "bias", &bias)?;
            let n = weights.len();
            let kernel = Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), weights).map_err(|_| {
                Error::schema(format!("{at}.weights"), format!("{n} values do not fill a {shape:?} kernel"))
            })?;
            let conv = ConvLayer::new(kernel, Array1::from(bias), stride, padding, activation(at, act)?)
                .map_err(|e| Error::schema(at, e.to_string()))?;
            Layer::Conv(conv)
        }
        LayerEntry::Rnn { shape: [h, d, o], w_rec, u_in, v_out, bias, steps, activation: act } => {
            for (field, data) in [("w_rec", &w_rec), ("u_in", &u_in), ("v_out", &v_out), ("bias", &bias)] {
                check_finite(at, field, data)?;
            }
            let cell = RnnCell::new(
                matrix(at, "w_rec", [h, h], w_rec)?,
                matrix(at, "u_in", [h, d], u_in)?,
                matrix(at, "v_out", [o, h], v_out)?,
                Array1::from(bias),
                activation(at, Some(act))?.expect("present"),
            )
            .map_err(|e| Error::schema(at, e.to_string()))?;
            Layer::Rnn(RnnLayer { cell, steps })
        }
    })
}

fn flat2(m: &Array2<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

fn entry_from_layer(layer: &Layer) -> LayerEntry {
    match layer {
        Layer::Dense(d) => LayerEntry::Dense {
            shape: [d.weights.nrows(), d.weights.ncols()],
            weights: flat2(&d.weights),
            bias: d.bias.to_vec(),
            activation: d.activation.clone(),
        },
        Layer::Residual(r) => LayerEntry::Residual {
            shape: [r.width(), r.width()],
            weights: flat2(&r.weights),
            activation: r.activation.clone(),
        },
        Layer::Conv(c) => {
            let (a, b, m, n) = c.kernel.dim();
            LayerEntry::Conv {
                shape: [a, b, m, n],
                weights: c.kernel.iter().copied().collect(),
                bias: c.bias.to_vec(),
                stride: c.stride,
                padding: c.padding,
                activation: c.activation.clone(),
            }
        }
        Layer::Rnn(r) => LayerEntry::Rnn {
            shape: [r.cell.hidden(), r.cell.input_dim(), r.cell.output_dim()],
            w_rec: flat2(&r.cell.w_rec),
            u_in: flat2(&r.cell.u_in),
            v_out: flat2(&r.cell.v_out),
            bias: r.cell.bias_h.to_vec(),
            steps: r.steps,
            activation: r.cell.activation.clone(),
        },
    }
}

/// Parses a weight document.
pub fn parse_network(text: &str) -> Result<NetworkSpec> {
    let file: WeightFile = serde_json::from_str(text)
        .map_err(|e| Error::schema(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    if file.version != WEIGHT_FORMAT_VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported weight format {} (expected {WEIGHT_FORMAT_VERSION})", file.version),
        ));
    }
    let input = match (file.input_dim, file.input_shape) {
        (Some(d), None) => InputShape::Flat(d),
        (None, Some([channels, height, width])) => InputShape::Image { channels, height, width },
        (Some(_), Some(_)) => {
            return Err(Error::schema("input_shape", "give either input_dim or input_shape, not both"))
        }
        (None, None) => return Err(Error::schema("input_dim", "missing input_dim or input_shape")),
    };
    let layers =
        file.layers.into_iter().enumerate().map(|(i, e)| layer_from_entry(i, e)).collect::<Result<Vec<_>>>()?;
    let mut net = NetworkSpec::new(file.name, input, layers)?;
    net.seed = file.seed;
    net.output_activation = file.output_activation;
    Ok(net)
}

/// Serializes a network; equal networks always produce identical text.
pub fn network_to_string(net: &NetworkSpec) -> String {
    let (input_dim, input_shape) = match net.input {
        InputShape::Flat(d) => (Some(d), None),
        InputShape::Image { channels, height, width } => (None, Some([channels, height, width])),
    };
    let file = WeightFile {
        version: WEIGHT_FORMAT_VERSION,
        name: net.name.clone(),
        seed: net.seed,
        input_dim,
        input_shape,
        output_activation: net.output_activation,
        layers: net.layers.iter().map(entry_from_layer).collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("weights serialize");
    text.push('\n');
    text
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    parse_network(&fs::read_to_string(path)?)
}

pub fn save_network(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, network_to_string(net))?;
    Ok(())
}

/// Inputs with outputs computed by an external framework. Outputs are raw
/// network outputs, before any output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSet {
    #[serde(default)]
    pub source: String,
    pub tolerance: f64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub checked: usize,
    /// Largest `|ours − theirs| / (1 + |theirs|)`.
    pub max_deviation: f64,
    pub passed: bool,
}

pub fn parse_verification(text: &str) -> Result<VerificationSet> {
    let set: VerificationSet = serde_json::from_str(text)
        .map_err(|e| Error::schema(format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
    if set.inputs.len() != set.outputs.len() {
        return Err(Error::schema("outputs", format!("{} outputs for {} inputs", set.outputs.len(), set.inputs.len())));
    }
    if !(set.tolerance.is_finite() && set.tolerance > 0.0) {
        return Err(Error::schema("tolerance", "must be a positive number"));
    }
    Ok(set)
}

pub fn load_verification(path: impl AsRef<Path>) -> Result<VerificationSet> {
    parse_verification(&fs::read_to_string(path)?)
}

/// Runs every verification input through [`forward`].
pub fn check_verification(net: &NetworkSpec, set: &VerificationSet) -> Result<VerificationReport> {
    let mut max_deviation: f64 = 0.0;
    for (i, (x, expected)) in set.inputs.iter().zip(&set.outputs).enumerate() {
        let (y, _) = forward(net, x).map_err(|e| Error::schema(format!("inputs[{i}]"), e.to_string()))?;
        if y.len() != expected.len() {
            return Err(Error::schema(
                format!("outputs[{i}]"),
                format!("{} values but the network produces {}", expected.len(), y.len()),
            ));
        }
        max_deviation = max_deviation.max(max_relative_deviation(&y, expected));
    }
    Ok(VerificationReport { checked: set.inputs.len(), max_deviation, passed: max_deviation <= set.tolerance })
}
