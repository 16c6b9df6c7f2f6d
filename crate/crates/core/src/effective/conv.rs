//! Convolutional nets go through the same machinery after lowering each
//! layer to its dense operator at the declared input size. What remains
//! conv-specific is the bookkeeping: reshaping patterns into feature maps and
//! restricting effective rows to their receptive field.

use ndarray::Array3;

use super::{effective_matrix_in, lazy_eval_in, Program};
use crate::error::{Error, Result};
use crate::network::{CategorizationVector, InputShape, Layer, NetworkSpec};

const RECEPTIVE_FIELD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Copy> FeatureMap<T> {
    fn from_shape(shape: InputShape, data: Vec<T>) -> Self {
        let (channels, height, width) = match shape {
            InputShape::Flat(n) => (n, 1, 1),
            InputShape::Image { channels, height, width } => (channels, height, width),
        };
        FeatureMap { channels, height, width, data }
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> T {
        self.data[(channel * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEvaluation {
    pub output: FeatureMap<f64>,
    /// Region index per output channel per spatial position, one map per
    /// activated layer.
    pub categorizations: Vec<FeatureMap<usize>>,
    pub category: CategorizationVector,
}

/// Output shape of every layer, in order.
fn layer_shapes(net: &NetworkSpec) -> Result<Vec<InputShape>> {
    let mut shape = net.input;
    let mut out = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        shape = match layer {
            Layer::Dense(d) => InputShape::Flat(d.d_out()),
            Layer::Residual(r) => InputShape::Flat(r.width()),
            Layer::Conv(c) => {
                let InputShape::Image { height, width, .. } = shape else {
                    return Err(Error::Network("conv layer needs an image-shaped input".into()));
                };
                let (h, w) = c.output_size(height, width)?;
                InputShape::Image { channels: c.out_channels(), height: h, width: w }
            }
            Layer::Rnn(r) => InputShape::Flat(r.cell.output_dim()),
        };
        out.push(shape);
    }
    Ok(out)
}

pub fn conv_lazy_eval(net: &NetworkSpec, f0: &[f64]) -> Result<ConvEvaluation> {
    let program = Program::compile(net)?;
    let shapes = layer_shapes(net)?;
    let lazy = lazy_eval_in(&program, f0)?;
    let categorizations = program
        .stages
        .iter()
        .zip(&lazy.category.patterns)
        .map(|(stage, p)| FeatureMap::from_shape(shapes[stage.layer_index], p.clone()))
        .collect();
    Ok(ConvEvaluation {
        output: FeatureMap::from_shape(*shapes.last().expect("validated"), lazy.output),
        categorizations,
        category: lazy.category,
    })
}

/// Effective linear map from an input patch to one pre-activation value.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveKernel {
    /// Inclusive input rows of the receptive field.
    pub rows: (usize, usize),
    /// Inclusive input columns of the receptive field.
    pub cols: (usize, usize),
    /// `C_0 × rows × cols`
    pub weights: Array3<f64>,
    pub bias: f64,
    /// Largest magnitude found outside the receptive field.
    pub outside_max: f64,
}

impl EffectiveKernel {
    /// Applies the kernel to the matching patch of a full input map.
    pub fn apply(&self, f0: &[f64], height: usize, width: usize) -> f64 {
        let (c0, h, w) = self.weights.dim();
        let mut acc = 0.0;
        for c in 0..c0 {
            for dy in 0..h {
                for dx in 0..w {
                    let y = self.rows.0 + dy;
                    let x = self.cols.0 + dx;
                    acc += self.weights[[c, dy, dx]] * f0[(c * height + y) * width + x];
                }
            }
        }
        acc + self.bias
    }
}

/// Receptive field of output position `(y, x)` of layer `layer`, in input
/// coordinates. `None` when the field is empty (the window only covers
/// padding); the whole input when a non-conv layer is involved.
fn receptive_field(
    net: &NetworkSpec,
    layer: usize,
    y: usize,
    x: usize,
) -> Result<Option<((usize, usize), (usize, usize))>> {
    let InputShape::Image { height, width, .. } = net.input else {
        return Err(Error::Unsupported("receptive fields need an image-shaped input".into()));
    };
    let full = Some(((0, height - 1), (0, width - 1)));
    if net.layers[..=layer].iter().any(|l| !matches!(l, Layer::Conv(_))) {
        return Ok(full);
    }
    // input size of each conv layer
    let mut sizes = Vec::with_capacity(layer + 1);
    let (mut h, mut w) = (height, width);
    for l in &net.layers[..=layer] {
        let Layer::Conv(c) = l else { unreachable!() };
        sizes.push((h, w));
        (h, w) = c.output_size(h, w)?;
    }
    let (mut rows, mut cols) = ((y as isize, y as isize), (x as isize, x as isize));
    for (l, &(h_in, w_in)) in net.layers[..=layer].iter().zip(&sizes).rev() {
        let Layer::Conv(c) = l else { unreachable!() };
        let (m, n) = c.kernel_size();
        let (s, p) = (c.stride as isize, c.padding as isize);
        let back = |(lo, hi): (isize, isize), k: usize, len: usize| {
            let lo = (lo * s - p).max(0);
            let hi = (hi * s - p + k as isize - 1).min(len as isize - 1);
            (lo, hi)
        };
        rows = back(rows, m, h_in);
        cols = back(cols, n, w_in);
        if rows.0 > rows.1 || cols.0 > cols.1 {
            return Ok(None);
        }
    }
    Ok(Some(((rows.0 as usize, rows.1 as usize), (cols.0 as usize, cols.1 as usize))))
}

/// Effective kernel at `(channel, y, x)` of the vector decided at `stage`
/// (or of the output when `stage == stages.len()`).
pub fn conv_effective_kernel(
    net: &NetworkSpec,
    c: &CategorizationVector,
    stage: usize,
    position: (usize, usize, usize),
) -> Result<EffectiveKernel> {
    let InputShape::Image { channels: c0, height, width } = net.input else {
        return Err(Error::Unsupported("effective kernels need an image-shaped input".into()));
    };
    let program = Program::compile(net)?;
    let shapes = layer_shapes(net)?;
    let layer = program.stages.get(stage).map_or(net.layers.len() - 1, |s| s.layer_index);
    let shape = FeatureMap::<f64>::from_shape(shapes[layer], Vec::new());
    let (ch, y, x) = position;
    if ch >= shape.channels || y >= shape.height || x >= shape.width {
        return Err(Error::Invalid(format!(
            "position {position:?} outside {}×{}×{} map",
            shape.channels, shape.height, shape.width
        )));
    }
    let eff = effective_matrix_in(&program, c, stage)?;
    let row = eff.matrix.row((ch * shape.height + y) * shape.width + x);
    let d0 = c0 * height * width;
    let field = receptive_field(net, layer, y, x)?;
    let ((r0, r1), (q0, q1)) = field.unwrap_or(((0, 0), (0, 0)));
    let (fh, fw) = if field.is_some() { (r1 - r0 + 1, q1 - q0 + 1) } else { (0, 0) };
    let mut weights = Array3::zeros((c0, fh, fw));
    let mut outside_max: f64 = 0.0;
    for ci in 0..c0 {
        for iy in 0..height {
            for ix in 0..width {
                let v = row[(ci * height + iy) * width + ix];
                let inside = field.is_some() && (r0..=r1).contains(&iy) && (q0..=q1).contains(&ix);
                if inside {
                    weights[[ci, iy - r0, ix - q0]] = v;
                } else {
                    outside_max = outside_max.max(v.abs());
                }
            }
        }
    }
    if outside_max > RECEPTIVE_FIELD_TOL {
        return Err(Error::Invalid(format!("effective row has weight {outside_max:e} outside its receptive field")));
    }
    Ok(EffectiveKernel { rows: (r0, r1), cols: (q0, q1), weights, bias: row[d0], outside_max })
}
