//! Effective-matrix algebra.
//!
//! A network is compiled into a [`Program`]: an initial augmented map from
//! `[x0; 1]` to the first decision vector, followed by one [`Stage`] per
//! group of activation decisions. Once a stage's pattern is known, its
//! [`Stage::advance`] left-multiplies the current map by a single
//! pattern-dependent matrix, so a map is never rebuilt from scratch.
//!
//! Every map produced here keeps the homogeneous last row `[0 … 0 1]`.

mod conv;

pub use conv::{conv_effective_kernel, conv_lazy_eval, ConvEvaluation, EffectiveKernel, FeatureMap};

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::activation::PwlActivation;
use crate::error::{Error, Result};
use crate::linalg::{self, augment, homogeneous};
use crate::network::{CategorizationVector, InputShape, Layer, NetworkSpec};

/// Operation tallies of one evaluation. One comparison per breakpoint test
/// executed; one multiply and one add per non-homogeneous entry of every
/// effective row applied to the augmented input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCost {
    pub comparisons: usize,
    pub multiplies: usize,
    pub adds: usize,
}

impl PathCost {
    pub fn mult_adds(&self) -> usize {
        self.multiplies + self.adds
    }

    pub(crate) fn row(&mut self, input_dim: usize) {
        self.multiplies += input_dim;
        self.adds += input_dim;
    }
}

impl std::ops::AddAssign for PathCost {
    fn add_assign(&mut self, rhs: Self) {
        self.comparisons += rhs.comparisons;
        self.multiplies += rhs.multiplies;
        self.adds += rhs.adds;
    }
}

/// Identifier stamped into reports that use [`PathCost`].
pub const COST_CONVENTION: &str = "dense-row-v1";

#[derive(Debug, Clone, PartialEq)]
pub enum StageKind {
    /// Plain activation: `v ↦ σ(v)`.
    Activate,
    /// Residual update `r ↦ r + W σ(r)` with the given square `W`.
    Residual(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub activation: PwlActivation,
    pub width: usize,
    pub kind: StageKind,
    /// Fixed augmented map applied after the pattern-dependent part.
    pub post: Option<Array2<f64>>,
    /// Added after `post` (recurrent input injection); zero last row.
    pub inject: Option<Array2<f64>>,
    /// Index of the network layer this stage came from.
    pub layer_index: usize,
}

impl Stage {
    pub fn regions(&self) -> usize {
        self.activation.regions()
    }

    /// Pattern-dependent matrix `T(a)` so the next map is `T(a) · map`
    /// (plus the injection, when present).
    pub fn transition(&self, pattern: &[usize]) -> Result<Array2<f64>> {
        if pattern.len() != self.width {
            return Err(Error::dim("activation pattern", self.width, pattern.len()));
        }
        match &self.kind {
            StageKind::Activate => match &self.post {
                Some(post) => mask_augmented(post.view(), pattern, &self.activation),
                None => slope_matrix(pattern, &self.activation),
            },
            StageKind::Residual(w) => {
                let step = residual_step_matrix(w.view(), pattern, &self.activation)?;
                Ok(match &self.post {
                    Some(post) => post.dot(&step),
                    None => step,
                })
            }
        }
    }

    pub fn advance(&self, pattern: &[usize], map: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut next = self.transition(pattern)?.dot(&map);
        if let Some(inject) = &self.inject {
            next += inject;
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub input_dim: usize,
    pub output_dim: usize,
    pub initial: Array2<f64>,
    pub stages: Vec<Stage>,
}

impl Program {
    pub fn compile(net: &NetworkSpec) -> Result<Self> {
        net.validate()?;
        if let [Layer::Rnn(r)] = net.layers.as_slice() {
            return compile_rnn(r, net.input_dim());
        }
        let d0 = net.input_dim();
        let mut builder = Builder {
            initial: None,
            stages: Vec::new(),
            pending: linalg::augmented_identity(d0),
            pending_is_identity: true,
        };
        let mut shape = net.input;
        for (index, layer) in net.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    builder.push_linear(augment(d.weights.view(), d.bias.view()));
                    shape = InputShape::Flat(d.d_out());
                    if let Some(act) = &d.activation {
                        builder.push_stage(StageKind::Activate, act.clone(), d.d_out(), index);
                    }
                }
                Layer::Conv(c) => {
                    let InputShape::Image { height, width, .. } = shape else {
                        return Err(Error::Network("conv layer needs an image-shaped input".into()));
                    };
                    let (dense, bias) = c.lower(height, width)?;
                    let (ho, wo) = c.output_size(height, width)?;
                    let rows = dense.nrows();
                    builder.push_linear(augment(dense.view(), bias.view()));
                    shape = InputShape::Image { channels: c.out_channels(), height: ho, width: wo };
                    if let Some(act) = &c.activation {
                        builder.push_stage(StageKind::Activate, act.clone(), rows, index);
                    }
                }
                Layer::Residual(r) => {
                    builder.push_stage(StageKind::Residual(r.weights.clone()), r.activation.clone(), r.width(), index);
                    shape = InputShape::Flat(r.width());
                }
                Layer::Rnn(_) => {
                    return Err(Error::Unsupported("a recurrent layer must be the only layer of its network".into()))
                }
            }
        }
        Ok(builder.finish(d0, shape.len()))
    }

    /// Number of augmented rows of the map entering stage `i`, minus one.
    pub fn stage_input_width(&self, i: usize) -> usize {
        self.stages.get(i).map_or(self.output_dim, |s| s.width)
    }

    /// Total unit decisions along any path (`Σ m_i`), counting only
    /// activations with more than one region.
    pub fn depth(&self) -> usize {
        self.stages.iter().filter(|s| s.regions() > 1).map(|s| s.width).sum()
    }

    /// `Π k_i^{m_i}`, as a float so huge trees can be reported.
    pub fn leaf_count(&self) -> f64 {
        self.stages.iter().map(|s| (s.regions() as f64).powi(s.width as i32)).product()
    }

    pub fn max_regions(&self) -> usize {
        self.stages.iter().map(Stage::regions).max().unwrap_or(1)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.width).collect()
    }

    fn check_category(&self, c: &CategorizationVector, needed: usize) -> Result<()> {
        if c.patterns.len() < needed {
            return Err(Error::PatternCount { expected: needed, actual: c.patterns.len() });
        }
        for (stage, pattern) in self.stages.iter().zip(&c.patterns).take(needed) {
            if pattern.len() != stage.width {
                return Err(Error::dim("activation pattern", stage.width, pattern.len()));
            }
            if let Some(&bad) = pattern.iter().find(|&&r| r >= stage.regions()) {
                return Err(Error::Region { region: bad, regions: stage.regions() });
            }
        }
        Ok(())
    }
}

struct Builder {
    initial: Option<Array2<f64>>,
    stages: Vec<Stage>,
    pending: Array2<f64>,
    pending_is_identity: bool,
}

impl Builder {
    fn push_linear(&mut self, m: Array2<f64>) {
        self.pending = if self.pending_is_identity { m } else { m.dot(&self.pending) };
        self.pending_is_identity = false;
    }

    fn flush(&mut self, width: usize) -> Option<Array2<f64>> {
        let done = std::mem::replace(&mut self.pending, linalg::augmented_identity(width));
        let was_identity = std::mem::replace(&mut self.pending_is_identity, true);
        (!was_identity).then_some(done)
    }

    fn push_stage(&mut self, kind: StageKind, activation: PwlActivation, width: usize, layer_index: usize) {
        let before = self.flush(width);
        match self.stages.last_mut() {
            Some(prev) => prev.post = before,
            None => self.initial = Some(before.unwrap_or_else(|| linalg::augmented_identity(width))),
        }
        self.stages.push(Stage { activation, width, kind, post: None, inject: None, layer_index });
    }

    fn finish(mut self, input_dim: usize, output_dim: usize) -> Program {
        let rest = self.flush(output_dim);
        match self.stages.last_mut() {
            Some(prev) => prev.post = rest,
            None => self.initial = Some(rest.unwrap_or_else(|| linalg::augmented_identity(input_dim))),
        }
        Program { input_dim, output_dim, initial: self.initial.expect("initial map set"), stages: self.stages }
    }
}

/// Recurrent cell unrolled over its horizon. The input is
/// `[h0; x(1); …; x(T)]`; stage `t` decides the hidden units at step `t`.
fn compile_rnn(layer: &crate::network::RnnLayer, input_dim: usize) -> Result<Program> {
    let cell = &layer.cell;
    let h = cell.hidden();
    let d = cell.input_dim();
    let steps = layer.steps;
    let x_cols = |t: usize| h + t * d;

    let mut initial = Array2::zeros((h + 1, input_dim + 1));
    initial.slice_mut(s![..h, ..h]).assign(&cell.w_rec);
    initial.slice_mut(s![..h, x_cols(0)..x_cols(0) + d]).assign(&cell.u_in);
    initial.slice_mut(s![..h, input_dim]).assign(&cell.bias_h);
    initial[[h, input_dim]] = 1.0;

    let recur = augment(cell.w_rec.view(), cell.bias_h.view());
    let stages = (0..steps)
        .map(|t| {
            let (post, inject) = if t + 1 < steps {
                let mut inj = Array2::zeros((h + 1, input_dim + 1));
                inj.slice_mut(s![..h, x_cols(t + 1)..x_cols(t + 1) + d]).assign(&cell.u_in);
                (recur.clone(), Some(inj))
            } else {
                let zero = Array1::zeros(cell.output_dim());
                (augment(cell.v_out.view(), zero.view()), None)
            };
            Stage {
                activation: cell.activation.clone(),
                width: h,
                kind: StageKind::Activate,
                post: Some(post),
                inject,
                layer_index: 0,
            }
        })
        .collect();
    Ok(Program { input_dim, output_dim: cell.output_dim(), initial, stages })
}

/// Scales column `j` of `w` by the slope of region `pattern[j]`; also returns
/// `w · intercepts`, the constant the activation intercepts contribute.
pub fn mask_weights(w: ArrayView2<f64>, pattern: &[usize], act: &PwlActivation) -> Result<(Array2<f64>, Array1<f64>)> {
    if w.ncols() != pattern.len() {
        return Err(Error::dim("mask pattern", w.ncols(), pattern.len()));
    }
    let (slopes, intercepts) = pattern_coefficients(pattern, act)?;
    let mut masked = w.to_owned();
    for (j, mut col) in masked.columns_mut().into_iter().enumerate() {
        col *= slopes[j];
    }
    let contribution = w.dot(&intercepts);
    Ok((masked, contribution))
}

/// [`mask_weights`] on an augmented matrix: the first `m` columns are
/// scaled and the intercept contribution is added to the bias column.
pub fn mask_augmented(w_aug: ArrayView2<f64>, pattern: &[usize], act: &PwlActivation) -> Result<Array2<f64>> {
    let m = pattern.len();
    if w_aug.ncols() != m + 1 {
        return Err(Error::dim("augmented mask pattern", w_aug.ncols() - 1, m));
    }
    let (slopes, intercepts) = pattern_coefficients(pattern, act)?;
    let mut out = w_aug.to_owned();
    for j in 0..m {
        out.column_mut(j).mapv_inplace(|v| v * slopes[j]);
    }
    if intercepts.iter().any(|&c| c != 0.0) {
        let extra = w_aug.slice(s![.., ..m]).dot(&intercepts);
        let mut bias = out.column_mut(m);
        bias += &extra;
    }
    Ok(out)
}

/// Augmented `diag(slopes)` with the intercepts in the bias column.
fn slope_matrix(pattern: &[usize], act: &PwlActivation) -> Result<Array2<f64>> {
    let m = pattern.len();
    let (slopes, intercepts) = pattern_coefficients(pattern, act)?;
    let mut out = Array2::zeros((m + 1, m + 1));
    for j in 0..m {
        out[[j, j]] = slopes[j];
        out[[j, m]] = intercepts[j];
    }
    out[[m, m]] = 1.0;
    Ok(out)
}

fn pattern_coefficients(pattern: &[usize], act: &PwlActivation) -> Result<(Array1<f64>, Array1<f64>)> {
    let k = act.regions();
    let mut slopes = Array1::zeros(pattern.len());
    let mut intercepts = Array1::zeros(pattern.len());
    for (j, &r) in pattern.iter().enumerate() {
        if r >= k {
            return Err(Error::Region { region: r, regions: k });
        }
        slopes[j] = act.slopes[r];
        intercepts[j] = act.intercepts[r];
    }
    Ok((slopes, intercepts))
}

/// `I + (W ⊙ a)` in augmented form, including the intercept term `W β`.
pub fn residual_step_matrix(w: ArrayView2<f64>, pattern: &[usize], act: &PwlActivation) -> Result<Array2<f64>> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::dim("residual weights (square)", n, w.ncols()));
    }
    let (masked, contribution) = mask_weights(w, pattern, act)?;
    let mut out = linalg::augmented_identity(n);
    {
        let mut block = out.slice_mut(s![..n, ..n]);
        block += &masked;
    }
    out.slice_mut(s![..n, n]).assign(&contribution);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMatrix {
    /// `(m_i + 1) × (d_0 + 1)`
    pub matrix: Array2<f64>,
    /// Stage whose input this map produces; `stages.len()` is the output.
    pub layer_index: usize,
    pub category: CategorizationVector,
}

impl EffectiveMatrix {
    pub fn apply(&self, x0: &[f64]) -> Vec<f64> {
        let mut y = linalg::apply(self.matrix.view(), &homogeneous(x0));
        y.pop();
        y
    }
}

/// Map from `[x0; 1]` to the vector decided at stage `stage` (the layer's
/// pre-activation for dense nets), given the patterns of stages before it.
/// `stage == program.stages.len()` yields the output map.
pub fn effective_matrix_in(program: &Program, c: &CategorizationVector, stage: usize) -> Result<EffectiveMatrix> {
    if stage > program.stages.len() {
        return Err(Error::PatternCount { expected: program.stages.len(), actual: stage });
    }
    program.check_category(c, stage)?;
    let mut map = program.initial.clone();
    for (st, pattern) in program.stages.iter().zip(&c.patterns).take(stage) {
        map = st.advance(pattern, map.view())?;
    }
    Ok(EffectiveMatrix {
        matrix: map,
        layer_index: stage,
        category: CategorizationVector::new(c.patterns[..stage].to_vec()),
    })
}

pub fn effective_matrix(net: &NetworkSpec, c: &CategorizationVector, stage: usize) -> Result<EffectiveMatrix> {
    effective_matrix_in(&Program::compile(net)?, c, stage)
}

/// Effective map of a residual network after `c.patterns.len()` blocks
/// (or after `blocks` blocks when given).
pub fn residual_effective(net: &NetworkSpec, c: &CategorizationVector, blocks: usize) -> Result<EffectiveMatrix> {
    if !net.layers.iter().any(|l| matches!(l, Layer::Residual(_))) {
        return Err(Error::Unsupported("network has no residual blocks".into()));
    }
    effective_matrix(net, c, blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LazyEvaluation {
    pub output: Vec<f64>,
    pub category: CategorizationVector,
    pub cost: PathCost,
}

/// Evaluates the network by deciding one unit at a time against the
/// current effective map and extending the map after each stage.
pub fn lazy_eval_in(program: &Program, x0: &[f64]) -> Result<LazyEvaluation> {
    if x0.len() != program.input_dim {
        return Err(Error::dim("lazy evaluation input", program.input_dim, x0.len()));
    }
    let x = homogeneous(x0);
    let mut cost = PathCost::default();
    let mut map = program.initial.clone();
    let mut patterns = Vec::with_capacity(program.stages.len());
    for stage in &program.stages {
        let pattern: Vec<usize> = if stage.activation.is_linear() {
            vec![0; stage.width]
        } else {
            (0..stage.width)
                .map(|unit| {
                    let z = linalg::dot(map.row(unit), &x);
                    cost.row(program.input_dim);
                    let (region, n) = stage.activation.select_counted(z);
                    cost.comparisons += n;
                    region.index
                })
                .collect()
        };
        map = stage.advance(&pattern, map.view())?;
        patterns.push(pattern);
    }
    let output: Vec<f64> = (0..program.output_dim)
        .map(|row| {
            cost.row(program.input_dim);
            linalg::dot(map.row(row), &x)
        })
        .collect();
    Ok(LazyEvaluation { output, category: CategorizationVector::new(patterns), cost })
}

pub fn lazy_eval(net: &NetworkSpec, x0: &[f64]) -> Result<LazyEvaluation> {
    lazy_eval_in(&Program::compile(net)?, x0)
}
