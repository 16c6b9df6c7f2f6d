//! Elman-style recurrent cell:
//! `h(t) = σ(W h(t-1) + U x(t) + b)`, `o(t) = V h(t)`.

use ndarray::{Array1, Array2};

use crate::activation::PwlActivation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    /// `h × h`
    pub w_rec: Array2<f64>,
    /// `h × d_in`
    pub u_in: Array2<f64>,
    /// `d_out × h`
    pub v_out: Array2<f64>,
    pub bias_h: Array1<f64>,
    pub activation: PwlActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnRun {
    pub hidden: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub patterns: Vec<Vec<usize>>,
}

impl RnnCell {
    pub fn new(
        w_rec: Array2<f64>,
        u_in: Array2<f64>,
        v_out: Array2<f64>,
        bias_h: Array1<f64>,
        activation: PwlActivation,
    ) -> Result<Self> {
        let cell = RnnCell { w_rec, u_in, v_out, bias_h, activation };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_rec.nrows();
        if self.w_rec.ncols() != h {
            return Err(Error::dim("recurrent weights (square)", h, self.w_rec.ncols()));
        }
        if self.u_in.nrows() != h {
            return Err(Error::dim("input weights rows", h, self.u_in.nrows()));
        }
        if self.v_out.ncols() != h {
            return Err(Error::dim("output weights columns", h, self.v_out.ncols()));
        }
        if self.bias_h.len() != h {
            return Err(Error::dim("hidden bias", h, self.bias_h.len()));
        }
        self.activation.validate()
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u_in.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.v_out.nrows()
    }
}

fn check_inputs(cell: &RnnCell, h0: &[f64], inputs: &[Vec<f64>]) -> Result<()> {
    if h0.len() != cell.hidden() {
        return Err(Error::dim("initial hidden state", cell.hidden(), h0.len()));
    }
    for x in inputs {
        if x.len() != cell.input_dim() {
            return Err(Error::dim("recurrent input", cell.input_dim(), x.len()));
        }
    }
    Ok(())
}

/// Runs the recurrence step by step, recording every activation region.
pub fn rnn_forward(cell: &RnnCell, h0: &[f64], inputs: &[Vec<f64>]) -> Result<RnnRun> {
    check_inputs(cell, h0, inputs)?;
    let mut h = h0.to_vec();
    let mut run = RnnRun {
        hidden: Vec::with_capacity(inputs.len()),
        outputs: Vec::with_capacity(inputs.len()),
        patterns: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let mut pattern = Vec::with_capacity(h.len());
        let next: Vec<f64> = (0..cell.hidden())
            .map(|i| {
                let z = cell.w_rec.row(i).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
                    + cell.u_in.row(i).iter().zip(x).map(|(u, v)| u * v).sum::<f64>()
                    + cell.bias_h[i];
                let r = cell.activation.select(z);
                pattern.push(r.index);
                r.slope * z + r.intercept
            })
            .collect();
        let o = cell.v_out.rows().into_iter().map(|row| row.iter().zip(&next).map(|(v, a)| v * a).sum()).collect();
        h = next;
        run.hidden.push(h.clone());
        run.outputs.push(o);
        run.patterns.push(pattern);
    }
    Ok(run)
}

/// `o(T)` computed only from matrix chains selected by the per-step
/// patterns, without running the recurrence.
///
/// With `D_t = diag(slopes(a(t)))`, `β_t` the per-step intercepts and the
/// chains `Ŵ_T = I`, `Ŵ_i = Ŵ_{i+1} W D_i`:
///
/// `z_T = Ŵ_1 W h0 + Σ_i Ŵ_i (U x_i + b) + Σ_{i<T} Ŵ_{i+1} W β_i`
/// and `o_T = V (D_T z_T + β_T) = Σ Ẑ_i (…) + V β_T` with `Ẑ_i = V D_T Ŵ_i`.
pub fn rnn_effective_output(
    cell: &RnnCell,
    h0: &[f64],
    inputs: &[Vec<f64>],
    patterns: &[Vec<usize>],
) -> Result<Vec<f64>> {
    check_inputs(cell, h0, inputs)?;
    let steps = inputs.len();
    if steps == 0 {
        return Err(Error::Invalid("at least one time step is required".into()));
    }
    if patterns.len() != steps {
        return Err(Error::PatternCount { expected: steps, actual: patterns.len() });
    }
    let h = cell.hidden();
    let act = &cell.activation;
    let mut slopes = Vec::with_capacity(steps);
    let mut intercepts = Vec::with_capacity(steps);
    for p in patterns {
        if p.len() != h {
            return Err(Error::dim("recurrent pattern", h, p.len()));
        }
        let mut s = Array1::zeros(h);
        let mut c = Array1::zeros(h);
        for (i, &r) in p.iter().enumerate() {
            if r >= act.regions() {
                return Err(Error::Region { region: r, regions: act.regions() });
            }
            s[i] = act.slopes[r];
            c[i] = act.intercepts[r];
        }
        slopes.push(s);
        intercepts.push(c);
    }

    let last = steps - 1;
    // Ẑ projection V D_T
    let mut v_masked = cell.v_out.clone();
    for (j, mut col) in v_masked.columns_mut().into_iter().enumerate() {
        col *= slopes[last][j];
    }

    let drive = |x: &Vec<f64>| cell.u_in.dot(&Array1::from(x.clone())) + &cell.bias_h;

    // chain[i] = Ŵ_i for time index i (0-based), walking backwards.
    let mut chain = Array2::<f64>::eye(h);
    let mut z = chain.dot(&drive(&inputs[last]));
    for i in (0..last).rev() {
        // Ŵ_{i} = Ŵ_{i+1} W D_i, and the β_i term uses Ŵ_{i+1} W.
        let through_w = chain.dot(&cell.w_rec);
        z = z + through_w.dot(&intercepts[i]);
        let mut next = through_w;
        for (j, mut col) in next.columns_mut().into_iter().enumerate() {
            col *= slopes[i][j];
        }
        chain = next;
        z = z + chain.dot(&drive(&inputs[i]));
    }
    z = z + chain.dot(&cell.w_rec).dot(&Array1::from(h0.to_vec()));
    let out = v_masked.dot(&z) + cell.v_out.dot(&intercepts[last]);
    Ok(out.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn identity_cell() -> RnnCell {
        RnnCell::new(
            array![[0.5, -0.2], [0.3, 0.9]],
            array![[1.0], [-2.0]],
            array![[1.5, 0.5]],
            array![0.0, 0.0],
            PwlActivation::identity(),
        )
        .unwrap()
    }

    #[test]
    fn single_step_identity() {
        let cell = identity_cell();
        let run = rnn_forward(&cell, &[0.0, 0.0], &[vec![2.0]]).unwrap();
        // V U x
        assert!((run.outputs[0][0] - (1.5 * 2.0 + 0.5 * -4.0)).abs() < 1e-15);
    }

    #[test]
    fn positive_path_closed_form() {
        let cell = RnnCell::new(
            array![[0.5, 0.25], [0.125, 0.75]],
            array![[1.0], [1.0]],
            array![[1.0, 2.0]],
            array![0.0, 0.0],
            PwlActivation::relu(),
        )
        .unwrap();
        let h0 = array![1.0, 2.0];
        let run = rnn_forward(&cell, h0.as_slice().unwrap(), &vec![vec![0.0]; 4]).unwrap();
        let mut h = h0.clone();
        for t in 0..4 {
            h = cell.w_rec.dot(&h);
            let o = cell.v_out.dot(&h);
            assert!((run.outputs[t][0] - o[0]).abs() < 1e-12);
            assert!(run.patterns[t].iter().all(|&r| r == 1));
        }
    }

    #[test]
    fn effective_single_step() {
        let cell = RnnCell::new(
            array![[0.5, -1.0], [2.0, 0.25]],
            array![[1.0], [-1.0]],
            array![[1.0, 1.0]],
            array![0.1, -0.1],
            PwlActivation::leaky_relu(0.3),
        )
        .unwrap();
        let h0 = [0.4, -0.3];
        let xs = vec![vec![0.7]];
        let run = rnn_forward(&cell, &h0, &xs).unwrap();
        let eff = rnn_effective_output(&cell, &h0, &xs, &run.patterns).unwrap();
        assert!((eff[0] - run.outputs[0][0]).abs() < 1e-14);
    }

    #[test]
    fn identity_telescopes() {
        let cell = identity_cell();
        let h0 = [0.3, -0.8];
        let xs = vec![vec![1.0], vec![-0.5], vec![2.0]];
        let patterns = vec![vec![0, 0]; 3];
        let eff = rnn_effective_output(&cell, &h0, &xs, &patterns).unwrap();
        // V (W³ h0 + W² U x1 + W U x2 + U x3)
        let w = &cell.w_rec;
        let u = |x: f64| cell.u_in.column(0).to_owned() * x;
        let h0a = Array1::from(h0.to_vec());
        let total = w.dot(&w.dot(&w.dot(&h0a))) + w.dot(&w.dot(&u(1.0))) + w.dot(&u(-0.5)) + u(2.0);
        let expected = cell.v_out.dot(&total);
        assert!((eff[0] - expected[0]).abs() < 1e-12);
    }

    #[test]
    fn pattern_count_mismatch() {
        let cell = identity_cell();
        let err = rnn_effective_output(&cell, &[0.0, 0.0], &[vec![1.0], vec![1.0]], &[vec![0, 0]]);
        assert!(matches!(err, Err(Error::PatternCount { expected: 2, actual: 1 })));
    }
}
