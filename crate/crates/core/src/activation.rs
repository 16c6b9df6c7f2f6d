//! Piecewise-linear activations.
//!
//! An activation with `k` regions is described by `k - 1` ascending breakpoints
//! and one `(slope, intercept)` pair per region. Region `j` covers the
//! half-open interval `[t_{j-1}, t_j)`, so a value sitting exactly on a
//! breakpoint belongs to the region above it. Every evaluator in the crate
//! goes through [`PwlActivation::select`] so they all agree on ties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONTINUITY_TOL: f64 = 1e-9;

/// Names accepted in weight files.
pub const KNOWN_NAMES: &[&str] = &["identity", "relu", "leaky_relu", "hard_tanh", "quantized", "pwl"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlActivation {
    pub name: String,
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
}

/// Result of locating a pre-activation value inside an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub index: usize,
    pub slope: f64,
    pub intercept: f64,
}

impl PwlActivation {
    pub fn new(name: impl Into<String>, breakpoints: Vec<f64>, slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        let act = PwlActivation { name: name.into(), breakpoints, slopes, intercepts };
        act.validate()?;
        Ok(act)
    }

    pub fn identity() -> Self {
        PwlActivation { name: "identity".into(), breakpoints: vec![], slopes: vec![1.0], intercepts: vec![0.0] }
    }

    pub fn relu() -> Self {
        PwlActivation {
            name: "relu".into(),
            breakpoints: vec![0.0],
            slopes: vec![0.0, 1.0],
            intercepts: vec![0.0, 0.0],
        }
    }

    pub fn leaky_relu(negative_slope: f64) -> Self {
        PwlActivation {
            name: "leaky_relu".into(),
            breakpoints: vec![0.0],
            slopes: vec![negative_slope, 1.0],
            intercepts: vec![0.0, 0.0],
        }
    }

    pub fn hard_tanh() -> Self {
        PwlActivation {
            name: "hard_tanh".into(),
            breakpoints: vec![-1.0, 1.0],
            slopes: vec![0.0, 1.0, 0.0],
            intercepts: vec![-1.0, 0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::Activation { name: self.name.clone(), reason };
        if !KNOWN_NAMES.contains(&self.name.as_str()) {
            return Err(bad(format!("unknown activation name, expected one of {KNOWN_NAMES:?}")));
        }
        let k = self.slopes.len();
        if k == 0 {
            return Err(bad("at least one region is required".into()));
        }
        if self.breakpoints.len() + 1 != k {
            return Err(bad(format!(
                "{} breakpoints need {} slopes, found {k}",
                self.breakpoints.len(),
                self.breakpoints.len() + 1
            )));
        }
        if self.intercepts.len() != k {
            return Err(bad(format!("expected {k} intercepts, found {}", self.intercepts.len())));
        }
        if self.breakpoints.iter().chain(&self.slopes).chain(&self.intercepts).any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("breakpoints must be strictly increasing".into()));
        }
        for (j, &t) in self.breakpoints.iter().enumerate() {
            let left = self.slopes[j] * t + self.intercepts[j];
            let right = self.slopes[j + 1] * t + self.intercepts[j + 1];
            if (left - right).abs() > CONTINUITY_TOL * (1.0 + left.abs()) {
                return Err(bad(format!("discontinuous at breakpoint {t}: {left} vs {right}")));
            }
        }
        Ok(())
    }

    /// Number of linear regions `k`.
    pub fn regions(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_linear(&self) -> bool {
        self.regions() == 1
    }

    /// Locate `z`; linear scan over the breakpoints.
    pub fn select(&self, z: f64) -> Region {
        self.select_counted(z).0
    }

    /// Same as [`select`](Self::select) but also reports how many breakpoint
    /// comparisons were executed.
    pub fn select_counted(&self, z: f64) -> (Region, usize) {
        let (index, comparisons) = locate(&self.breakpoints, z);
        (self.region(index), comparisons)
    }

    pub fn region(&self, index: usize) -> Region {
        Region { index, slope: self.slopes[index], intercept: self.intercepts[index] }
    }

    pub fn apply(&self, z: f64) -> f64 {
        let r = self.select(z);
        r.slope * z + r.intercept
    }

    /// Lower and upper bounds of region `j`; infinite at the extremes.
    pub fn interval(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { f64::NEG_INFINITY } else { self.breakpoints[j - 1] };
        let hi = self.breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// Region index of `z` among ascending `breakpoints` (ties go up) and the
/// number of comparisons the scan executed.
#[inline]
pub fn locate(breakpoints: &[f64], z: f64) -> (usize, usize) {
    for (j, &t) in breakpoints.iter().enumerate() {
        if z < t {
            return (j, j + 1);
        }
    }
    (breakpoints.len(), breakpoints.len())
}

/// Convenience wrapper around [`PwlActivation::select`].
pub fn region_select(act: &PwlActivation, z: f64) -> Region {
    act.select(z)
}

/// Piecewise-linear interpolant of `f` with `segments` equal-width pieces on
/// `[lo, hi]`, continued by constant tails outside the domain. The returned
/// activation has `segments + 2` regions.
///
/// The error is the largest absolute deviation on a uniform grid of
/// `1000 * segments + 1` points spanning the domain.
pub fn quantize_activation(f: impl Fn(f64) -> f64, segments: usize, lo: f64, hi: f64) -> Result<(PwlActivation, f64)> {
    if segments < 2 {
        return Err(Error::Invalid("quantization needs at least two segments".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Invalid(format!("invalid quantization domain [{lo}, {hi}]")));
    }
    let width = (hi - lo) / segments as f64;
    let knots: Vec<f64> = (0..=segments).map(|i| if i == segments { hi } else { lo + width * i as f64 }).collect();
    let values: Vec<f64> = knots.iter().map(|&t| f(t)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("function is not finite on the quantization knots".into()));
    }

    let mut slopes = Vec::with_capacity(segments + 2);
    let mut intercepts = Vec::with_capacity(segments + 2);
    slopes.push(0.0);
    intercepts.push(values[0]);
    for i in 0..segments {
        let s = (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]);
        slopes.push(s);
        intercepts.push(values[i] - s * knots[i]);
    }
    slopes.push(0.0);
    intercepts.push(values[segments]);

    let act = PwlActivation::new("quantized", knots, slopes, intercepts)?;

    let grid = 1000 * segments;
    let step = (hi - lo) / grid as f64;
    let max_error = (0..=grid)
        .map(|i| {
            let x = if i == grid { hi } else { lo + step * i as f64 };
            (f(x) - act.apply(x)).abs()
        })
        .fold(0.0, f64::max);
    Ok((act, max_error))
}
