//! 2-D convolution (cross-correlation) layers and their dense lowering.
//!
//! Feature maps are stored flat, channel-major: index `(c * H + y) * W + x`.

use ndarray::{Array1, Array2, Array4};

use crate::activation::PwlActivation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `C_out × C_in × M × N`
    pub kernel: Array4<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
    pub padding: usize,
    pub activation: Option<PwlActivation>,
}

impl ConvLayer {
    pub fn new(
        kernel: Array4<f64>,
        bias: Array1<f64>,
        stride: usize,
        padding: usize,
        activation: Option<PwlActivation>,
    ) -> Result<Self> {
        let layer = ConvLayer { kernel, bias, stride, padding, activation };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        let (co, _, m, n) = self.kernel.dim();
        if m == 0 || n == 0 {
            return Err(Error::Network("conv kernel spatial size must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Network("conv stride must be at least 1".into()));
        }
        if self.bias.len() != co {
            return Err(Error::dim("conv bias", co, self.bias.len()));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dim().1
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let (_, _, m, n) = self.kernel.dim();
        (m, n)
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let (m, n) = self.kernel_size();
        let span = |len: usize, k: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < k {
                return Err(Error::Network(format!("conv kernel {k} larger than padded input {padded}")));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((span(height, m)?, span(width, n)?))
    }

    /// Pre-activation computed with explicit loops over the kernel.
    pub fn forward_direct(&self, x: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
        let (co, ci, m, n) = self.kernel.dim();
        if x.len() != ci * height * width {
            return Err(Error::dim("conv input", ci * height * width, x.len()));
        }
        let (ho, wo) = self.output_size(height, width)?;
        let pad = self.padding as isize;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..m {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= height as isize {
                                continue;
                            }
                            for kx in 0..n {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix < 0 || ix >= width as isize {
                                    continue;
                                }
                                acc +=
                                    self.kernel[[o, c, ky, kx]] * x[(c * height + iy as usize) * width + ix as usize];
                            }
                        }
                    }
                    out[(o * ho + oy) * wo + ox] = acc + self.bias[o];
                }
            }
        }
        Ok(out)
    }

    /// Dense operator equivalent to this layer at a fixed input size.
    pub fn lower(&self, height: usize, width: usize) -> Result<(Array2<f64>, Array1<f64>)> {
        let (co, ci, m, n) = self.kernel.dim();
        let (ho, wo) = self.output_size(height, width)?;
        let pad = self.padding as isize;
        let mut dense = Array2::zeros((co * ho * wo, ci * height * width));
        let mut bias = Array1::zeros(co * ho * wo);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (o * ho + oy) * wo + ox;
                    bias[row] = self.bias[o];
                    for c in 0..ci {
                        for ky in 0..m {
                            let iy = (oy * self.stride + ky) as isize - pad;
                            if iy < 0 || iy >= height as isize {
                                continue;
                            }
                            for kx in 0..n {
                                let ix = (ox * self.stride + kx) as isize - pad;
                                if ix < 0 || ix >= width as isize {
                                    continue;
                                }
                                let col = (c * height + iy as usize) * width + ix as usize;
                                dense[[row, col]] += self.kernel[[o, c, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
        Ok((dense, bias))
    }

    /// Input rows and columns (inclusive, clamped to the map) that output
    /// position `(oy, ox)` reads.
    pub fn window(&self, oy: usize, ox: usize, height: usize, width: usize) -> ((usize, usize), (usize, usize)) {
        let (m, n) = self.kernel_size();
        let clamp = |start: isize, k: usize, len: usize| {
            let lo = start.max(0) as usize;
            let hi = (start + k as isize - 1).min(len as isize - 1).max(0) as usize;
            (lo.min(len - 1), hi)
        };
        let pad = self.padding as isize;
        (clamp((oy * self.stride) as isize - pad, m, height), clamp((ox * self.stride) as isize - pad, n, width))
    }
}
