use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 2×2 max pooling with stride 2 over `[N, C, H, W]`.
///
/// Odd trailing rows and columns are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolLayer {
    pub window: usize,
    pub stride: usize,
}

impl Default for PoolLayer {
    fn default() -> Self {
        PoolLayer {
            window: 2,
            stride: 2,
        }
    }
}

/// Winner positions recorded by a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolCache {
    input_dims: Vec<usize>,
    output_dims: Vec<usize>,
    /// Flat input index of each output element's maximum.
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }
}

impl PoolLayer {
    pub fn output_extent(&self, input: usize) -> Option<usize> {
        (input >= self.window).then(|| (input - self.window) / self.stride + 1)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolCache)> {
        let &[n, c, h, w] = input.dims() else {
            return Err(Error::shape(format!(
                "pool input must be [N, C, H, W], got {}",
                input.shape()
            )));
        };
        let (Some(oh), Some(ow)) = (self.output_extent(h), self.output_extent(w)) else {
            return Err(Error::shape(format!(
                "{h}×{w} input is smaller than the {0}×{0} pool window",
                self.window
            )));
        };
        let x = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = base + y0 * w + x0;
                    for dy in 0..self.window {
                        for dx in 0..self.window {
                            let i = base + (y0 + dy) * w + x0 + dx;
                            // strict comparison keeps the first row-major winner
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let output_dims = vec![n, c, oh, ow];
        Ok((
            Tensor::from_vec(&output_dims, out)?,
            PoolCache {
                input_dims: input.dims().to_vec(),
                output_dims,
                argmax,
            },
        ))
    }

    /// Routes each upstream gradient to its window's winner.
    pub fn backward(cache: &PoolCache, d_output: &Tensor) -> Result<Tensor> {
        if d_output.dims() != cache.output_dims.as_slice() {
            return Err(Error::State(format!(
                "pool cache is for output {:?}, d_output has shape {}",
                cache.output_dims,
                d_output.shape()
            )));
        }
        let mut d_in = vec![0.0f32; cache.input_dims.iter().product()];
        for (&i, &g) in cache.argmax.iter().zip(d_output.data()) {
            d_in[i] += g;
        }
        Tensor::from_vec(&cache.input_dims, d_in)
    }
}
