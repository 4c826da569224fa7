use super::LayerGrads;
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn, round_f32};
use crate::tensor::Tensor;

/// Fully connected layer: `out = in·Wᵀ + b` with `W: [out_dim, in_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let (out_dim, _) = weights.as_matrix("dense weights")?;
        bias.expect_dims(&[out_dim], "dense bias")?;
        Ok(DenseLayer { weights, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dims()[0]
    }

    fn batch(&self, input: &Tensor) -> Result<usize> {
        let (n, d) = input.as_matrix("dense input")?;
        if d != self.in_dim() {
            return Err(Error::shape(format!(
                "dense layer expects {} inputs, got {d}",
                self.in_dim()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = self.batch(input)?;
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        let mut acc: Vec<f64> = (0..n)
            .flat_map(|_| self.bias.data().iter().map(|&b| b as f64))
            .collect();
        gemm_nt(n, in_dim, out_dim, input.data(), self.weights.data(), &mut acc);
        Tensor::from_vec(&[n, out_dim], round_f32(&acc))
    }

    pub fn backward(&self, input: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
        let n = self.batch(input)?;
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        d_output.expect_dims(&[n, out_dim], "dense d_output")?;

        let mut d_w = vec![0.0f64; out_dim * in_dim];
        gemm_tn(out_dim, n, in_dim, d_output.data(), input.data(), &mut d_w);

        let mut d_b = vec![0.0f64; out_dim];
        for row in d_output.data().chunks_exact(out_dim) {
            for (acc, &g) in d_b.iter_mut().zip(row) {
                *acc += g as f64;
            }
        }

        let mut d_in = vec![0.0f64; n * in_dim];
        gemm_nn(n, out_dim, in_dim, d_output.data(), self.weights.data(), &mut d_in);

        Ok(LayerGrads {
            d_weights: Some(Tensor::from_vec(&[out_dim, in_dim], round_f32(&d_w))?),
            d_bias: Some(Tensor::from_vec(&[out_dim], round_f32(&d_b))?),
            d_input: Tensor::from_vec(&[n, in_dim], round_f32(&d_in))?,
        })
    }
}
