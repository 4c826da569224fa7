use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Passes `d_output` where `input > 0`; the subgradient at 0 is 0.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    input.zip_map(d_output, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Row-wise softmax of `[N, K]` logits with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.as_matrix("softmax input")?;
    if k < 2 {
        return Err(Error::shape(format!("softmax needs at least 2 classes, got {k}")));
    }
    logits.check_finite("softmax logits")?;
    let mut out = Vec::with_capacity(logits.numel());
    let mut exps = vec![0.0f64; k];
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for (e, &x) in exps.iter_mut().zip(row) {
            *e = ((x - max) as f64).exp();
        }
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| (e / total) as f32));
    }
    Tensor::from_vec(logits.dims(), out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − Σ p·g)` per row.
pub fn softmax_backward(probs: &Tensor, d_probs: &Tensor) -> Result<Tensor> {
    probs.expect_same_shape(d_probs)?;
    let (_, k) = probs.as_matrix("softmax probs")?;
    let mut out = Vec::with_capacity(probs.numel());
    for (p, g) in probs.data().chunks_exact(k).zip(d_probs.data().chunks_exact(k)) {
        let inner: f64 = p.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
        out.extend(
            p.iter()
                .zip(g)
                .map(|(&a, &b)| (a as f64 * (b as f64 - inner)) as f32),
        );
    }
    Tensor::from_vec(probs.dims(), out)
}
