//! The binary-classification CNN assembled from layer primitives.
//!
//! Stage order: `conv_i → ReLU [→ pool]` for every conv, flatten, then dense
//! layers with ReLU between them and none before the final softmax.

mod checkpoint;
mod config;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint,
    write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ConvSpec, NetworkConfig, Stage};

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::layers::{
    relu_backward, relu_forward, softmax, ConvLayer, DenseLayer, PoolCache, PoolLayer,
};
use crate::tensor::{Rng, Tensor};

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    convs: Vec<ConvLayer>,
    dense: Vec<DenseLayer>,
    velocities: Vec<Tensor>,
    /// Changes whenever parameters may have changed; traces record it.
    generation: u64,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.convs == other.convs && self.dense == other.dense
    }
}

/// Intermediates kept by [`Network::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    generation: u64,
    conv_inputs: Vec<Tensor>,
    conv_outputs: Vec<Tensor>,
    pools: Vec<Option<PoolCache>>,
    dense_inputs: Vec<Tensor>,
    dense_outputs: Vec<Tensor>,
    pub logits: Tensor,
}

/// One gradient per parameter tensor, in [`Network::param_names`] order.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub names: Vec<String>,
    pub grads: Vec<Tensor>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.grads[i])
    }
}

impl Network {
    /// He-initialized weights (stddev `√(2/fan_in)`), zero biases and velocities.
    pub fn build(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        let flat = config.flat_dim()?;
        let mut convs = Vec::with_capacity(config.convs.len());
        let mut in_ch = config.input_channels;
        for spec in &config.convs {
            let fan_in = in_ch * spec.kernel * spec.kernel;
            let std = (2.0 / fan_in as f64).sqrt() as f32;
            let w = Tensor::fill_normal(
                rng,
                &[spec.out_channels, in_ch, spec.kernel, spec.kernel],
                0.0,
                std,
            )?;
            convs.push(ConvLayer::new(
                w,
                Tensor::zeros(&[spec.out_channels])?,
                spec.stride,
                spec.padding,
            )?);
            in_ch = spec.out_channels;
        }
        let mut dense = Vec::with_capacity(config.fc_dims.len());
        let mut in_dim = flat;
        for &d in &config.fc_dims {
            let std = (2.0 / in_dim as f64).sqrt() as f32;
            let w = Tensor::fill_normal(rng, &[d, in_dim], 0.0, std)?;
            dense.push(DenseLayer::new(w, Tensor::zeros(&[d])?)?);
            in_dim = d;
        }
        Ok(Self::assemble(config, convs, dense))
    }

    fn assemble(config: NetworkConfig, convs: Vec<ConvLayer>, dense: Vec<DenseLayer>) -> Self {
        let mut net = Network {
            config,
            convs,
            dense,
            velocities: Vec::new(),
            generation: fresh_generation(),
        };
        net.velocities = net
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.dims()).expect("parameter shapes are valid"))
            .collect();
        net
    }

    /// Rebuilds a network from named parameters, checking every shape
    /// against what `config` implies.
    pub fn from_params(config: NetworkConfig, params: Vec<(String, Tensor)>) -> Result<Self> {
        let template = Self::build(config.clone(), &mut Rng::new(0))?;
        let names = template.param_names();
        if params.len() != names.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                names.len(),
                params.len()
            )));
        }
        let mut tensors = Vec::with_capacity(params.len());
        for ((name, t), (want_name, want)) in
            params.into_iter().zip(names.iter().zip(template.params()))
        {
            if &name != want_name {
                return Err(Error::Shape(format!(
                    "expected parameter {want_name}, found {name}"
                )));
            }
            if t.dims() != want.dims() {
                return Err(Error::Shape(format!(
                    "{name}: expected shape {}, found {}",
                    want.shape(),
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        let mut it = tensors.into_iter();
        let convs = config
            .convs
            .iter()
            .map(|spec| {
                ConvLayer::new(
                    it.next().unwrap(),
                    it.next().unwrap(),
                    spec.stride,
                    spec.padding,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let dense = (0..config.fc_dims.len())
            .map(|_| DenseLayer::new(it.next().unwrap(), it.next().unwrap()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(config, convs, dense))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn dense_layers(&self) -> &[DenseLayer] {
        &self.dense
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.convs.len() {
            names.push(format!("conv{i}.weight"));
            names.push(format!("conv{i}.bias"));
        }
        for j in 0..self.dense.len() {
            names.push(format!("fc{j}.weight"));
            names.push(format!("fc{j}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weights);
            out.push(&c.bias);
        }
        for d in &self.dense {
            out.push(&d.weights);
            out.push(&d.bias);
        }
        out
    }

    /// Mutable parameters paired with their velocity buffers.
    pub fn params_and_velocities_mut(&mut self) -> Vec<(&mut Tensor, &mut Tensor)> {
        self.generation = fresh_generation();
        let mut params: Vec<&mut Tensor> = Vec::new();
        for c in &mut self.convs {
            params.push(&mut c.weights);
            params.push(&mut c.bias);
        }
        for d in &mut self.dense {
            params.push(&mut d.weights);
            params.push(&mut d.bias);
        }
        params.into_iter().zip(self.velocities.iter_mut()).collect()
    }

    pub fn velocities(&self) -> &[Tensor] {
        &self.velocities
    }

    pub fn reset_velocities(&mut self) {
        for v in &mut self.velocities {
            v.data_mut().fill(0.0);
        }
    }

    /// Bitwise comparison of every parameter tensor.
    pub fn params_bitwise_eq(&self, other: &Network) -> bool {
        self.config == other.config
            && self
                .params()
                .iter()
                .zip(other.params())
                .all(|(a, b)| a.bitwise_eq(b))
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let (h, w) = self.config.input_hw;
        match *batch.dims() {
            [n, c, bh, bw] if c == self.config.input_channels && bh == h && bw == w => Ok(n),
            _ => Err(Error::Shape(format!(
                "network expects [N, {}, {h}, {w}] input, got {}",
                self.config.input_channels,
                batch.shape()
            ))),
        }
    }

    /// Class probabilities `[N, 2]` plus the intermediates needed by [`Network::backward`].
    pub fn forward(&self, batch: &Tensor) -> Result<(Tensor, Trace)> {
        let (probs, trace) = self.run(batch, true)?;
        Ok((probs, trace.expect("trace requested")))
    }

    /// Class probabilities without keeping a trace.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch, false)?.0)
    }

    /// Logits `[N, 2]` without keeping a trace.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_input(batch)?;
        let flat = self.features(batch, n, None)?;
        self.head(flat, None)
    }

    fn features(&self, batch: &Tensor, n: usize, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        let mut x = batch.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let y = relu_forward(&conv.forward(&x)?);
            let next = if self.config.pool_after.contains(&i) {
                let (p, cache) = PoolLayer::default().forward(&y)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.pools.push(Some(cache));
                }
                p
            } else {
                if let Some(t) = trace.as_deref_mut() {
                    t.pools.push(None);
                }
                y.clone()
            };
            if let Some(t) = trace.as_deref_mut() {
                t.conv_inputs.push(std::mem::replace(&mut x, next));
                t.conv_outputs.push(y);
            } else {
                x = next;
            }
        }
        let flat_dim = x.numel() / n;
        x.reshape(&[n, flat_dim])
    }

    fn head(&self, mut x: Tensor, mut trace: Option<&mut Trace>) -> Result<Tensor> {
        let last = self.dense.len() - 1;
        for (j, layer) in self.dense.iter().enumerate() {
            let mut y = layer.forward(&x)?;
            if j < last {
                y = relu_forward(&y);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.dense_inputs.push(std::mem::replace(&mut x, y.clone()));
                t.dense_outputs.push(y);
            } else {
                x = y;
            }
        }
        Ok(x)
    }

    fn run(&self, batch: &Tensor, keep: bool) -> Result<(Tensor, Option<Trace>)> {
        let n = self.check_input(batch)?;
        let mut trace = keep.then(|| Trace {
            generation: self.generation,
            conv_inputs: Vec::new(),
            conv_outputs: Vec::new(),
            pools: Vec::new(),
            dense_inputs: Vec::new(),
            dense_outputs: Vec::new(),
            logits: Tensor::zeros(&[1]).expect("valid shape"),
        });
        let flat = self.features(batch, n, trace.as_mut())?;
        let logits = self.head(flat, trace.as_mut())?;
        let probs = softmax(&logits)?;
        if let Some(t) = trace.as_mut() {
            t.logits = logits;
        }
        Ok((probs, trace))
    }

    /// Gradients of a scalar loss given its gradient with respect to the logits.
    pub fn backward(&self, trace: &Trace, d_logits: &Tensor) -> Result<GradientSet> {
        if trace.generation != self.generation {
            return Err(Error::State(
                "trace was recorded before the parameters last changed".into(),
            ));
        }
        d_logits.expect_dims(trace.logits.dims(), "d_logits")?;

        let last = self.dense.len() - 1;
        let mut dense_grads = Vec::with_capacity(self.dense.len());
        let mut d = d_logits.clone();
        for j in (0..self.dense.len()).rev() {
            if j < last {
                d = relu_backward(&trace.dense_outputs[j], &d)?;
            }
            let g = self.dense[j].backward(&trace.dense_inputs[j], &d)?;
            d = g.d_input;
            dense_grads.push((g.d_weights.unwrap(), g.d_bias.unwrap()));
        }
        dense_grads.reverse();

        let last_conv = self.convs.len() - 1;
        let pooled_dims = match &trace.pools[last_conv] {
            Some(cache) => {
                let mut dims = cache.input_dims().to_vec();
                dims[2] /= 2;
                dims[3] /= 2;
                dims
            }
            None => trace.conv_outputs[last_conv].dims().to_vec(),
        };
        d = d.reshape(&pooled_dims)?;

        let mut conv_grads = Vec::with_capacity(self.convs.len());
        for i in (0..self.convs.len()).rev() {
            if let Some(cache) = &trace.pools[i] {
                d = PoolLayer::backward(cache, &d)?;
            }
            d = relu_backward(&trace.conv_outputs[i], &d)?;
            let g = self.convs[i].backward_impl(&trace.conv_inputs[i], &d, i > 0)?;
            d = g.d_input;
            conv_grads.push((g.d_weights.unwrap(), g.d_bias.unwrap()));
        }
        conv_grads.reverse();

        let grads = conv_grads
            .into_iter()
            .chain(dense_grads)
            .flat_map(|(w, b)| [w, b])
            .collect();
        Ok(GradientSet {
            names: self.param_names(),
            grads,
        })
    }
}
