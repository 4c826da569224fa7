//! Browser demo: synthetic slices, first-layer feature maps, and a small
//! network trained in the page with a threshold explorer.
//!
//! [`Session`] holds the state and is plain Rust; [`Demo`] is the
//! `wasm-bindgen` wrapper the page talks to.

use dcnn::data::{generate_synthetic, split, LabeledDataset, SplitSpec};
use dcnn::layers::{relu_forward, PoolLayer};
use dcnn::metrics::{predict_dataset, MetricsReport};
use dcnn::network::ConvSpec;
use dcnn::tensor::derive_seed;
use dcnn::training::{dataset_loss, train, Budget, TrainError, TrainingConfig};
use dcnn::{Network, NetworkConfig, Result, Rng, Tensor};
use wasm_bindgen::prelude::*;

pub const IMAGE_SIDE: usize = 24;

/// 24×24 input, convs [(4,5),(8,3)] each followed by a pool, fc [8,2].
pub fn demo_config() -> NetworkConfig {
    NetworkConfig {
        input_channels: 1,
        input_hw: (IMAGE_SIDE, IMAGE_SIDE),
        convs: vec![ConvSpec::valid(4, 5), ConvSpec::valid(8, 3)],
        pool_after: [0, 1].into_iter().collect(),
        fc_dims: vec![8, 2],
    }
}

/// One synthetic image, row-major `side × side`, values in `[0, 1]`.
pub fn synth_image(seed: u64, side: usize, with_disk: bool) -> Result<Vec<f32>> {
    let ds = generate_synthetic(2, (side, side), seed)?;
    // index 0 is the disk image, index 1 the noise-only one
    Ok(ds.samples()[usize::from(!with_disk)].image.data().to_vec())
}

pub struct FeatureMaps {
    /// `[channels, h, w]` after the first convolution and ReLU.
    pub activations: Tensor,
    /// `[channels, h/2, w/2]` after the first pool.
    pub pooled: Tensor,
}

pub struct Session {
    net: Network,
    train_set: LabeledDataset,
    val_set: LabeledDataset,
    test_set: LabeledDataset,
    seed: u64,
    iterations: usize,
    losses: Vec<f64>,
}

impl Session {
    /// `n` synthetic images split 50/25/25, and a freshly initialised network.
    pub fn new(seed: u64, n: usize) -> Result<Self> {
        let ds = generate_synthetic(n, (IMAGE_SIDE, IMAGE_SIDE), derive_seed(seed, "synth"))?;
        let s = split(&ds, &SplitSpec { seed: derive_seed(seed, "split"), ..Default::default() })?;
        let net = Network::build(demo_config(), &mut Rng::new(derive_seed(seed, "init")))?;
        Ok(Session {
            net,
            train_set: s.train,
            val_set: s.val,
            test_set: s.test,
            seed,
            iterations: 0,
            losses: Vec::new(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test_set
    }

    /// Runs `steps` more SGD iterations and returns their training losses.
    pub fn train(&mut self, steps: usize, learning_rate: f32) -> Result<Vec<f64>> {
        if steps == 0 {
            return Ok(Vec::new());
        }
        let cfg = TrainingConfig {
            batch_size: 16,
            learning_rate,
            budget: Budget::Iterations(steps),
            eval_every: steps,
            seed: derive_seed(self.seed, &format!("shuffle{}", self.iterations)),
            ..Default::default()
        };
        let out = match train(self.net.clone(), &self.train_set, &self.val_set, &cfg) {
            Ok(out) => out,
            Err(TrainError::Invalid(e)) => return Err(e),
            Err(TrainError::Diverged { iteration, loss, .. }) => {
                return Err(dcnn::Error::Numeric(format!("diverged at step {iteration}: loss {loss}")))
            }
        };
        self.net = out.last;
        self.iterations += steps;
        let new: Vec<f64> = out
            .log
            .split(dcnn::training::Split::Train)
            .map(|r| r.loss)
            .collect();
        self.losses.extend(&new);
        Ok(new)
    }

    pub fn validation_loss(&self) -> Result<f64> {
        Ok(dataset_loss(&self.net, &self.val_set, 64)?.0)
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Test-split metrics at `threshold`.
    pub fn metrics(&self, threshold: f64) -> Result<MetricsReport> {
        let probs = predict_dataset(&self.net, &self.test_set, 64)?;
        MetricsReport::from_probs(&probs, &self.test_set.labels(), threshold)
    }

    /// `p(cancer)` of a `side × side` image.
    pub fn predict(&self, pixels: &[f32]) -> Result<f32> {
        let x = Tensor::from_vec(&[1, 1, IMAGE_SIDE, IMAGE_SIDE], pixels.to_vec())?;
        Ok(self.net.predict(&x)?.data()[1])
    }

    pub fn feature_maps(&self, pixels: &[f32]) -> Result<FeatureMaps> {
        let x = Tensor::from_vec(&[1, 1, IMAGE_SIDE, IMAGE_SIDE], pixels.to_vec())?;
        let conv = &self.net.convs()[0];
        let a = relu_forward(&conv.forward(&x)?);
        let (p, _) = PoolLayer::default().forward(&a)?;
        let drop_batch = |t: Tensor| {
            let d = t.dims()[1..].to_vec();
            t.reshape(&d)
        };
        Ok(FeatureMaps {
            activations: drop_batch(a)?,
            pooled: drop_batch(p)?,
        })
    }
}

fn js(e: dcnn::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = synthImage)]
pub fn synth_image_js(seed: u32, side: usize, with_disk: bool) -> std::result::Result<Vec<f32>, JsError> {
    synth_image(seed as u64, side, with_disk).map_err(js)
}

#[wasm_bindgen(js_name = imageSide)]
pub fn image_side() -> usize {
    IMAGE_SIDE
}

#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n: usize) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            inner: Session::new(seed as u64, n).map_err(js)?,
        })
    }

    pub fn train(&mut self, steps: usize, learning_rate: f32) -> std::result::Result<Vec<f64>, JsError> {
        self.inner.train(steps, learning_rate).map_err(js)
    }

    pub fn iterations(&self) -> usize {
        self.inner.iterations()
    }

    #[wasm_bindgen(js_name = validationLoss)]
    pub fn validation_loss(&self) -> std::result::Result<f64, JsError> {
        self.inner.validation_loss().map_err(js)
    }

    /// Test-split report as JSON.
    pub fn metrics(&self, threshold: f64) -> std::result::Result<String, JsError> {
        Ok(self.inner.metrics(threshold).map_err(js)?.to_json())
    }

    pub fn predict(&self, pixels: &[f32]) -> std::result::Result<f32, JsError> {
        self.inner.predict(pixels).map_err(js)
    }

    /// First-layer activations `[channels, h, w]`, flattened.
    #[wasm_bindgen(js_name = featureMaps)]
    pub fn feature_maps(&self, pixels: &[f32]) -> std::result::Result<Vec<f32>, JsError> {
        Ok(self.inner.feature_maps(pixels).map_err(js)?.activations.into_data())
    }

    /// `[channels, h, w]` of [`Demo::feature_maps`].
    #[wasm_bindgen(js_name = featureDims)]
    pub fn feature_dims(&self) -> Vec<usize> {
        let conv = &self.inner.network().convs()[0];
        let (h, w) = conv.output_hw(IMAGE_SIDE, IMAGE_SIDE).unwrap_or((0, 0));
        vec![conv.out_channels(), h, w]
    }

    #[wasm_bindgen(js_name = testImage)]
    pub fn test_image(&self, index: usize) -> Vec<f32> {
        let samples = self.inner.test_set().samples();
        samples[index % samples.len()].image.data().to_vec()
    }

    #[wasm_bindgen(js_name = testLabel)]
    pub fn test_label(&self, index: usize) -> u8 {
        let samples = self.inner.test_set().samples();
        samples[index % samples.len()].label
    }

    #[wasm_bindgen(js_name = testSize)]
    pub fn test_size(&self) -> usize {
        self.inner.test_set().len()
    }
}
