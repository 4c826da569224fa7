//! Central finite-difference checks of every analytical gradient.
//!
//! Each check evaluates a scalar loss with an independent 64-bit reference
//! forward pass, differentiates it numerically with step [`STEP`], and
//! compares the result with the gradients produced by the layers and the
//! network. Entries whose perturbation flips a ReLU mask or a pooling winner
//! are skipped.

use crate::error::Result;
use crate::layers::{relu_backward, relu_forward, softmax, ConvLayer, DenseLayer, PoolLayer};
use crate::network::{ConvSpec, Network, NetworkConfig};
use crate::tensor::{derive_seed, Rng, Tensor};
use crate::training::cross_entropy_loss;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Lower bound on the denominator of the relative error, so gradients that
/// are zero up to rounding compare by absolute difference.
pub const DENOM_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    /// Scale every analytical weight gradient by `1 + perturb` before comparison.
    pub perturb: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult {
            name: name.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<24} {:>14} {:>8} {:>8}  status\n", "check", "max_rel_err", "checked", "skipped");
        for c in &self.checks {
            s.push_str(&format!(
                "{:<24} {:>14.3e} {:>8} {:>8}  {}\n",
                c.name,
                c.max_rel_error,
                c.checked,
                c.skipped,
                if c.passed() { "ok" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Loss value plus the piecewise-linear branch it was evaluated on.
type Eval = (f64, Vec<usize>);

/// Compares `analytic[j]` with the central difference of `f` in `theta[j]` for every `j`.
fn compare(result: &mut CheckResult, theta: &mut [f64], analytic: &[f32], mut f: impl FnMut(&[f64]) -> Eval) {
    assert_eq!(theta.len(), analytic.len(), "gradient length mismatch");
    let (_, base) = f(theta);
    for j in 0..theta.len() {
        let saved = theta[j];
        theta[j] = saved + STEP;
        let (lp, pp) = f(theta);
        theta[j] = saved - STEP;
        let (lm, pm) = f(theta);
        theta[j] = saved;
        if pp != base || pm != base {
            result.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * STEP);
        let err = relative_error(analytic[j] as f64, numeric);
        if !(err <= result.max_rel_error) {
            result.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        result.checked += 1;
    }
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&x| x as f64).collect()
}

fn scaled(t: &Tensor, perturb: Option<f64>) -> Tensor {
    match perturb {
        Some(p) => t.map(|x| (x as f64 * (1.0 + p)) as f32),
        None => t.clone(),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// 64-bit reference forwards. Layouts match the f32 layers: NCHW activations,
// [out, in, kh, kw] conv weights, [out, in] dense weights.

struct Dims4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
}

#[allow(clippy::too_many_arguments)]
fn conv_ref(x: &[f64], d: &Dims4, w: &[f64], out_c: usize, k: usize, b: &[f64], stride: usize, pad: usize) -> (Vec<f64>, Dims4) {
    let oh = (d.h + 2 * pad - k) / stride + 1;
    let ow = (d.w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; d.n * out_c * oh * ow];
    for n in 0..d.n {
        for o in 0..out_c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b[o];
                    for c in 0..d.c {
                        for u in 0..k {
                            for v in 0..k {
                                let (r, s) = ((i * stride + u) as isize - pad as isize, (j * stride + v) as isize - pad as isize);
                                if r < 0 || s < 0 || r >= d.h as isize || s >= d.w as isize {
                                    continue;
                                }
                                let xi = ((n * d.c + c) * d.h + r as usize) * d.w + s as usize;
                                let wi = ((o * d.c + c) * k + u) * k + v;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((n * out_c + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, Dims4 { n: d.n, c: out_c, h: oh, w: ow })
}

fn pool_ref(x: &[f64], d: &Dims4, pattern: &mut Vec<usize>) -> (Vec<f64>, Dims4) {
    let (oh, ow) = (d.h / 2, d.w / 2);
    let mut out = Vec::with_capacity(d.n * d.c * oh * ow);
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * d.w + 2 * j;
                for (u, v) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + u) * d.w + 2 * j + v;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                pattern.push(best);
                out.push(x[best]);
            }
        }
    }
    (out, Dims4 { n: d.n, c: d.c, h: oh, w: ow })
}

fn relu_ref(x: &mut [f64], pattern: &mut Vec<usize>) {
    for v in x.iter_mut() {
        pattern.push(usize::from(*v > 0.0));
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
}

fn dense_ref(x: &[f64], n: usize, w: &[f64], out_dim: usize, b: &[f64]) -> Vec<f64> {
    let in_dim = x.len() / n;
    let mut y = Vec::with_capacity(n * out_dim);
    for row in x.chunks_exact(in_dim) {
        for o in 0..out_dim {
            y.push(b[o] + dot(row, &w[o * in_dim..(o + 1) * in_dim]));
        }
    }
    y
}

fn softmax_ce_ref(logits: &[f64], labels: &[u8]) -> f64 {
    let k = logits.len() / labels.len();
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(k).zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&a| (a - m).exp()).sum();
        let p = (row[y as usize] - m).exp() / z;
        total -= p.max(crate::training::CE_LOG_FLOOR).ln();
    }
    total / labels.len() as f64
}

/// Mean cross-entropy of the whole network in 64-bit, with parameters in
/// [`Network::param_names`] order.
fn network_ref(cfg: &NetworkConfig, params: &[Vec<f64>], x: &[f64], n: usize, labels: &[u8]) -> Eval {
    let mut pattern = Vec::new();
    let (h, w) = cfg.input_hw;
    let mut d = Dims4 { n, c: cfg.input_channels, h, w };
    let mut a = x.to_vec();
    for (i, spec) in cfg.convs.iter().enumerate() {
        let (mut y, yd) = conv_ref(&a, &d, &params[2 * i], spec.out_channels, spec.kernel, &params[2 * i + 1], spec.stride, spec.padding);
        relu_ref(&mut y, &mut pattern);
        (a, d) = if cfg.pool_after.contains(&i) {
            pool_ref(&y, &yd, &mut pattern)
        } else {
            (y, yd)
        };
    }
    let offset = 2 * cfg.convs.len();
    for (j, &out_dim) in cfg.fc_dims.iter().enumerate() {
        a = dense_ref(&a, n, &params[offset + 2 * j], out_dim, &params[offset + 2 * j + 1]);
        if j + 1 < cfg.fc_dims.len() {
            relu_ref(&mut a, &mut pattern);
        }
    }
    (softmax_ce_ref(&a, labels), pattern)
}

fn random(rng: &mut Rng, dims: &[usize], std: f32) -> Tensor {
    Tensor::fill_normal(rng, dims, 0.0, std).expect("valid dims")
}

fn check_conv(name: &str, rng: &mut Rng, spec: ConvSpec, in_c: usize, hw: usize, opts: &GradcheckOptions) -> Result<CheckResult> {
    let k = spec.kernel;
    let layer = ConvLayer::new(
        random(rng, &[spec.out_channels, in_c, k, k], 0.5),
        random(rng, &[spec.out_channels], 0.5),
        spec.stride,
        spec.padding,
    )?;
    let x = random(rng, &[2, in_c, hw, hw], 1.0);
    let out = layer.forward(&x)?;
    let r = random(rng, out.dims(), 1.0);
    let g = layer.backward(&x, &r)?;
    let d = Dims4 { n: 2, c: in_c, h: hw, w: hw };
    let rv = to_f64(&r);
    let (mut xv, wv, bv) = (to_f64(&x), to_f64(&layer.weights), to_f64(&layer.bias));
    let eval = |x: &[f64], w: &[f64], b: &[f64]| -> Eval {
        let (y, _) = conv_ref(x, &d, w, spec.out_channels, k, b, spec.stride, spec.padding);
        (dot(&y, &rv), Vec::new())
    };

    let mut res = CheckResult::new(name);
    let dw = scaled(g.d_weights.as_ref().expect("conv weight grad"), opts.perturb);
    compare(&mut res, &mut wv.clone(), dw.data(), |w| eval(&xv, w, &bv));
    compare(&mut res, &mut bv.clone(), g.d_bias.as_ref().expect("conv bias grad").data(), |b| eval(&xv, &wv, b));
    compare(&mut res, &mut xv, g.d_input.data(), |x| eval(x, &wv, &bv));
    Ok(res)
}

fn check_pool(rng: &mut Rng) -> Result<CheckResult> {
    // distinct values 0.01 apart: no ±STEP perturbation can change a winner
    let dims = [1, 2, 6, 7];
    let n: usize = dims.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let x = Tensor::from_vec(&dims, order.iter().map(|&i| i as f32 * 0.01).collect())?;
    let (out, cache) = PoolLayer::default().forward(&x)?;
    let r = random(rng, out.dims(), 1.0);
    let dx = PoolLayer::backward(&cache, &r)?;
    let rv = to_f64(&r);
    let d = Dims4 { n: 1, c: 2, h: 6, w: 7 };
    let mut res = CheckResult::new("maxpool");
    compare(&mut res, &mut to_f64(&x), dx.data(), |x| {
        let mut pattern = Vec::new();
        let (y, _) = pool_ref(x, &d, &mut pattern);
        (dot(&y, &rv), pattern)
    });
    Ok(res)
}

fn check_relu(rng: &mut Rng) -> Result<CheckResult> {
    let x = random(rng, &[3, 17], 1.0).map(|v| v.signum() * (0.1 + v.abs()));
    let r = random(rng, &[3, 17], 1.0);
    let y = relu_forward(&x);
    let dx = relu_backward(&y, &r)?;
    let rv = to_f64(&r);
    let mut res = CheckResult::new("relu");
    compare(&mut res, &mut to_f64(&x), dx.data(), |x| {
        let mut y = x.to_vec();
        let mut pattern = Vec::new();
        relu_ref(&mut y, &mut pattern);
        (dot(&y, &rv), pattern)
    });
    Ok(res)
}

fn check_dense(rng: &mut Rng, opts: &GradcheckOptions) -> Result<CheckResult> {
    let layer = DenseLayer::new(random(rng, &[4, 5], 0.5), random(rng, &[4], 0.5))?;
    let x = random(rng, &[3, 5], 1.0);
    let r = random(rng, &[3, 4], 1.0);
    let g = layer.backward(&x, &r)?;
    let rv = to_f64(&r);
    let (xv, wv, bv) = (to_f64(&x), to_f64(&layer.weights), to_f64(&layer.bias));
    let eval = |x: &[f64], w: &[f64], b: &[f64]| -> Eval { (dot(&dense_ref(x, 3, w, 4, b), &rv), Vec::new()) };
    let mut res = CheckResult::new("dense");
    let dw = scaled(g.d_weights.as_ref().expect("dense weight grad"), opts.perturb);
    compare(&mut res, &mut wv.clone(), dw.data(), |w| eval(&xv, w, &bv));
    compare(&mut res, &mut bv.clone(), g.d_bias.as_ref().expect("dense bias grad").data(), |b| eval(&xv, &wv, b));
    compare(&mut res, &mut xv.clone(), g.d_input.data(), |x| eval(x, &wv, &bv));
    Ok(res)
}

fn check_softmax_ce(rng: &mut Rng) -> Result<CheckResult> {
    let n = 6;
    let logits = random(rng, &[n, 2], 2.0);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let (_, d_logits) = cross_entropy_loss(&softmax(&logits)?, &labels, None)?;
    let mut res = CheckResult::new("softmax_cross_entropy");
    compare(&mut res, &mut to_f64(&logits), d_logits.data(), |z| (softmax_ce_ref(z, &labels), Vec::new()));
    Ok(res)
}

/// One check per parameterized layer of the tiny network, named `network/<layer>`.
fn check_network(rng: &mut Rng, opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    let cfg = NetworkConfig::tiny();
    let mut net = Network::build(cfg.clone(), rng)?;
    for (p, _) in net.params_and_velocities_mut().into_iter().skip(1).step_by(2) {
        *p = random(rng, p.dims(), 0.1);
    }
    let n = 4;
    let (h, w) = cfg.input_hw;
    let x = random(rng, &[n, cfg.input_channels, h, w], 1.0);
    let labels = [1u8, 0, 0, 1];
    let (probs, trace) = net.forward(&x)?;
    let (_, d_logits) = cross_entropy_loss(&probs, &labels, None)?;
    let grads = net.backward(&trace, &d_logits)?;

    let xv = to_f64(&x);
    let mut params: Vec<Vec<f64>> = net.params().into_iter().map(to_f64).collect();
    let names = net.param_names();
    let mut out = Vec::new();
    for pair in 0..names.len() / 2 {
        let layer = names[2 * pair].trim_end_matches(".weight");
        let mut res = CheckResult::new(&format!("network/{layer}"));
        for idx in [2 * pair, 2 * pair + 1] {
            let analytic = if idx % 2 == 0 {
                scaled(&grads.grads[idx], opts.perturb)
            } else {
                grads.grads[idx].clone()
            };
            let mut theta = std::mem::take(&mut params[idx]);
            compare(&mut res, &mut theta, analytic.data(), |t| {
                let mut ps: Vec<Vec<f64>> = params.clone();
                ps[idx] = t.to_vec();
                network_ref(&cfg, &ps, &xv, n, &labels)
            });
            params[idx] = theta;
        }
        out.push(res);
    }
    Ok(out)
}

/// Runs every layer check and the end-to-end check on the tiny network.
pub fn run_gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = Rng::new(derive_seed(seed, "gradcheck"));
    let mut checks = vec![
        check_conv("conv", &mut rng, ConvSpec::valid(3, 3), 2, 7, opts)?,
        check_conv(
            "conv_stride2_pad1",
            &mut rng,
            ConvSpec { out_channels: 2, kernel: 3, stride: 2, padding: 1 },
            2,
            6,
            opts,
        )?,
        check_pool(&mut rng)?,
        check_relu(&mut rng)?,
        check_dense(&mut rng, opts)?,
        check_softmax_ce(&mut rng)?,
    ];
    checks.extend(check_network(&mut rng, opts)?);
    Ok(GradcheckReport { checks })
}
