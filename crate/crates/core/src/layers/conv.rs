//! 2-D cross-correlation lowered to matrix multiplication (im2col).

use super::LayerGrads;
use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn, round_f32};
use crate::tensor::Tensor;

/// Convolution over `[N, C_in, H, W]` input with weights `[C_out, C_in, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

/// Extent of a valid sliding window, or `None` when the kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_ch: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    /// Input coordinate for output position `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k)
            .checked_sub(self.padding)
            .filter(|&i| i < extent)
    }
}

/// Unrolls one sample into `col: [C_in·kh·kw, out_h·out_w]`.
fn im2col(g: &Geometry, input: &[f32], col: &mut [f32]) {
    let n_out = g.out_len();
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut col[row * n_out..(row + 1) * n_out];
                for oy in 0..g.out_h {
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.source(oy, ky, g.in_h) {
                        None => line.fill(0.0),
                        Some(iy) if g.stride == 1 && g.padding == 0 => {
                            let start = iy * g.in_w + kx;
                            line.copy_from_slice(&plane[start..start + g.out_w]);
                        }
                        Some(iy) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = g
                                    .source(ox, kx, g.in_w)
                                    .map_or(0.0, |ix| plane[iy * g.in_w + ix]);
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatters `col` gradients back onto one sample's input gradient.
fn col2im(g: &Geometry, col: &[f64], d_input: &mut [f64]) {
    let n_out = g.out_len();
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut d_input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &col[row * n_out..(row + 1) * n_out];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.in_h) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.in_w) {
                            plane[iy * g.in_w + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let &[out_ch, _, _, _] = weights.dims() else {
            return Err(Error::shape(format!(
                "conv weights must be [out, in, kh, kw], got {}",
                weights.shape()
            )));
        };
        bias.expect_dims(&[out_ch], "conv bias")?;
        if stride == 0 {
            return Err(Error::arg("conv stride must be positive"));
        }
        Ok(ConvLayer {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.dims()[2], self.weights.dims()[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        Some((
            conv_output_extent(h, kh, self.stride, self.padding)?,
            conv_output_extent(w, kw, self.stride, self.padding)?,
        ))
    }

    fn geometry(&self, input: &Tensor) -> Result<(usize, Geometry)> {
        let &[n, c, h, w] = input.dims() else {
            return Err(Error::shape(format!(
                "conv input must be [N, C, H, W], got {}",
                input.shape()
            )));
        };
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (kh, kw) = self.kernel();
        let (out_h, out_w) = self.output_hw(h, w).ok_or_else(|| {
            Error::shape(format!("{kh}×{kw} kernel does not fit a {h}×{w} input"))
        })?;
        Ok((
            n,
            Geometry {
                in_ch: c,
                in_h: h,
                in_w: w,
                kh,
                kw,
                out_h,
                out_w,
                stride: self.stride,
                padding: self.padding,
            },
        ))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, g) = self.geometry(input)?;
        let out_ch = self.out_channels();
        let (k, hw) = (g.patch_len(), g.out_len());
        let mut col = vec![0.0f32; k * hw];
        let mut acc = vec![0.0f64; out_ch * hw];
        let mut out = Vec::with_capacity(n * out_ch * hw);
        for sample in input.data().chunks_exact(g.in_len()) {
            im2col(&g, sample, &mut col);
            for (row, &b) in acc.chunks_exact_mut(hw).zip(self.bias.data()) {
                row.fill(b as f64);
            }
            gemm_nn(out_ch, k, hw, self.weights.data(), &col, &mut acc);
            out.extend(acc.iter().map(|&x| x as f32));
        }
        Tensor::from_vec(&[n, out_ch, g.out_h, g.out_w], out)
    }

    pub fn backward(&self, input: &Tensor, d_output: &Tensor) -> Result<LayerGrads> {
        self.backward_impl(input, d_output, true)
    }

    /// Backward pass; `d_input` is left as zeros when `want_input_grad` is false.
    pub(crate) fn backward_impl(
        &self,
        input: &Tensor,
        d_output: &Tensor,
        want_input_grad: bool,
    ) -> Result<LayerGrads> {
        let (n, g) = self.geometry(input)?;
        let out_ch = self.out_channels();
        d_output.expect_dims(&[n, out_ch, g.out_h, g.out_w], "conv d_output")?;
        let (k, hw) = (g.patch_len(), g.out_len());

        let mut col = vec![0.0f32; k * hw];
        let mut d_col = vec![0.0f64; k * hw];
        let mut d_w = vec![0.0f64; out_ch * k];
        let mut d_b = vec![0.0f64; out_ch];
        let mut d_in = vec![0.0f64; if want_input_grad { g.in_len() } else { 0 }];
        let mut d_input = Vec::with_capacity(if want_input_grad { n * g.in_len() } else { 0 });

        for (sample, d_out) in input
            .data()
            .chunks_exact(g.in_len())
            .zip(d_output.data().chunks_exact(out_ch * hw))
        {
            for (db, row) in d_b.iter_mut().zip(d_out.chunks_exact(hw)) {
                *db += row.iter().map(|&x| x as f64).sum::<f64>();
            }
            im2col(&g, sample, &mut col);
            gemm_nt(out_ch, hw, k, d_out, &col, &mut d_w);
            if want_input_grad {
                d_col.fill(0.0);
                gemm_tn(k, out_ch, hw, self.weights.data(), d_out, &mut d_col);
                d_in.fill(0.0);
                col2im(&g, &d_col, &mut d_in);
                d_input.extend(d_in.iter().map(|&x| x as f32));
            }
        }

        let d_input = if want_input_grad {
            Tensor::from_vec(input.dims(), d_input)?
        } else {
            Tensor::zeros(input.dims())?
        };
        Ok(LayerGrads {
            d_weights: Some(Tensor::from_vec(self.weights.dims(), round_f32(&d_w))?),
            d_bias: Some(Tensor::from_vec(&[out_ch], round_f32(&d_b))?),
            d_input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn layer(out_ch: usize, in_ch: usize, k: usize, seed: u64) -> ConvLayer {
        let mut rng = Rng::new(seed);
        ConvLayer::new(
            Tensor::fill_normal(&mut rng, &[out_ch, in_ch, k, k], 0.0, 1.0).unwrap(),
            Tensor::fill_normal(&mut rng, &[out_ch], 0.0, 1.0).unwrap(),
            1,
            0,
        )
        .unwrap()
    }

    /// Direct six-loop cross-correlation.
    fn naive(layer: &ConvLayer, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.dims().try_into().unwrap();
        let [o, _, kh, kw] = layer.weights.dims().try_into().unwrap();
        let (s, p) = (layer.stride as isize, layer.padding as isize);
        let (oh, ow) = layer.output_hw(h, w).unwrap();
        let wt = layer.weights.data();
        let xd = x.data();
        let mut out = vec![0.0f32; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s_acc = layer.bias.data()[oc] as f64;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = y as isize * s + ky as isize - p;
                                    let ix = xx as isize * s + kx as isize - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = xd[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                    let wv = wt[((oc * c + ic) * kh + ky) * kw + kx];
                                    s_acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        out[((b * o + oc) * oh + y) * ow + xx] = s_acc as f32;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, o, oh, ow], out).unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        let l = ConvLayer::new(
            Tensor::full(&[1, 1, 2, 2], 1.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            1,
            0,
        )
        .unwrap();
        let y = l.forward(&Tensor::full(&[1, 1, 3, 3], 1.0).unwrap()).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let l = ConvLayer::new(
            Tensor::full(&[1, 1, 1, 1], 1.0).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
            1,
            0,
        )
        .unwrap();
        let x = Tensor::fill_normal(&mut Rng::new(2), &[2, 1, 5, 4], 0.0, 1.0).unwrap();
        assert!(l.forward(&x).unwrap().bitwise_eq(&x));
    }

    #[test]
    fn matches_naive_loop() {
        let l = layer(4, 3, 3, 7);
        let x = Tensor::fill_normal(&mut Rng::new(8), &[2, 3, 8, 8], 0.0, 1.0).unwrap();
        let got = l.forward(&x).unwrap();
        assert_eq!(got.dims(), &[2, 4, 6, 6]);
        assert!(got.max_abs_diff(&naive(&l, &x)).unwrap() < 1e-5);
    }

    #[test]
    fn strided_padded_matches_naive_loop() {
        let mut l = layer(3, 2, 3, 9);
        l.stride = 2;
        l.padding = 1;
        let x = Tensor::fill_normal(&mut Rng::new(10), &[1, 2, 7, 6], 0.0, 1.0).unwrap();
        let got = l.forward(&x).unwrap();
        assert_eq!(got.dims(), &[1, 3, 4, 3]);
        assert!(got.max_abs_diff(&naive(&l, &x)).unwrap() < 1e-5);
    }

    #[test]
    fn shape_errors() {
        let l = layer(2, 3, 3, 1);
        assert!(matches!(
            l.forward(&Tensor::zeros(&[1, 2, 5, 5]).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            l.forward(&Tensor::zeros(&[1, 3, 2, 5]).unwrap()),
            Err(Error::Shape(_))
        ));
        let x = Tensor::zeros(&[1, 3, 5, 5]).unwrap();
        assert!(matches!(
            l.backward(&x, &Tensor::zeros(&[1, 2, 4, 4]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let l = layer(2, 3, 3, 3);
        let x = Tensor::fill_normal(&mut Rng::new(4), &[2, 3, 6, 6], 0.0, 1.0).unwrap();
        let g = l.backward(&x, &Tensor::zeros(&[2, 2, 4, 4]).unwrap()).unwrap();
        assert!(g.d_weights.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_channel_sum() {
        let l = layer(3, 1, 2, 5);
        let x = Tensor::fill_normal(&mut Rng::new(6), &[2, 1, 4, 4], 0.0, 1.0).unwrap();
        let dy = Tensor::fill_normal(&mut Rng::new(7), &[2, 3, 3, 3], 0.0, 1.0).unwrap();
        let g = l.backward(&x, &dy).unwrap();
        let db = g.d_bias.unwrap();
        for c in 0..3 {
            let want: f64 = (0..2)
                .flat_map(|b| dy.data()[(b * 3 + c) * 9..(b * 3 + c + 1) * 9].iter())
                .map(|&v| v as f64)
                .sum();
            assert!((db.data()[c] as f64 - want).abs() < 1e-5);
        }
    }
}
