//! Dense row-major `f32` tensors.
//!
//! Image batches use `[batch, channels, height, width]` order. There are no
//! strided views and no broadcasting: every binary operation requires equal
//! shapes. Reductions accumulate in `f64` and round once.

mod io;
pub mod kernels;
mod rng;

pub use io::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use rng::{derive_seed, Rng};

use std::fmt;

use crate::error::{Error, Result};

/// Ordered list of extents, each at least 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::shape("shape must have at least one extent"));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("extent {i} of {dims:?} is zero")));
        }
        // The count must fit in a u64 and in the address space.
        let mut count: u64 = 1;
        for &d in &dims {
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))?;
        }
        if usize::try_from(count).is_err() {
            return Err(Error::shape(format!("element count of {dims:?} overflows")));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        f.write_str(&parts.join("×"))
    }
}

impl TryFrom<&[usize]> for Shape {
    type Error = Error;
    fn try_from(dims: &[usize]) -> Result<Self> {
        Shape::new(dims.to_vec())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "buffer of {} elements does not fit shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    /// I.i.d. Gaussian samples drawn from `rng` in row-major order.
    pub fn fill_normal(rng: &mut Rng, dims: &[usize], mean: f32, stddev: f32) -> Result<Self> {
        if !(stddev >= 0.0) || !stddev.is_finite() || !mean.is_finite() {
            return Err(Error::arg(format!(
                "normal fill needs finite mean and stddev >= 0, got mean={mean} stddev={stddev}"
            )));
        }
        let shape = Shape::new(dims.to_vec())?;
        let data = (0..shape.numel())
            .map(|_| mean + stddev * rng.standard_normal())
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let lead = self.dims()[0];
        if start >= end || end > lead {
            return Err(Error::shape(format!(
                "row range {start}..{end} outside leading extent {lead}"
            )));
        }
        let row = self.numel() / lead;
        let mut dims = self.dims().to_vec();
        dims[0] = end - start;
        Tensor::from_vec(&dims, self.data[start * row..end * row].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape(format!(
                    "stack of {} with {}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        Tensor::from_vec(&dims, data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|x| x * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&x| x as f64).sum()
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Audit for the all-finite invariant.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// Matrix product of `[M,K]` and `[K,N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("left matmul operand")?;
        let (k2, n) = other.as_matrix("right matmul operand")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut acc = vec![0.0f64; m * n];
        kernels::gemm_nn(m, k, n, &self.data, &other.data, &mut acc);
        Ok(Tensor::from_parts(
            Shape(vec![m, n]),
            kernels::round_f32(&acc),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose operand")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(Shape(vec![n, m]), out))
    }

    pub(crate) fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match *self.dims() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!(
                "{what} must be a matrix, got shape {}",
                self.shape
            ))),
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "operand shapes differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_dims(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(format!(
                "{what}: expected shape {dims:?}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Bitwise equality of shape and contents, so `-0.0 != 0.0` and NaNs compare by pattern.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::tensor::Rng;

    #[test]
    fn zeros_examples() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
        let big = Tensor::zeros(&[1, 50, 110, 110]).unwrap();
        assert_eq!(big.numel(), 605_000);
        assert!(big.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_rejects_zero_and_overflow() {
        assert!(matches!(Tensor::zeros(&[3, 0]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(
            Shape::new(vec![1 << 32, 1 << 32, 2]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fill_normal_degenerate_and_deterministic() {
        let mut rng = Rng::new(3);
        let t = Tensor::fill_normal(&mut rng, &[4, 5], 1.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&x| x == 1.5));

        let a = Tensor::fill_normal(&mut Rng::new(42), &[64, 64], 0.0, 1.0).unwrap();
        let b = Tensor::fill_normal(&mut Rng::new(42), &[64, 64], 0.0, 1.0).unwrap();
        assert!(a.bitwise_eq(&b));

        assert!(matches!(
            Tensor::fill_normal(&mut rng, &[2], 0.0, -1.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fill_normal_sample_mean() {
        let n = 100_000;
        let t = Tensor::fill_normal(&mut Rng::new(42), &[n], 0.0, 1.0).unwrap();
        let mean = t.sum() / n as f64;
        // 5 / sqrt(1e5)
        assert!(mean.abs() < 0.016, "sample mean {mean}");
    }

    #[test]
    fn matmul_examples() {
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(id.matmul(&a).unwrap().bitwise_eq(&a));

        let b = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);

        let c = Tensor::zeros(&[3, 2]).unwrap();
        assert!(matches!(a.matmul(&c), Err(Error::Shape(_))));
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f32> {
        let (m, k) = (a.dims()[0], a.dims()[1]);
        let n = b.dims()[1];
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f64;
                for p in 0..k {
                    s += a.data()[i * k + p] as f64 * b.data()[p * n + j] as f64;
                }
                out[i * n + j] = s as f32;
            }
        }
        out
    }

    #[test]
    fn matmul_7x5_by_5x3_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a = Tensor::fill_normal(&mut rng, &[7, 5], 0.0, 1.0).unwrap();
        let b = Tensor::fill_normal(&mut rng, &[5, 3], 0.0, 1.0).unwrap();
        let got = a.matmul(&b).unwrap();
        let want = Tensor::from_vec(&[7, 3], naive_matmul(&a, &b)).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-5);
    }

    #[test]
    fn elementwise_identities() {
        let t = Tensor::fill_normal(&mut Rng::new(5), &[3, 4], 0.0, 2.0).unwrap();
        assert!(t.scale(1.0).bitwise_eq(&t));
        assert!(t.add(&Tensor::zeros(&[3, 4]).unwrap()).unwrap().bitwise_eq(&t));
        assert!(t.sub(&t).unwrap().data().iter().all(|&x| x == 0.0));
        assert!(matches!(
            t.add(&Tensor::zeros(&[4, 3]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn check_finite_flags_nan() {
        let t = Tensor::from_vec(&[3], vec![1.0, f32::NAN, 2.0]).unwrap();
        assert!(matches!(t.check_finite("t"), Err(Error::Numeric(_))));
    }

    proptest! {
        #[test]
        fn scale_round_trip(seed in any::<u64>(), a in 1e-3f32..1e3, rows in 1usize..6, cols in 1usize..6) {
            let t = Tensor::fill_normal(&mut Rng::new(seed), &[rows, cols], 0.0, 1.0).unwrap();
            let back = t.scale(a).scale(1.0 / a);
            for (x, y) in t.data().iter().zip(back.data()) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(f32::MIN_POSITIVE));
            }
        }

        #[test]
        fn zeros_add_is_identity(seed in any::<u64>(), dims in proptest::collection::vec(1usize..5, 1..4)) {
            let t = Tensor::fill_normal(&mut Rng::new(seed), &dims, 0.0, 1.0).unwrap();
            prop_assert!(Tensor::zeros(&dims).unwrap().add(&t).unwrap().bitwise_eq(&t));
        }

        #[test]
        fn matmul_matches_oracle(seed in any::<u64>(), m in 1usize..64, k in 1usize..64, n in 1usize..64) {
            let mut rng = Rng::new(seed);
            let a = Tensor::fill_normal(&mut rng, &[m, k], 0.0, 1.0).unwrap();
            let b = Tensor::fill_normal(&mut rng, &[k, n], 0.0, 1.0).unwrap();
            let want = Tensor::from_vec(&[m, n], naive_matmul(&a, &b)).unwrap();
            prop_assert!(a.matmul(&b).unwrap().max_abs_diff(&want).unwrap() < 1e-5);
        }
    }
}
