use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`]. Implemented for `f32` (training) and `f64`
/// (gradient checks and oracle comparisons).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Tag written into checkpoints.
    const DTYPE_TAG: u8;

    /// `c = alpha * a * b + beta * c` over strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    /// In-place logistic function.
    fn sigmoid_in_place(values: &mut [Self]) {
        for v in values {
            *v = if *v >= Self::zero() {
                Self::one() / (Self::one() + (-*v).exp())
            } else {
                let e = v.exp();
                e / (Self::one() + e)
            };
        }
    }

    fn tanh_in_place(values: &mut [Self]) {
        for v in values {
            *v = v.tanh();
        }
    }
}

/// `exp` for f32 written so that loops over it vectorize: Cody-Waite range
/// reduction to `r ∈ [-ln2/2, ln2/2]` and a degree-6 minimax polynomial.
/// Relative error stays within a few ulp over the clamped domain.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.0, 88.0);
    let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
    let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
    let p = 1.987_569_1e-4;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
    y * scale
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 4;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn sigmoid_in_place(values: &mut [Self]) {
        for v in values {
            *v = 1.0 / (1.0 + exp_f32(-*v));
        }
    }

    fn tanh_in_place(values: &mut [Self]) {
        for v in values {
            *v = 2.0 / (1.0 + exp_f32(-2.0 * *v)) - 1.0;
        }
    }
}

impl Scalar for f64 {
    const DTYPE_TAG: u8 = 8;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dense row-major tensor. Every tensor that flows through a [`Graph`](super::Graph)
/// is rank 2; other ranks only appear in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        Self::from_vec(vec![rows, cols], data)
    }

    /// Builds a matrix from `f64` values, converting to `T`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::matrix(rows, cols, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn scalar(value: T) -> Self {
        Self::matrix(1, 1, vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            other => panic!("expected rank-2 tensor, got shape {other:?}"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        let cols = self.cols();
        self.data[r * cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.cols();
        &self.data[r * cols..(r + 1) * cols]
    }

    /// The single value of a 1×1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// Converts element type, keeping the shape.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_f64()
            .iter()
            .zip(other.to_f64())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `a (m×k) · b (k×n)`, with optional transposition of either operand.
pub(crate) fn matmul_into<T: Scalar>(
    a: &Tensor<T>,
    trans_a: bool,
    b: &Tensor<T>,
    trans_b: bool,
    out: &mut Tensor<T>,
    accumulate: bool,
) {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    assert_eq!(k, k2, "inner extents differ");
    assert_eq!(out.dims2(), (m, n));
    let beta = if accumulate { T::one() } else { T::zero() };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents and strides describe the exact row-major buffers owned
    // by `a`, `b` and `out`; `out` does not alias the inputs.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = a.dims2();
        let n = b.cols();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a.at(i, p) * b.at(p, j);
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    #[test]
    fn transposed_products_match_naive() {
        let a = Tensor::<f64>::from_f64(3, 4, &(0..12).map(|v| v as f64 * 0.3 - 1.0).collect::<Vec<_>>());
        let b = Tensor::<f64>::from_f64(4, 2, &(0..8).map(|v| (v as f64).sin()).collect::<Vec<_>>());
        let mut out = Tensor::zeros(&[3, 2]);
        matmul_into(&a, false, &b, false, &mut out, false);
        assert!(out.max_abs_diff(&naive(&a, &b)) < 1e-12);

        let at = Tensor::matrix(4, 3, (0..12).map(|i| a.at(i % 3, i / 3)).collect());
        let mut out2 = Tensor::zeros(&[3, 2]);
        matmul_into(&at, true, &b, false, &mut out2, false);
        assert!(out2.max_abs_diff(&out) < 1e-12);
    }

    #[test]
    fn fast_f32_transcendentals_track_std() {
        let xs: Vec<f32> = (-2000..=2000).map(|i| i as f32 * 0.01).collect();
        for &x in &xs {
            let e = exp_f32(x);
            assert!(((e as f64) - (x as f64).exp()).abs() <= 4e-7 * (x as f64).exp(), "exp({x})");
        }
        let mut s = xs.clone();
        f32::sigmoid_in_place(&mut s);
        let mut t = xs.clone();
        f32::tanh_in_place(&mut t);
        for ((&x, &sv), &tv) in xs.iter().zip(&s).zip(&t) {
            let x = x as f64;
            assert!((sv as f64 - 1.0 / (1.0 + (-x).exp())).abs() < 2e-7);
            assert!((tv as f64 - x.tanh()).abs() < 4e-7);
        }
        let mut big = vec![1e4f32, -1e4, 0.0];
        f32::sigmoid_in_place(&mut big);
        assert_eq!(big[2], 0.5);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    #[should_panic(expected = "data length")]
    fn rejects_inconsistent_shape() {
        let _ = Tensor::<f32>::from_vec(vec![2, 2], vec![1.0; 3]);
    }
}
