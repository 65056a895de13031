//! Dense row-major tensors.
//!
//! Rank 0 (scalar), 1 (vector) and 2 (matrix) cover everything the
//! encoder needs; there is no broadcasting beyond the few patterns the
//! model uses (bias rows, scalar scaling).

use crate::error::{CoreError, Result};
use std::fmt;

/// Scalar type the engine is generic over. `f32` is the default
/// training precision; `f64` is used by the gradient-check oracles.
pub trait Real:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
}

/// Dense real array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(CoreError::Shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel = dims.iter().product();
        Tensor { dims, data: vec![F::zero(); numel] }
    }

    pub fn full(dims: Vec<usize>, value: F) -> Self {
        let numel = dims.iter().product();
        Tensor { dims, data: vec![value; numel] }
    }

    pub fn scalar(value: F) -> Self {
        Tensor { dims: vec![], data: vec![value] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = F::one();
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.dims.iter().all(|&d| d == 1)
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> F {
        assert!(self.is_scalar(), "item() on non-scalar tensor {:?}", self.dims);
        self.data[0]
    }

    /// Rows of a rank-2 tensor (rank-1 counts as a single row).
    pub fn rows(&self) -> usize {
        match self.dims.len() {
            2 => self.dims[0],
            1 => 1,
            _ => panic!("rows() on rank-{} tensor", self.dims.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.dims.len() {
            2 => self.dims[1],
            1 => self.dims[0],
            _ => panic!("cols() on rank-{} tensor", self.dims.len()),
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G) -> Tensor<G> {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.to_f64() as f32)
    }

    /// Sum of squares of all elements.
    pub fn sq_norm(&self) -> F {
        let mut acc = F::zero();
        for &v in &self.data {
            acc += v * v;
        }
        acc
    }
}

/// out = a (m×k) · b (k×n), accumulated into a fresh buffer.
pub fn matmul<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(CoreError::Shape(format!(
            "matmul inner dims: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = vec![F::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// out (m×n) += a (m×k) · b (k×n). ikj loop order so the inner loop
/// runs over contiguous rows of `b` and `out`.
pub fn matmul_into<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out (m×n) += a (m×k) · b (n×k)ᵀ.
pub fn matmul_nt_into<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out (m×n) += a (k×m)ᵀ · b (k×n).
pub fn matmul_tn_into<F: Real>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::<f64>::identity(2);
        let a = Tensor::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = matmul(&i2, &a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_projector() {
        let p = Tensor::<f64>::from_rows(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = Tensor::from_rows(2, 1, vec![5.0, 7.0]).unwrap();
        let out = matmul(&p, &v).unwrap();
        assert_eq!(out.data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_dim_mismatch() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![2, 3]);
        assert!(matches!(matmul(&a, &b), Err(CoreError::Shape(_))));
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        // a: 2x3, b: 3x2
        let a = vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut plain = vec![0.0; 4];
        matmul_into(&a, &b, &mut plain, 2, 3, 2);

        // a · b == a · (bᵀ)ᵀ via matmul_nt with b stored transposed (2x3)
        let bt = vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut nt = vec![0.0; 4];
        matmul_nt_into(&a, &bt, &mut nt, 2, 3, 2);
        assert_eq!(plain, nt);

        // a · b == (aᵀ)ᵀ · b via matmul_tn with a stored transposed (3x2)
        let at = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut tn = vec![0.0; 4];
        matmul_tn_into(&at, &b, &mut tn, 2, 3, 2);
        assert_eq!(plain, tn);
    }
}
