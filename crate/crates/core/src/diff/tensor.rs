use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Tape operations treat every tensor as a matrix:
/// rank 0 is `1 x 1` and rank 1 is a single row.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let len = shape.iter().product();
        Tensor { shape, data: vec![value; len] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1, 1], data: vec![value] }
    }

    pub fn column(data: Vec<S>) -> Self {
        Tensor { shape: vec![data.len(), 1], data }
    }

    pub fn row(data: Vec<S>) -> Self {
        Tensor { shape: vec![1, data.len()], data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged rows"));
        }
        Ok(Tensor { shape: vec![rows.len(), cols], data: rows.concat() })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` under the matrix view.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            _ => {
                let cols = *self.shape.last().unwrap();
                (self.data.len() / cols.max(1), cols)
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::arg(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self (n x k) * other (k x m)`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Self> {
        let (n, k) = self.dims();
        let (k2, m) = other.dims();
        if k != k2 {
            return Err(Error::arg(format!("matmul shape mismatch {n}x{k} * {k2}x{m}")));
        }
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            let row = &self.data[i * k..(i + 1) * k];
            let dst = &mut out[i * m..(i + 1) * m];
            for (p, &a) in row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let src = &other.data[p * m..(p + 1) * m];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(Tensor { shape: vec![n, m], data: out })
    }

    /// `self^T (k x n)^T * other (k x m)` without materialising the transpose.
    pub(crate) fn t_matmul(&self, other: &Tensor<S>) -> Self {
        let (k, n) = self.dims();
        let (_, m) = other.dims();
        let mut out = vec![S::zero(); n * m];
        for p in 0..k {
            let a_row = &self.data[p * n..(p + 1) * n];
            let b_row = &other.data[p * m..(p + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == S::zero() {
                    continue;
                }
                let dst = &mut out[i * m..(i + 1) * m];
                for (d, &b) in dst.iter_mut().zip(b_row) {
                    *d += a * b;
                }
            }
        }
        Tensor { shape: vec![n, m], data: out }
    }

    /// `self (n x m) * other^T` where `other` is `k x m`.
    pub(crate) fn matmul_t(&self, other: &Tensor<S>) -> Self {
        let (n, m) = self.dims();
        let (k, _) = other.dims();
        let mut out = vec![S::zero(); n * k];
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            for j in 0..k {
                let b_row = &other.data[j * m..(j + 1) * m];
                out[i * k + j] = a_row.iter().zip(b_row).map(|(&a, &b)| a * b).sum();
            }
        }
        Tensor { shape: vec![n, k], data: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_and_transposes_agree() {
        let a = Tensor::<f64>::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
        // a^T a via t_matmul equals explicit product.
        let ata = a.t_matmul(&a);
        assert_eq!(ata.data(), &[17., 22., 27., 22., 29., 36., 27., 36., 45.]);
        let aat = a.matmul_t(&a);
        assert_eq!(aat.data(), &[14., 32., 32., 77.]);
        assert!(a.matmul(&a).is_err());
    }
}
