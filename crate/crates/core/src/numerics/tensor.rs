use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit reals.
///
/// Vectors have rank 1, matrices rank 2. Scalars are stored as the
/// one-element vector `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::shape(format!("tensor extents must be positive, got {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} need {n} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; n] }
    }

    /// Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self { dims: vec![data.len()], data }
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: vec![1], data: vec![value] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_vector(&self) -> bool {
        self.dims.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.dims.len() == 2
    }

    /// Row count of a matrix (or length of a vector).
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Column count of a matrix; 1 for a vector.
    pub fn cols(&self) -> usize {
        if self.dims.len() >= 2 {
            self.dims[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub(crate) fn same_dims(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{what}: left operand {:?} vs right operand {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_vector(&self, what: &str) -> Result<usize> {
        if !self.is_vector() {
            return Err(Error::shape(format!("{what}: expected a vector, got {:?}", self.dims)));
        }
        Ok(self.dims[0])
    }

    pub(crate) fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if !self.is_matrix() {
            return Err(Error::shape(format!("{what}: expected a matrix, got {:?}", self.dims)));
        }
        Ok((self.dims[0], self.dims[1]))
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn scale_assign(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, _) = w.expect_matrix("affine weight")?;
        if b.dims != [m] {
            return Err(Error::shape(format!(
                "affine: weight {:?} vs bias {:?}",
                w.dims, b.dims
            )));
        }
        let mut out = Tensor::matvec(w, x)?;
        axpy(1.0, &b.data, &mut out.data);
        Ok(out)
    }

    /// `W x`.
    pub fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (m, n) = w.expect_matrix("matvec weight")?;
        if x.dims != [n] {
            return Err(Error::shape(format!(
                "matvec: weight {:?} vs input {:?}",
                w.dims, x.dims
            )));
        }
        let data = (0..m).map(|i| dot(w.row(i), &x.data)).collect();
        Ok(Tensor { dims: vec![m], data })
    }

    /// `Mᵀ x`.
    pub fn tmatvec(m: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = m.expect_matrix("tmatvec matrix")?;
        if x.dims != [rows] {
            return Err(Error::shape(format!(
                "tmatvec: matrix {:?} vs input {:?}",
                m.dims, x.dims
            )));
        }
        let mut out = vec![0.0; cols];
        for (i, &xi) in x.data.iter().enumerate() {
            axpy(xi, m.row(i), &mut out);
        }
        Ok(Tensor { dims: vec![cols], data: out })
    }

    /// `X Wᵀ`: applies `W` to every row of `X`.
    pub fn matmul_nt(x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (l, n) = x.expect_matrix("matmul rows")?;
        let (m, n2) = w.expect_matrix("matmul weight")?;
        if n != n2 {
            return Err(Error::shape(format!(
                "matmul: rows {:?} vs weight {:?}",
                x.dims, w.dims
            )));
        }
        let mut data = Vec::with_capacity(l * m);
        for t in 0..l {
            let xr = x.row(t);
            data.extend((0..m).map(|i| dot(w.row(i), xr)));
        }
        Ok(Tensor { dims: vec![l, m], data })
    }

    /// Numerically stable softmax of a vector.
    pub fn softmax(e: &Tensor) -> Result<Tensor> {
        e.expect_vector("softmax")?;
        Ok(Tensor { dims: e.dims.clone(), data: softmax(&e.data)? })
    }

    pub fn log_softmax(e: &Tensor) -> Result<Tensor> {
        e.expect_vector("log_softmax")?;
        let max = e.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.data.iter().map(|&v| (v - max).exp()).sum();
        let lz = max + z.ln();
        Ok(e.map(|v| v - lz))
    }

    /// Filter responses of the kernel bank `q` (`F × K`, `K` odd) along
    /// the time axis of `a`, for output rows `start..end`. Row `l` holds
    /// the `F` responses centered at position `l`; positions outside the
    /// sequence read as zero.
    pub fn conv1d_time_rows(q: &Tensor, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        let (f, k) = q.expect_matrix("conv1d kernel bank")?;
        let l = a.expect_vector("conv1d signal")?;
        if k % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel width must be odd, got {k}")));
        }
        if start >= end || end > l {
            return Err(Error::shape(format!("conv1d rows {start}..{end} outside 0..{l}")));
        }
        let half = (k / 2) as isize;
        let mut data = vec![0.0; (end - start) * f];
        for (r, pos) in (start..end).enumerate() {
            for fi in 0..f {
                let taps = q.row(fi);
                let mut acc = 0.0;
                for (j, &w) in taps.iter().enumerate() {
                    let src = pos as isize + j as isize - half;
                    if src >= 0 && (src as usize) < l {
                        acc += w * a.data[src as usize];
                    }
                }
                data[r * f + fi] = acc;
            }
        }
        Ok(Tensor { dims: vec![end - start, f], data })
    }

    pub fn conv1d_time(q: &Tensor, a: &Tensor) -> Result<Tensor> {
        let l = a.expect_vector("conv1d signal")?;
        Self::conv1d_time_rows(q, a, 0, l)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(e: &[f64]) -> Result<Vec<f64>> {
    if e.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = e.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    Ok(out)
}

/// Dot product with four independent accumulators. The summation order
/// is fixed, so results are bitwise reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a·x`.
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_examples() {
        let w = Tensor::zeros(&[2, 3]);
        let b = Tensor::vector(vec![1.0, 2.0]);
        let x = Tensor::vector(vec![7.0, -1.0, 3.0]);
        assert_eq!(Tensor::affine(&w, &x, &b).unwrap().data(), &[1.0, 2.0]);

        let out = Tensor::affine(
            &Tensor::identity(2),
            &Tensor::vector(vec![3.0, 4.0]),
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);

        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = Tensor::affine(&w, &Tensor::vector(vec![1.0, 1.0]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_mismatch_names_both_operands() {
        let w = Tensor::zeros(&[2, 3]);
        let err = Tensor::affine(&w, &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
        assert_eq!(err.category(), "shape");
    }

    #[test]
    fn softmax_examples() {
        let s = Tensor::softmax(&Tensor::vector(vec![0.0; 3])).unwrap();
        for &p in s.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = Tensor::softmax(&Tensor::vector(vec![0.0, 2f64.ln()])).unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let s = Tensor::softmax(&Tensor::vector(vec![1000.0, 1000.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_empty_is_domain_error() {
        assert_eq!(softmax(&[]).unwrap_err().category(), "domain");
    }

    #[test]
    fn conv_examples() {
        let q = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
        let out = Tensor::conv1d_time(&q, &Tensor::vector(vec![5.0, 6.0, 7.0])).unwrap();
        assert_eq!(out.dims(), &[3, 1]);
        assert_eq!(out.data(), &[5.0, 6.0, 7.0]);

        let q = Tensor::matrix(1, 3, vec![1.0, 1.0, 1.0]).unwrap();
        let out = Tensor::conv1d_time(&q, &Tensor::vector(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn conv_even_kernel_rejected() {
        let q = Tensor::zeros(&[2, 4]);
        let err = Tensor::conv1d_time(&q, &Tensor::vector(vec![1.0; 5])).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..7).map(f64::from).collect();
        let b = vec![1.0; 7];
        assert_eq!(dot(&a, &b), 21.0);
    }
}
