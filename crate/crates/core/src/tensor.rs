//! Dense row-major f64 tensors. This is the substrate for the attention
//! kernels, the denoiser, and the gradient checks; shapes are dynamic and
//! `reshape` never copies.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("{} elements for shape {:?}", len, shape),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor {
            shape,
            data: (0..len).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Row-major strides derived from the shape.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    /// Scalar extraction; the tensor must hold exactly one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of len {}", self.data.len());
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (d, (&i, &s)) in index.iter().zip(&self.shape).enumerate() {
            assert!(i < s, "index {} out of bounds for dim {} of size {}", i, d, s);
            flat = flat * s + i;
        }
        flat
    }

    /// Metadata-only reshape; the element count must be preserved and the
    /// underlying buffer is reused as-is.
    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::dim(
                "Tensor::reshape",
                format!("{} elements", self.data.len()),
                format!("shape {:?} = {} elements", shape, len),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Axis permutation. Unlike `reshape` this materializes a new buffer.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.shape.len() {
            return Err(Error::dim(
                "Tensor::permute",
                format!("{} axes", self.shape.len()),
                format!("{} axes", perm.len()),
            ));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidArgument(format!("invalid permutation {:?}", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = self.strides();
        let mut out = vec![0.0; self.data.len()];
        // Walk output positions in order, reading the permuted input index.
        let ndim = out_shape.len();
        let mut idx = vec![0usize; ndim];
        for slot in out.iter_mut() {
            let mut src = 0;
            for d in 0..ndim {
                src += idx[d] * in_strides[perm[d]];
            }
            *slot = self.data[src];
            for d in (0..ndim).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor::new(out_shape, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c += a @ b` with `a: m x k`, `b: k x n`, all row-major. `mul_add` maps
/// onto the FMA units; the contraction order is fixed, so results are
/// reproducible for a given build.
pub(crate) fn gemm_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = av.mul_add(bv, *cv);
            }
        }
    }
}

/// `c += a @ b^T` with `a: m x k`, `b: n x k`.
pub(crate) fn gemm_acc_tb(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s = x.mul_add(*y, s);
            }
            *cv += s;
        }
    }
}

/// `c += a^T @ b` with `a: m x k`, `b: m x n`, `c: k x n`.
pub(crate) fn gemm_acc_ta(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = av.mul_add(bv, *cv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::zeros([2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn reshape_keeps_buffer() {
        let t = Tensor::new([2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.clone().reshape([3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.clone().reshape([4, 2]).is_err());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let t = Tensor::new([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_roundtrip_6d() {
        let t = Tensor::from_fn([2, 3, 2, 1, 2, 2], |i| i as f64);
        let perm = [0, 2, 3, 4, 1, 5];
        let inv = [0, 4, 1, 2, 3, 5];
        let back = t.permute(&perm).unwrap().permute(&inv).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn gemm_variants_agree() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_acc(&mut c, &a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);

        // a @ b == a @ (b^T)^T
        let bt = Tensor::new([3, 2], b.clone()).unwrap().permute(&[1, 0]).unwrap();
        let mut c2 = vec![0.0; 4];
        gemm_acc_tb(&mut c2, &a, bt.data(), 2, 3, 2);
        assert_eq!(c, c2);

        // a^T @ b == transpose(a) @ b
        let d = vec![1.0, 2.0, 3.0, 4.0]; // 2x2
        let mut c3 = vec![0.0; 6];
        gemm_acc_ta(&mut c3, &a, &d, 2, 3, 2);
        let at = Tensor::new([2, 3], a).unwrap().permute(&[1, 0]).unwrap();
        let mut c4 = vec![0.0; 6];
        gemm_acc(&mut c4, at.data(), &d, 3, 2, 2);
        assert_eq!(c3, c4);
    }
}
