//! Dense row-major n-dimensional arrays.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// A dense, row-major n-dimensional array.
///
/// A zero-dimensional tensor (empty shape) holds exactly one value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::invalid(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// 1-D tensor.
    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Converts element type (rounding when narrowing).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(TensorError::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(i, n)| i >= n) {
            return Err(TensorError::invalid(format!(
                "index {index:?} out of bounds for shape {:?}",
                self.shape
            )));
        }
        Ok(index
            .iter()
            .zip(strides(&self.shape))
            .map(|(i, s)| i * s)
            .sum())
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let o = self.offset(index)?;
        self.data[o] = value;
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(TensorError::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::shape("zip_map", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other` for same-shaped tensors.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: T) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// General axis permutation.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if axes.len() != n
            || axes
                .iter()
                .any(|&a| a >= n || std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::invalid(format!(
                "bad permutation {axes:?} for shape {:?}",
                self.shape
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = strides(&self.shape);
        let mapped: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        for_each_index(&out_shape, |idx| {
            let off: usize = idx.iter().zip(&mapped).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
        });
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let n = self.ndim();
        if n < 2 {
            return Err(TensorError::invalid("transpose needs at least 2 dims"));
        }
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 1, n - 2);
        self.permute(&axes)
    }

    /// Plain 2-D matrix product, optionally transposing either operand.
    pub fn matmul_ex(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return Err(TensorError::shape("matmul", &self.shape, &other.shape));
        }
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (other.shape[0], other.shape[1]);
        let (m, k, rsa, csa) = if trans_a {
            (ac, ar, 1isize, ac as isize)
        } else {
            (ar, ac, ac as isize, 1)
        };
        let (k2, n, rsb, csb) = if trans_b {
            (bc, br, 1isize, bc as isize)
        } else {
            (br, bc, bc as isize, 1)
        };
        if k != k2 {
            return Err(TensorError::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            rsa,
            csa,
            &other.data,
            rsb,
            csb,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_ex(other, false, false)
    }
}

/// Calls `f` with every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Result shape of broadcasting `a` against `b` with trailing-dimension
/// alignment.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i < n - a.len() {
            1
        } else {
            a[i - (n - a.len())]
        };
        let db = if i < n - b.len() {
            1
        } else {
            b[i - (n - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides that read `in_shape` as if broadcast to `out_shape` (0 on
/// broadcast axes).
pub(crate) fn broadcast_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let offset = out_shape.len() - in_shape.len();
    let s = strides(in_shape);
    (0..out_shape.len())
        .map(|i| {
            if i < offset || in_shape[i - offset] == 1 {
                0
            } else {
                s[i - offset]
            }
        })
        .collect()
}

/// Source offsets of `in_shape` for every element of `out_shape`.
pub(crate) fn broadcast_index_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let n_in = numel(in_shape);
    let n_out = numel(out_shape);
    if in_shape == out_shape {
        return (0..n_out).collect();
    }
    // Suffix broadcast (e.g. a bias row) is the hot path.
    let offset = out_shape.len() - in_shape.len();
    if in_shape.iter().all(|&d| d != 1 || n_in == 1) && out_shape[offset..] == *in_shape {
        return (0..n_out).map(|i| i % n_in.max(1)).collect();
    }
    let bs = broadcast_strides(in_shape, out_shape);
    let mut map = Vec::with_capacity(n_out);
    for_each_index(out_shape, |idx| {
        map.push(idx.iter().zip(&bs).map(|(i, s)| i * s).sum());
    });
    map
}

impl<T: Scalar> Tensor<T> {
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self> {
        match broadcast_shape(&self.shape, shape) {
            Some(s) if s == shape => {}
            _ => return Err(TensorError::shape("broadcast_to", &self.shape, shape)),
        }
        let map = broadcast_index_map(&self.shape, shape);
        Ok(Self {
            shape: shape.to_vec(),
            data: map.into_iter().map(|i| self.data[i]).collect(),
        })
    }

    /// Sums a broadcast gradient back down to `target` shape.
    pub fn reduce_to(&self, target: &[usize]) -> Result<Self> {
        if self.shape == target {
            return Ok(self.clone());
        }
        match broadcast_shape(target, &self.shape) {
            Some(s) if s == self.shape => {}
            _ => return Err(TensorError::shape("reduce_to", &self.shape, target)),
        }
        let map = broadcast_index_map(target, &self.shape);
        let mut out = vec![T::zero(); numel(target)];
        for (&src, &g) in map.iter().zip(&self.data) {
            out[src] += g;
        }
        Ok(Self {
            shape: target.to_vec(),
            data: out,
        })
    }

    /// Broadcasting elementwise binary map.
    pub fn broadcast_zip(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| TensorError::shape(op, &self.shape, &other.shape))?;
        if self.shape == other.shape {
            return self.zip_map(other, f);
        }
        let ma = broadcast_index_map(&self.shape, &shape);
        let mb = broadcast_index_map(&other.shape, &shape);
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| f(self.data[i], other.data[j]))
            .collect();
        Ok(Self { shape, data })
    }
}
