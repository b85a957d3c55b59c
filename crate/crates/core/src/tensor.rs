//! Dense row-major `f64` tensors of rank 0 to 3.
//!
//! Broadcasting follows the usual rule restricted to equal-rank operands:
//! along every axis the two extents must match or one of them must be 1.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{} values]", self.data.len())
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
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

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&self) -> Tensor {
        let r = self.rank();
        assert!(r >= 2, "transpose_last2 needs rank >= 2");
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = self.data.len() / (m * n).max(1);
        let mut out = vec![0.0; self.data.len()];
        for b in 0..batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = self.data[base + i * n + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Tensor { shape, data: out }
    }

    /// Interprets rank 2 as a single batch entry and rank 3 as `[batch, rows, cols]`.
    fn as_batched(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [m, n] => (1, *m, *n),
            [b, m, n] => (*b, *m, *n),
            s => panic!("matmul operands must be rank 2 or 3, got {s:?}"),
        }
    }

    /// Batched matrix product. Either operand may have a batch extent of 1
    /// (or be rank 2), in which case it is shared across the other's batch.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (ba, m, k) = self.as_batched();
        let (bb, k2, n) = rhs.as_batched();
        if k != k2 || (ba != bb && ba != 1 && bb != 1) {
            return Err(Error::Shape(format!("matmul of {:?} by {:?}", self.shape, rhs.shape)));
        }
        let batch = ba.max(bb);
        let mut out = vec![0.0; batch * m * n];
        for b in 0..batch {
            let a = &self.data[(if ba == 1 { 0 } else { b }) * m * k..][..m * k];
            let w = &rhs.data[(if bb == 1 { 0 } else { b }) * k * n..][..k * n];
            let o = &mut out[b * m * n..][..m * n];
            for i in 0..m {
                let orow = &mut o[i * n..(i + 1) * n];
                for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if aip == 0.0 {
                        continue;
                    }
                    let wrow = &w[p * n..(p + 1) * n];
                    for (ov, &wv) in orow.iter_mut().zip(wrow) {
                        *ov += aip * wv;
                    }
                }
            }
        }
        let shape = if self.rank() == 2 && rhs.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        Ok(Tensor { shape, data: out })
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Tensor> {
        let r = self.rank();
        if r == 0 || r != other.rank() || self.shape[..r - 1] != other.shape[..r - 1] {
            return Err(Error::Shape(format!(
                "concat of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        let (fa, fb) = (self.shape[r - 1], other.shape[r - 1]);
        let rows = self.data.len() / fa.max(1);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for row in 0..rows {
            data.extend_from_slice(&self.data[row * fa..(row + 1) * fa]);
            data.extend_from_slice(&other.data[row * fb..(row + 1) * fb]);
        }
        let mut shape = self.shape.clone();
        shape[r - 1] = fa + fb;
        Ok(Tensor { shape, data })
    }

    /// Splits the last axis at `at`, the inverse of [`Tensor::concat_last`].
    pub fn split_last(&self, at: usize) -> (Tensor, Tensor) {
        let r = self.rank();
        let f = self.shape[r - 1];
        assert!(at <= f);
        let rows = self.data.len() / f.max(1);
        let mut a = Vec::with_capacity(rows * at);
        let mut b = Vec::with_capacity(rows * (f - at));
        for row in 0..rows {
            a.extend_from_slice(&self.data[row * f..row * f + at]);
            b.extend_from_slice(&self.data[row * f + at..(row + 1) * f]);
        }
        let mut sa = self.shape.clone();
        sa[r - 1] = at;
        let mut sb = self.shape.clone();
        sb[r - 1] = f - at;
        (Tensor { shape: sa, data: a }, Tensor { shape: sb, data: b })
    }

    pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}")));
        }
        a.iter()
            .zip(b)
            .map(|(&x, &y)| match (x, y) {
                _ if x == y => Ok(x),
                (1, _) => Ok(y),
                (_, 1) => Ok(x),
                _ => Err(Error::Shape(format!("cannot broadcast {a:?} with {b:?}"))),
            })
            .collect()
    }

    /// Element-wise binary op with broadcasting.
    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            return Ok(Tensor {
                shape: self.shape.clone(),
                data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            });
        }
        let shape = Self::broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape);
        let sb = broadcast_strides(&other.shape);
        let total = numel(&shape);
        let mut data = Vec::with_capacity(total);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..total {
            let (mut oa, mut ob) = (0, 0);
            for ax in 0..shape.len() {
                oa += idx[ax] * sa[ax];
                ob += idx[ax] * sb[ax];
            }
            data.push(f(self.data[oa], other.data[ob]));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(Tensor { shape, data })
    }

    /// Sums a broadcast result back down to `target` (the inverse of broadcasting).
    pub fn sum_to_shape(&self, target: &[usize]) -> Tensor {
        if self.shape == target {
            return self.clone();
        }
        assert_eq!(self.rank(), target.len(), "sum_to_shape rank mismatch");
        let st = broadcast_strides(target);
        let mut out = vec![0.0; numel(target)];
        let mut idx = vec![0usize; self.rank()];
        for &v in &self.data {
            let mut off = 0;
            for ax in 0..idx.len() {
                off += idx[ax] * st[ax];
            }
            out[off] += v;
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor {
            shape: target.to_vec(),
            data: out,
        }
    }

    /// Sums over the last axis, keeping it with extent 1.
    pub fn sum_last(&self) -> Tensor {
        let r = self.rank();
        let f = self.shape[r - 1];
        let data = self.data.chunks(f.max(1)).map(|c| c.iter().sum()).collect();
        let mut shape = self.shape.clone();
        shape[r - 1] = 1;
        Tensor { shape, data }
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_last(&self) -> Tensor {
        let f = *self.shape.last().expect("softmax of scalar");
        let mut data = self.data.clone();
        for row in data.chunks_mut(f.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Selects time step `t` of a `[B, w, N]` window tensor as `[B, N, 1]`.
    pub fn time_slice(&self, t: usize) -> Tensor {
        let (b, w, n) = match self.shape.as_slice() {
            [b, w, n] => (*b, *w, *n),
            s => panic!("time_slice expects rank 3, got {s:?}"),
        };
        assert!(t < w);
        let mut data = Vec::with_capacity(b * n);
        for bi in 0..b {
            data.extend_from_slice(&self.data[(bi * w + t) * n..][..n]);
        }
        Tensor {
            shape: vec![b, n, 1],
            data,
        }
    }

    /// Selects batch entry `i` of a rank-3 tensor as a matrix.
    pub fn batch_entry(&self, i: usize) -> Tensor {
        let (b, m, n) = self.as_batched();
        assert!(i < b);
        Tensor {
            shape: vec![m, n],
            data: self.data[i * m * n..(i + 1) * m * n].to_vec(),
        }
    }

    /// Mean over the leading batch axis of a rank-3 tensor.
    pub fn mean_batch(&self) -> Tensor {
        let (b, m, n) = self.as_batched();
        let mut out = vec![0.0; m * n];
        for chunk in self.data.chunks(m * n) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= b as f64;
        }
        Tensor {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Permutes a rank-3 tensor `[a, b, c]` into `[a, c, b]`.
    pub fn swap_inner(&self) -> Tensor {
        self.transpose_last2()
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::Shape(format!("stack of {:?} with {:?}", first.shape, p.shape)));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for ax in (0..shape.len()).rev() {
        strides[ax] = if shape[ax] == 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    strides
}
