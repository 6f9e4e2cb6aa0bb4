//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] owns its buffer through an [`Arc`], so cloning and reshaping
//! are cheap and a tensor can be shared read-only across threads. The only
//! in-place mutation path is [`Tensor::data_mut`], which copies on write when
//! the buffer is shared.

use std::fmt;
use std::sync::Arc;

use crate::error::{contract, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(contract(format!(
                "tensor shape must be non-empty with positive extents, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(contract(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("full: invalid shape")
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1], value)
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new([n, n], data).expect("eye: invalid size")
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(contract(format!(
                "item() needs a one-element tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                ix < dim,
                "index {ix} out of bounds for axis {i} of size {dim}"
            );
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    /// Shares the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary("sub", self, other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary("mul", self, other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        broadcast_binary("div", self, other, |a, b| a / b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// In-place `self += other` for equal shapes.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(contract(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Tensor::new(shape, out)
    }

    /// Reduces a broadcast result back to `shape` by summing the expanded axes.
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape == self.shape.as_slice() {
            return Ok(self.clone());
        }
        let out_shape = broadcast_shapes(shape, &self.shape).map_err(|_| Error::Dimension {
            op: "sum_to_shape",
            lhs: self.shape.clone(),
            rhs: shape.to_vec(),
        })?;
        if out_shape != self.shape {
            return Err(Error::Dimension {
                op: "sum_to_shape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let strides = broadcast_strides(shape, &self.shape);
        let mut out = vec![0.0; shape.iter().product()];
        for_each_index(&self.shape, |flat, idx| {
            let target: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[target] += self.data[flat];
        });
        Tensor::new(shape.to_vec(), out)
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd
            || perm
                .iter()
                .any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
        {
            return Err(contract(format!(
                "invalid permutation {perm:?} for shape {:?}",
                self.shape
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        if nd >= 2
            && perm[..nd - 2].iter().enumerate().all(|(i, &p)| i == p)
            && perm[nd - 2] == nd - 1
        {
            // Batched matrix transpose.
            let (r, c) = (self.shape[nd - 2], self.shape[nd - 1]);
            let mut out = Vec::with_capacity(self.numel());
            for mat in self.data.chunks_exact(r * c) {
                for j in 0..c {
                    out.extend((0..r).map(|i| mat[i * c + j]));
                }
            }
            return Tensor::new(out_shape, out);
        }
        let in_strides = row_major_strides(&self.shape);
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        for_each_index(&out_shape, |_, idx| {
            let src: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(self.data[src]);
        });
        Tensor::new(out_shape, out)
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(contract("transpose needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn slice_axis(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.ndim() || start >= end || end > self.shape[axis] {
            return Err(contract(format!(
                "slice {start}..{end} on axis {axis} invalid for shape {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&self.data[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = end - start;
        Tensor::new(shape, out)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| contract("concat of zero tensors"))?;
        if axis >= first.ndim() {
            return Err(contract(format!("concat axis {axis} out of range")));
        }
        for p in parts {
            let compatible = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape[axis];
                out.extend_from_slice(&p.data[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(shape, out)
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd {
            a[i + a.len() - nd]
        } else {
            1
        };
        let db = if i + b.len() >= nd {
            b[i + b.len() - nd]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Dimension {
                    op: "broadcast",
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out_shape`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Visits every multi-index of `shape` in row-major order.
fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let numel: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..numel {
        f(flat, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out_shape = broadcast_shapes(&a.shape, &b.shape).map_err(|_| Error::Dimension {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let nd = out_shape.len();
    let last = out_shape[nd - 1];
    let (la, lb) = (sa[nd - 1], sb[nd - 1]);
    let outer_shape = &out_shape[..nd - 1];
    let outer: usize = outer_shape.iter().product();
    let mut out = Vec::with_capacity(outer * last);
    let mut idx = vec![0usize; nd - 1];
    for _ in 0..outer {
        let base_a: usize = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let base_b: usize = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        for j in 0..last {
            out.push(f(a.data[base_a + j * la], b.data[base_b + j * lb]));
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < outer_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

/// `C = op(A) · op(B)` for row-major matrices, where `op` optionally transposes.
///
/// `a` is stored `m×k` (or `k×m` when `ta`), `b` is `k×n` (or `n×k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // Matrix-vector and outer-product shapes skip the packing done by the
    // general kernel, which would copy all of `a` for a single column.
    if n == 1 && !ta {
        // Four rows at a time give four independent accumulation chains;
        // each row still sums in index order.
        let mut rows = a.chunks_exact(4 * k);
        let mut out = c.chunks_exact_mut(4);
        for (block, dst) in (&mut rows).zip(&mut out) {
            let (r0, rest) = block.split_at(k);
            let (r1, rest) = rest.split_at(k);
            let (r2, r3) = rest.split_at(k);
            let mut acc = [0.0; 4];
            for j in 0..k {
                acc[0] += r0[j] * b[j];
                acc[1] += r1[j] * b[j];
                acc[2] += r2[j] * b[j];
                acc[3] += r3[j] * b[j];
            }
            dst.copy_from_slice(&acc);
        }
        for (ci, row) in out
            .into_remainder()
            .iter_mut()
            .zip(rows.remainder().chunks_exact(k))
        {
            *ci = row.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y);
        }
        return;
    }
    if n == 1 && ta {
        // `a` is stored k×m: accumulate b[r] · a[r, :] row by row.
        c.fill(0.0);
        for (row, &br) in a.chunks_exact(m).zip(b) {
            for (ci, &x) in c.iter_mut().zip(row) {
                *ci += x * br;
            }
        }
        return;
    }
    if m == 1 {
        // A single row is the matrix-vector case with the roles swapped.
        gemm(b, !tb, a, false, n, k, 1, c);
        return;
    }
    if k == 1 {
        for (i, crow) in c.chunks_exact_mut(n).enumerate() {
            let ai = a[i];
            for (cj, &bj) in crow.iter_mut().zip(b) {
                *cj = ai * bj;
            }
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides address
    // exactly the m×k, k×n and m×n elements of those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_t(a, false, b, false)
}

pub(crate) fn matmul_t(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let err = || Error::Dimension {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.ndim() != 2 || b.ndim() != 2 {
        return Err(err());
    }
    let (m, ka) = if ta {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (kb, n) = if tb {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if ka != kb {
        return Err(err());
    }
    let mut out = vec![0.0; m * n];
    gemm(&a.data, ta, &b.data, tb, m, ka, n, &mut out);
    Tensor::new([m, n], out)
}

/// Batched matrix product: `[G, m, k] · [G, k, n] -> [G, m, n]`.
pub fn bmm(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    bmm_t(a, false, b, false)
}

pub(crate) fn bmm_t(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let err = || Error::Dimension {
        op: "bmm",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.ndim() != 3 || b.ndim() != 3 || a.shape[0] != b.shape[0] {
        return Err(err());
    }
    let g = a.shape[0];
    let (m, ka) = if ta {
        (a.shape[2], a.shape[1])
    } else {
        (a.shape[1], a.shape[2])
    };
    let (kb, n) = if tb {
        (b.shape[2], b.shape[1])
    } else {
        (b.shape[1], b.shape[2])
    };
    if ka != kb {
        return Err(err());
    }
    let k = ka;
    let mut out = vec![0.0; g * m * n];
    for i in 0..g {
        gemm(
            &a.data[i * m * k..(i + 1) * m * k],
            ta,
            &b.data[i * k * n..(i + 1) * k * n],
            tb,
            m,
            k,
            n,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Tensor::new([g, m, n], out)
}

/// Centered moving average over the last axis with replicate padding.
///
/// The kernel must be odd; `(kernel - 1) / 2` copies of each edge value are
/// padded on both sides before averaging. Each window is accumulated as
/// offsets from its centre value, so constant stretches come out exact.
pub fn moving_average(x: &Tensor, kernel: usize) -> Result<Tensor> {
    check_kernel(x, kernel)?;
    let len = *x.shape.last().unwrap();
    let half = (kernel / 2) as isize;
    let k = kernel as f64;
    let mut out = vec![0.0; x.numel()];
    for (row, dst) in x.data.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
        // Offsets run outermost so the inner loop is a contiguous sweep over
        // positions; each position still sums its offsets in ascending order.
        for o in -half..=half {
            let (lo, hi) = interior(len, o);
            for i in 0..lo {
                dst[i] += row[clamp_index(i as isize + o, len)] - row[i];
            }
            let shifted = &row[(lo as isize + o) as usize..(hi as isize + o) as usize];
            for ((d, &r), &c) in dst[lo..hi].iter_mut().zip(shifted).zip(&row[lo..hi]) {
                *d += r - c;
            }
            for i in hi..len {
                dst[i] += row[clamp_index(i as isize + o, len)] - row[i];
            }
        }
        for (d, &c) in dst.iter_mut().zip(row) {
            *d = c + *d / k;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Positions `lo..hi` whose neighbour at offset `o` needs no clamping.
fn interior(len: usize, o: isize) -> (usize, usize) {
    let lo = (-o).max(0) as usize;
    let hi = (len as isize - o.max(0)).max(lo as isize) as usize;
    (lo.min(len), hi.min(len))
}

fn clamp_index(p: isize, len: usize) -> usize {
    p.clamp(0, len as isize - 1) as usize
}

/// Adjoint of [`moving_average`]: maps an output gradient to an input gradient.
pub(crate) fn moving_average_adjoint(grad: &Tensor, kernel: usize) -> Result<Tensor> {
    check_kernel(grad, kernel)?;
    let len = *grad.shape.last().unwrap();
    let half = (kernel / 2) as isize;
    let k = kernel as f64;
    let mut out = vec![0.0; grad.numel()];
    let mut share = vec![0.0; len];
    for (g, dst) in grad.data.chunks_exact(len).zip(out.chunks_exact_mut(len)) {
        for (s, &gi) in share.iter_mut().zip(g) {
            *s = gi / k;
        }
        for o in -half..=half {
            let (lo, hi) = interior(len, o);
            for i in (0..lo).chain(hi..len) {
                dst[clamp_index(i as isize + o, len)] += share[i];
            }
            let target = &mut dst[(lo as isize + o) as usize..(hi as isize + o) as usize];
            for (d, &s) in target.iter_mut().zip(&share[lo..hi]) {
                *d += s;
            }
        }
    }
    Tensor::new(grad.shape.clone(), out)
}

fn check_kernel(x: &Tensor, kernel: usize) -> Result<()> {
    let len = *x.shape.last().unwrap();
    if kernel.is_multiple_of(2) || kernel == 0 {
        return Err(contract(format!(
            "moving-average kernel must be odd, got {kernel}"
        )));
    }
    if kernel > len {
        return Err(contract(format!(
            "moving-average kernel {kernel} exceeds series length {len}"
        )));
    }
    Ok(())
}
