//! Dense row-major `f64` tensors and the raw kernels the tape is built on.

use super::AutodiffError;

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Zero-dimensional tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, AutodiffError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(AutodiffError::NotScalar {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_shape(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::with_shape(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

/// Shape of the result of a suffix-broadcast binary op, or `None` when the
/// shapes are incompatible. The smaller operand must equal a trailing
/// suffix of the larger one.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Some(long.to_vec())
    } else {
        // a one-element operand broadcasts to anything
        let a_n: usize = a.iter().product();
        let b_n: usize = b.iter().product();
        if b_n == 1 && b.len() <= a.len() {
            Some(a.to_vec())
        } else if a_n == 1 && a.len() <= b.len() {
            Some(b.to_vec())
        } else {
            None
        }
    }
}

/// Elementwise binary kernel with suffix broadcasting.
pub(crate) fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(n);
    if ad.len() == n && bd.len() == n {
        data.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    } else if bd.len() == 1 {
        let y = bd[0];
        data.extend(ad.iter().map(|&x| f(x, y)));
    } else if ad.len() == 1 {
        let x = ad[0];
        data.extend(bd.iter().map(|&y| f(x, y)));
    } else if ad.len() == n {
        for row in ad.chunks_exact(bd.len()) {
            data.extend(row.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
    } else {
        for row in bd.chunks_exact(ad.len()) {
            data.extend(ad.iter().zip(row).map(|(&x, &y)| f(x, y)));
        }
    }
    Tensor::with_shape(shape, data)
}

/// Sums the leading axes of `x` away so that the result has shape `target`,
/// which must be a suffix of `x`'s shape (or a one-element shape).
pub(crate) fn sum_leading(x: &Tensor, target: &[usize]) -> Tensor {
    let m: usize = target.iter().product();
    let mut out = vec![0.0; m];
    if m == 1 {
        out[0] = x.data().iter().sum();
    } else {
        for row in x.data().chunks_exact(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Tensor::with_shape(target.to_vec(), out)
}

pub(crate) fn broadcast_leading(x: &Tensor, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let m = x.numel();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n / m {
        data.extend_from_slice(x.data());
    }
    Tensor::with_shape(shape.to_vec(), data)
}

/// Splits a shape around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn slice_axis(x: &Tensor, axis: usize, start: usize, end: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let width = end - start;
    let mut data = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let base = o * len * inner;
        data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = width;
    Tensor::with_shape(shape, data)
}

/// Embeds `x` into a zero tensor whose `axis` has length `total`, starting at `start`.
pub(crate) fn pad_axis(x: &Tensor, axis: usize, start: usize, total: usize) -> Tensor {
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let mut data = vec![0.0; outer * total * inner];
    for o in 0..outer {
        let src = &x.data()[o * len * inner..(o + 1) * len * inner];
        let dst = o * total * inner + start * inner;
        data[dst..dst + len * inner].copy_from_slice(src);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = total;
    Tensor::with_shape(shape, data)
}

pub(crate) fn concat_axis(parts: &[&Tensor], axis: usize) -> Tensor {
    let (outer, _, inner) = split_axis(parts[0].shape(), axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let w = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = parts[0].shape().to_vec();
    shape[axis] = total;
    Tensor::with_shape(shape, data)
}

/// Swaps the last two axes.
pub(crate) fn transpose_last(x: &Tensor) -> Tensor {
    let nd = x.ndim();
    let (r, c) = (x.shape()[nd - 2], x.shape()[nd - 1]);
    let batch = x.numel() / (r * c);
    let mut data = vec![0.0; x.numel()];
    for b in 0..batch {
        let src = &x.data()[b * r * c..(b + 1) * r * c];
        let dst = &mut data[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.swap(nd - 2, nd - 1);
    Tensor::with_shape(shape, data)
}

pub(crate) fn sum_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap_or(&1);
    let data = x.data().chunks_exact(n.max(1)).map(|c| c.iter().sum()).collect();
    let mut shape = x.shape().to_vec();
    if let Some(l) = shape.last_mut() {
        *l = 1;
    }
    Tensor::with_shape(shape, data)
}

pub(crate) fn expand_last(x: &Tensor, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(x.numel() * n);
    for &v in x.data() {
        data.extend(std::iter::repeat(v).take(n));
    }
    let mut shape = x.shape().to_vec();
    if let Some(l) = shape.last_mut() {
        *l = n;
    }
    Tensor::with_shape(shape, data)
}

pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let n = *x.shape().last().unwrap_or(&1);
    let mut data = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(n.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            data.push(e);
        }
        for v in &mut data[start..] {
            *v /= total;
        }
    }
    Tensor::with_shape(x.shape().to_vec(), data)
}

/// `C = op(A) · op(B)` for row-major matrices, where `op` optionally transposes.
/// `a` is stored as `ar × ac`, `b` as `br × bc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    a: &[f64],
    ar: usize,
    ac: usize,
    ta: bool,
    b: &[f64],
    br: usize,
    bc: usize,
    tb: bool,
    out: &mut [f64],
) {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    debug_assert_eq!(if tb { bc } else { br }, k);
    debug_assert_eq!(out.len(), m * n);
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    if m * n * k <= 4096 {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    let av = a[(i as isize * rsa + p as isize * csa) as usize];
                    let bv = b[(p as isize * rsb + j as isize * csb) as usize];
                    acc += av * bv;
                }
                out[i * n + j] = acc;
            }
        }
        return;
    }
    // SAFETY: strides and extents describe in-bounds views of `a`, `b` and `out`.
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
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
