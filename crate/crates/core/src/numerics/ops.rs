//! Forward kernels for every primitive. These are plain functions over
//! [`Tensor`]s; the [`Tape`](super::Tape) calls them and records the result.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::{Scalar, Segments, Tensor};

/// Sentinel for "no source element" in argmax bookkeeping.
pub const NO_SOURCE: usize = usize::MAX;

const PAR_GEMM_FLOPS: usize = 1 << 21;
const PAR_GEMM_ROWS: usize = 64;

/// Row-major product with strided operands. `c` must be `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_strides: (usize, usize),
    b: &[T],
    b_strides: (usize, usize),
    c: &mut [T],
) {
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(T::zero());
        return;
    }
    let a_max = (m - 1) * a_strides.0 + (k - 1) * a_strides.1;
    let b_max = (k - 1) * b_strides.0 + (n - 1) * b_strides.1;
    assert!(a_max < a.len() && b_max < b.len(), "gemm operand out of bounds");
    let sa = (a_strides.0 as isize, a_strides.1 as isize);
    let sb = (b_strides.0 as isize, b_strides.1 as isize);

    if m * k * n < PAR_GEMM_FLOPS || m < 2 * PAR_GEMM_ROWS {
        // SAFETY: bounds asserted above.
        unsafe { T::gemm(m, k, n, a, sa, b, sb, c, T::zero()) };
        return;
    }
    // Each output row depends only on its own row of `a`, so row blocks are
    // independent and the result does not depend on the thread count.
    c.par_chunks_mut(PAR_GEMM_ROWS * n).enumerate().for_each(|(blk, c_blk)| {
        let r0 = blk * PAR_GEMM_ROWS;
        let rows = c_blk.len() / n;
        let a_blk = &a[r0 * a_strides.0..];
        // SAFETY: rows r0..r0+rows of `a` lie inside the asserted range.
        unsafe { T::gemm(rows, k, n, a_blk, sa, b, sb, c_blk, T::zero()) };
    });
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.require_matrix("matmul")?;
    let (k2, n) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    gemm_into(m, k, n, a.data(), (k, 1), b.data(), (n, 1), &mut out);
    Tensor::matrix(m, n, out)
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_with<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Elementwise maximum; ties resolve to `a`.
pub fn maximum<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("maximum", a, b, |x, y| if y > x { y } else { x })
}

/// Adds a bias row (`1 × c` or `[c]`) to every row of `x`.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.require_matrix("add_bias")?;
    if bias.numel() != c {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let b = bias.data();
    let mut data = x.data().to_vec();
    for i in 0..r {
        for (v, &bj) in data[i * c..(i + 1) * c].iter_mut().zip(b) {
            *v = *v + bj;
        }
    }
    Tensor::matrix(r, c, data)
}

/// Multiplies row `i` of `x` by the constant `factors[i]`.
pub fn scale_rows<T: Scalar>(x: &Tensor<T>, factors: &[T]) -> Result<Tensor<T>> {
    let (r, c) = x.require_matrix("scale_rows")?;
    if factors.len() != r {
        return Err(Error::shape("scale_rows", x.shape(), &[factors.len()]));
    }
    let mut data = x.data().to_vec();
    for (i, &f) in factors.iter().enumerate() {
        for v in &mut data[i * c..(i + 1) * c] {
            *v = *v * f;
        }
    }
    Tensor::matrix(r, c, data)
}

fn check_column<T: Scalar>(op: &'static str, x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    let (r, c) = x.require_matrix(op)?;
    if w.numel() != r || (w.rank() == 2 && w.cols() != 1) {
        return Err(Error::shape(op, x.shape(), w.shape()));
    }
    Ok((r, c))
}

/// `y[i, j] = x[i, j] * w[i]` with `w` an `r × 1` column.
pub fn mul_rows<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    check_column("mul_rows", x, w)?;
    scale_rows(x, w.data())
}

/// `y[i, j] = x[i, j] / w[i]` with `w` an `r × 1` column.
pub fn div_rows<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = check_column("div_rows", x, w)?;
    let mut data = x.data().to_vec();
    for (i, &wi) in w.data().iter().enumerate() {
        for v in &mut data[i * c..(i + 1) * c] {
            *v = *v / wi;
        }
    }
    Tensor::matrix(r, c, data)
}

pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
    let (r, _) = first.require_matrix("concat_cols")?;
    let mut total = 0;
    for p in parts {
        let (pr, pc) = p.require_matrix("concat_cols")?;
        if pr != r {
            return Err(Error::shape("concat_cols", first.shape(), p.shape()));
        }
        total += pc;
    }
    let mut data = Vec::with_capacity(r * total);
    for i in 0..r {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Tensor::matrix(r, total, data)
}

pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
    let (_, c) = first.require_matrix("concat_rows")?;
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        let (pr, pc) = p.require_matrix("concat_rows")?;
        if pc != c {
            return Err(Error::shape("concat_rows", first.shape(), p.shape()));
        }
        rows += pr;
        data.extend_from_slice(p.data());
    }
    Tensor::matrix(rows, c, data)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `ln σ(x)`.
pub fn log_sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn leaky_relu_scalar<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * slope
    }
}

pub fn gather_rows<T: Scalar>(x: &Tensor<T>, index: &[usize]) -> Result<Tensor<T>> {
    let (r, c) = x.require_matrix("gather_rows")?;
    let mut data = Vec::with_capacity(index.len() * c);
    for &i in index {
        if i >= r {
            return Err(Error::invalid("gather_rows", format!("row {i} out of range for {r} rows")));
        }
        data.extend_from_slice(x.row(i));
    }
    Tensor::matrix(index.len(), c, data)
}

/// `out[index[i]] += x[i]`, accumulated in input order.
pub fn scatter_add_rows<T: Scalar>(x: &Tensor<T>, index: &[usize], out_rows: usize) -> Result<Tensor<T>> {
    let (r, c) = x.require_matrix("scatter_add_rows")?;
    if index.len() != r {
        return Err(Error::shape("scatter_add_rows", x.shape(), &[index.len()]));
    }
    let mut out = Tensor::zeros(&[out_rows, c]);
    for (i, &o) in index.iter().enumerate() {
        if o >= out_rows {
            return Err(Error::invalid("scatter_add_rows", format!("target {o} out of range for {out_rows} rows")));
        }
        let src = x.row(i);
        for (d, &s) in out.row_mut(o).iter_mut().zip(src) {
            *d = *d + s;
        }
    }
    Ok(out)
}

/// `out[index[i]] = max(out[index[i]], x[i])` elementwise. Rows that receive
/// nothing are zero. The second result records, per output element, which
/// input row won (the earliest on ties), or [`NO_SOURCE`].
pub fn scatter_max_rows<T: Scalar>(x: &Tensor<T>, index: &[usize], out_rows: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (r, c) = x.require_matrix("scatter_max_rows")?;
    if index.len() != r {
        return Err(Error::shape("scatter_max_rows", x.shape(), &[index.len()]));
    }
    let mut out = Tensor::zeros(&[out_rows, c]);
    let mut arg = vec![NO_SOURCE; out_rows * c];
    for (i, &o) in index.iter().enumerate() {
        if o >= out_rows {
            return Err(Error::invalid("scatter_max_rows", format!("target {o} out of range for {out_rows} rows")));
        }
        for j in 0..c {
            let v = x.data()[i * c + j];
            let slot = o * c + j;
            if arg[slot] == NO_SOURCE || v > out.data()[slot] {
                out.data_mut()[slot] = v;
                arg[slot] = i;
            }
        }
    }
    Ok((out, arg))
}

fn check_segments<T: Scalar>(op: &'static str, x: &Tensor<T>, segs: &Segments) -> Result<(usize, usize)> {
    let (r, c) = x.require_matrix(op)?;
    if segs.num_rows() != r {
        return Err(Error::shape(op, x.shape(), &[segs.num_rows()]));
    }
    Ok((r, c))
}

/// Inclusive prefix sum over rows, restarting at every segment start.
pub fn segmented_cumsum<T: Scalar>(x: &Tensor<T>, segs: &Segments) -> Result<Tensor<T>> {
    let (_, c) = check_segments("segmented_cumsum", x, segs)?;
    let mut out = x.clone();
    let data = out.data_mut();
    for range in segs.ranges() {
        for i in range.start + 1..range.end {
            for j in 0..c {
                data[i * c + j] = data[(i - 1) * c + j] + data[i * c + j];
            }
        }
    }
    Ok(out)
}

/// Inclusive running maximum over rows within each segment. Also returns,
/// per element, the input row holding the maximum (earliest on ties).
pub fn segmented_cummax<T: Scalar>(x: &Tensor<T>, segs: &Segments) -> Result<(Tensor<T>, Vec<usize>)> {
    let (r, c) = check_segments("segmented_cummax", x, segs)?;
    let mut out = x.clone();
    let mut arg: Vec<usize> = (0..r).flat_map(|i| std::iter::repeat_n(i, c)).collect();
    let data = out.data_mut();
    for range in segs.ranges() {
        for i in range.start + 1..range.end {
            for j in 0..c {
                let prev = data[(i - 1) * c + j];
                if !(data[i * c + j] > prev) {
                    data[i * c + j] = prev;
                    arg[i * c + j] = arg[(i - 1) * c + j];
                }
            }
        }
    }
    Ok((out, arg))
}

/// Row-wise dot product, `r × 1`.
pub fn row_dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("row_dot", a, b)?;
    let (r, _) = a.require_matrix("row_dot")?;
    let vals = (0..r).map(|i| a.row(i).iter().zip(b.row(i)).map(|(&x, &y)| x * y).sum()).collect();
    Ok(Tensor::column(vals))
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().copied().sum())
}
