//! Forward kernels shared by the recording tape and the eager evaluator.
//!
//! Every kernel is a pure function of its inputs. Ops that need extra
//! state for their backward pass (argmax positions, norms) return it
//! alongside the value.

use super::tensor::{Scalar, Tensor};
use super::Segments;
use crate::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_with<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape checked")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    Ok(zip_with(a, b, |x, y| x + y))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("sub", a, b)?;
    Ok(zip_with(a, b, |x, y| x - y))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    Ok(zip_with(a, b, |x, y| x * y))
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("div", a, b)?;
    if b.data().iter().any(|&x| x == T::ZERO) {
        return Err(Error::Domain("division by zero".into()));
    }
    Ok(zip_with(a, b, |x, y| x / y))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Tensor<T> {
    a.map(|x| x * s)
}

pub fn exp<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(T::exp)
}

pub fn log<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    if a.data().iter().any(|&x| !(x > T::ZERO)) {
        return Err(Error::Domain("log of a non-positive value".into()));
    }
    Ok(a.map(T::ln))
}

/// `a @ b`, or `a @ bᵀ` when `transpose_b`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, transpose_b: bool) -> Result<Tensor<T>> {
    let (m, k) = (a.rows(), a.cols());
    let (kb, n, rsb, csb) = if transpose_b {
        (b.cols(), b.rows(), 1, b.cols() as isize)
    } else {
        (b.rows(), b.cols(), b.cols() as isize, 1)
    };
    if k != kb {
        return Err(Error::shape(format!(
            "matmul: {:?} x {:?}{}",
            a.shape(),
            b.shape(),
            if transpose_b { "ᵀ" } else { "" }
        )));
    }
    let mut out = Tensor::zeros(m, n);
    T::gemm(
        m,
        k,
        n,
        T::ONE,
        a.data(),
        k as isize,
        1,
        b.data(),
        rsb,
        csb,
        T::ZERO,
        out.data_mut(),
        n as isize,
        1,
    );
    Ok(out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::shape(format!("axis {axis} out of range for a matrix")));
    }
    Ok(())
}

/// Sum over `axis`; axis 0 yields `1×cols`, axis 1 yields `rows×1`.
pub fn sum_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    check_axis(axis)?;
    let (r, c) = (a.rows(), a.cols());
    Ok(if axis == 0 {
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for (o, &x) in out.data_mut().iter_mut().zip(a.row(i)) {
                *o += x;
            }
        }
        out
    } else {
        let data = (0..r)
            .map(|i| a.row(i).iter().fold(T::ZERO, |s, &x| s + x))
            .collect();
        Tensor::new(r, 1, data)?
    })
}

/// Max over `axis` plus the flat index of the winning element in each slice.
/// Ties resolve to the lowest index along the reduced axis.
pub fn max_axis<T: Scalar>(a: &Tensor<T>, axis: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    check_axis(axis)?;
    let (r, c) = (a.rows(), a.cols());
    if a.is_empty() {
        return Err(Error::shape("max over an empty axis"));
    }
    if axis == 1 {
        let mut vals = Vec::with_capacity(r);
        let mut idx = Vec::with_capacity(r);
        for i in 0..r {
            let row = a.row(i);
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            vals.push(row[best]);
            idx.push(i * c + best);
        }
        Ok((Tensor::new(r, 1, vals)?, idx))
    } else {
        let mut vals = Vec::with_capacity(c);
        let mut idx = Vec::with_capacity(c);
        for j in 0..c {
            let mut best = 0;
            for i in 1..r {
                if a.get(i, j) > a.get(best, j) {
                    best = i;
                }
            }
            vals.push(a.get(best, j));
            idx.push(best * c + j);
        }
        Ok((Tensor::new(1, c, vals)?, idx))
    }
}

pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(a.data().iter().fold(T::ZERO, |s, &x| s + x))
}

/// Repeats a `1×c` row `rows` times, or an `r×1` column `cols` times.
pub fn broadcast<T: Scalar>(a: &Tensor<T>, rows: usize, cols: usize) -> Result<Tensor<T>> {
    let [ar, ac] = a.shape();
    if ar == rows && ac == cols {
        return Ok(a.clone());
    }
    if ar == 1 && ac == cols {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend_from_slice(a.data());
        }
        return Tensor::new(rows, cols, data);
    }
    if ac == 1 && ar == rows {
        let mut data = Vec::with_capacity(rows * cols);
        for &x in a.data() {
            data.extend(std::iter::repeat(x).take(cols));
        }
        return Tensor::new(rows, cols, data);
    }
    if ar == 1 && ac == 1 {
        return Ok(Tensor::full(rows, cols, a.data()[0]));
    }
    Err(Error::shape(format!(
        "cannot broadcast {:?} to [{rows}, {cols}]",
        a.shape()
    )))
}

/// Row-wise L2 normalization; returns the output and the per-row norms.
pub fn l2_normalize_rows<T: Scalar>(a: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let mut out = a.clone();
    let mut norms = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().fold(T::ZERO, |s, &x| s + x * x).sqrt();
        if !(norm > T::ZERO) {
            return Err(Error::Domain(format!("cannot normalize zero row {i}")));
        }
        for x in row.iter_mut() {
            *x = *x / norm;
        }
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Per-row layer normalization with `1×cols` gain and bias.
/// Returns the output and the per-row reciprocal standard deviations.
pub fn layernorm_rows<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let d = x.cols();
    if gain.shape() != [1, d] || bias.shape() != [1, d] {
        return Err(Error::shape(format!(
            "layernorm: input {:?}, gain {:?}, bias {:?}",
            x.shape(),
            gain.shape(),
            bias.shape()
        )));
    }
    let n = T::from_f64(d as f64);
    let eps = T::from_f64(LAYERNORM_EPS);
    let mut out = Tensor::zeros(x.rows(), d);
    let mut rstds = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().fold(T::ZERO, |s, &v| s + v) / n;
        let var = row.iter().fold(T::ZERO, |s, &v| s + (v - mean) * (v - mean)) / n;
        let rstd = T::ONE / (var + eps).sqrt();
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = (row[j] - mean) * rstd * gain.data()[j] + bias.data()[j];
        }
        rstds.push(rstd);
    }
    Ok((out, rstds))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    a.map(|x| half * x * (T::ONE + (c * (x + k * x * x * x)).tanh()))
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + three * k * x * x)
}

pub fn masked_fill<T: Scalar>(a: &Tensor<T>, mask: &[bool], value: T) -> Result<Tensor<T>> {
    if mask.len() != a.len() {
        return Err(Error::shape(format!(
            "masked_fill: mask of {} for {:?}",
            mask.len(),
            a.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { value } else { x })
        .collect();
    Tensor::new(a.rows(), a.cols(), data)
}

/// Row lookup into `table`.
pub fn gather_rows<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= table.rows() {
            return Err(Error::shape(format!(
                "gather: row {id} out of {} rows",
                table.rows()
            )));
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(ids.len(), d, data)
}

fn check_segments(what: &str, len: usize, segs: &Segments) -> Result<()> {
    if segs.total() != len {
        return Err(Error::shape(format!(
            "{what}: segments cover {} but axis has {len}",
            segs.total()
        )));
    }
    if segs.iter().any(|r| r.is_empty()) {
        return Err(Error::Contract(format!("{what}: empty segment")));
    }
    Ok(())
}

/// For each row and each column segment, the max over that segment.
/// Output is `rows × segments`; ties go to the lowest column.
pub fn segment_max_cols<T: Scalar>(
    a: &Tensor<T>,
    segs: &Segments,
) -> Result<(Tensor<T>, Vec<usize>)> {
    check_segments("segment_max_cols", a.cols(), segs)?;
    let (r, c) = (a.rows(), a.cols());
    let n = segs.len();
    let mut vals = Vec::with_capacity(r * n);
    let mut idx = Vec::with_capacity(r * n);
    for i in 0..r {
        let row = a.row(i);
        for span in segs.iter() {
            let mut best = span.start;
            for j in span.start + 1..span.end {
                if row[j] > row[best] {
                    best = j;
                }
            }
            vals.push(row[best]);
            idx.push(i * c + best);
        }
    }
    Ok((Tensor::new(r, n, vals)?, idx))
}

/// Sums (or averages) each row segment; output is `segments × cols`.
pub fn segment_sum_rows<T: Scalar>(a: &Tensor<T>, segs: &Segments, mean: bool) -> Result<Tensor<T>> {
    check_segments("segment_sum_rows", a.rows(), segs)?;
    let mut out = Tensor::zeros(segs.len(), a.cols());
    for (s, span) in segs.iter().enumerate() {
        let len = span.len();
        let acc = out.row_mut(s);
        for i in span {
            for (o, &x) in acc.iter_mut().zip(a.row(i)) {
                *o += x;
            }
        }
        if mean {
            let inv = T::ONE / T::from_f64(len as f64);
            for o in acc.iter_mut() {
                *o *= inv;
            }
        }
    }
    Ok(out)
}
