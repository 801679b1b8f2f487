use std::borrow::Cow;
use std::ops::Range;

use super::kernels;
use super::tensor::{Scalar, Tensor};
use crate::Result;

/// Handle to a value on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous, non-empty spans partitioning an axis, e.g. the token rows
/// belonging to each text in a packed batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for len in lengths {
            offsets.push(offsets.last().unwrap() + len);
        }
        Self { offsets }
    }

    pub fn uniform(count: usize, len: usize) -> Self {
        Self::from_lengths(std::iter::repeat(len).take(count))
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn span(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    /// Segment index of every position along the partitioned axis.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for (s, span) in self.iter().enumerate() {
            out.extend(std::iter::repeat(s).take(span.len()));
        }
        out
    }
}

/// Recorded operation with what its backward pass needs.
#[derive(Debug)]
pub enum Op<T> {
    Leaf,
    Constant,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Log(Var),
    SumAxis { a: Var, axis: usize },
    MaxAxis { a: Var, argmax: Vec<usize> },
    SumAll(Var),
    Broadcast(Var),
    L2NormalizeRows { a: Var, norms: Vec<T> },
    LayerNormRows { x: Var, gain: Var, bias: Var, rstd: Vec<T> },
    Gelu(Var),
    Dropout { a: Var, mask: Tensor<T> },
    MaskedFill { a: Var, mask: Vec<bool> },
    GatherRows { table: Var, ids: Vec<usize> },
    SegmentMaxCols { a: Var, argmax: Vec<usize> },
    SegmentSumRows { a: Var, segs: Segments, mean: bool },
}

/// A computation graph builder.
///
/// [`Tape`](super::Tape) records every op for reverse-mode differentiation;
/// [`Eval`] only keeps values. Both run the same forward kernels, so a
/// model evaluated on either produces bit-identical outputs.
pub trait Graph<'a, T: Scalar> {
    /// Registers a borrowed differentiable input.
    fn leaf(&mut self, value: &'a Tensor<T>) -> Var;
    /// Registers a value that never receives gradients.
    fn constant(&mut self, value: Tensor<T>) -> Var;
    fn value(&self, v: Var) -> &Tensor<T>;
    #[doc(hidden)]
    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var;

    fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b), false)?;
        Ok(self.push(out, Op::MatMul { a, b, transpose_b: false }))
    }

    /// `a @ bᵀ` without materializing the transpose.
    fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b), true)?;
        Ok(self.push(out, Op::MatMul { a, b, transpose_b: true }))
    }

    fn transpose(&mut self, a: Var) -> Var {
        let out = kernels::transpose(self.value(a));
        self.push(out, Op::Transpose(a))
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::div(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Div(a, b)))
    }

    fn scale(&mut self, a: Var, s: T) -> Var {
        let out = kernels::scale(self.value(a), s);
        self.push(out, Op::Scale(a, s))
    }

    fn exp(&mut self, a: Var) -> Var {
        let out = kernels::exp(self.value(a));
        self.push(out, Op::Exp(a))
    }

    fn log(&mut self, a: Var) -> Result<Var> {
        let out = kernels::log(self.value(a))?;
        Ok(self.push(out, Op::Log(a)))
    }

    fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = kernels::sum_axis(self.value(a), axis)?;
        Ok(self.push(out, Op::SumAxis { a, axis }))
    }

    fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (out, argmax) = kernels::max_axis(self.value(a), axis)?;
        Ok(self.push(out, Op::MaxAxis { a, argmax }))
    }

    fn sum_all(&mut self, a: Var) -> Var {
        let out = kernels::sum_all(self.value(a));
        self.push(out, Op::SumAll(a))
    }

    fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = kernels::broadcast(self.value(a), rows, cols)?;
        Ok(self.push(out, Op::Broadcast(a)))
    }

    fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (out, norms) = kernels::l2_normalize_rows(self.value(a))?;
        Ok(self.push(out, Op::L2NormalizeRows { a, norms }))
    }

    fn layernorm_rows(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, rstd) =
            kernels::layernorm_rows(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(out, Op::LayerNormRows { x, gain, bias, rstd }))
    }

    fn gelu(&mut self, a: Var) -> Var {
        let out = kernels::gelu(self.value(a));
        self.push(out, Op::Gelu(a))
    }

    /// Elementwise product with a fixed mask. Masks carry the inverted-dropout
    /// scale already (entries are `0` or `1/(1-p)`).
    fn dropout(&mut self, a: Var, mask: Tensor<T>) -> Result<Var> {
        let out = kernels::mul(self.value(a), &mask)?;
        Ok(self.push(out, Op::Dropout { a, mask }))
    }

    fn masked_fill(&mut self, a: Var, mask: Vec<bool>, value: T) -> Result<Var> {
        let out = kernels::masked_fill(self.value(a), &mask, value)?;
        Ok(self.push(out, Op::MaskedFill { a, mask }))
    }

    fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let out = kernels::gather_rows(self.value(table), &ids)?;
        Ok(self.push(out, Op::GatherRows { table, ids }))
    }

    fn segment_max_cols(&mut self, a: Var, segs: &Segments) -> Result<Var> {
        let (out, argmax) = kernels::segment_max_cols(self.value(a), segs)?;
        Ok(self.push(out, Op::SegmentMaxCols { a, argmax }))
    }

    fn segment_sum_rows(&mut self, a: Var, segs: &Segments) -> Result<Var> {
        let out = kernels::segment_sum_rows(self.value(a), segs, false)?;
        Ok(self.push(out, Op::SegmentSumRows { a, segs: segs.clone(), mean: false }))
    }

    fn segment_mean_rows(&mut self, a: Var, segs: &Segments) -> Result<Var> {
        let out = kernels::segment_sum_rows(self.value(a), segs, true)?;
        Ok(self.push(out, Op::SegmentSumRows { a, segs: segs.clone(), mean: true }))
    }
}

/// Value-only graph for inference: no op records, no gradients.
#[derive(Default)]
pub struct Eval<'a, T: Scalar> {
    values: Vec<Cow<'a, Tensor<T>>>,
}

impl<'a, T: Scalar> Eval<'a, T> {
    pub fn new() -> Self {
        Self { values: Vec::new() }
    }

    pub fn take(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.values[v.0], Cow::Owned(Tensor::zeros(0, 0))).into_owned()
    }
}

impl<'a, T: Scalar> Graph<'a, T> for Eval<'a, T> {
    fn leaf(&mut self, value: &'a Tensor<T>) -> Var {
        self.values.push(Cow::Borrowed(value));
        Var(self.values.len() - 1)
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.values.push(Cow::Owned(value));
        Var(self.values.len() - 1)
    }

    fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    fn push(&mut self, value: Tensor<T>, _op: Op<T>) -> Var {
        self.constant(value)
    }
}
