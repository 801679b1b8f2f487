use std::borrow::Cow;

use super::graph::{Graph, Op, Var};
use super::kernels;
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Recording graph for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is already
/// topologically sorted and backward is a single reverse sweep.
pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
}

impl<'a, T: Scalar> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> for Tape<'a, T> {
    fn leaf(&mut self, value: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }
}

/// Gradients of a scalar with respect to the leaves of a tape.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<[usize; 2]>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, leaving zeros-on-demand behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| {
            let [r, c] = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                shape[0], shape[1]
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Constant => continue,
                _ => {}
            }
            for (input, gi) in self.local_grads(node, &g)? {
                if matches!(self.nodes[input.0].op, Op::Constant) {
                    continue;
                }
                accumulate(&mut grads[input.0], gi);
            }
        }

        let shapes = self.nodes[..n].iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Vector-Jacobian products of one node for each of its inputs.
    fn local_grads(&self, node: &Node<'a, T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul { a, b, transpose_b } => {
                let (av, bv) = (val(*a), val(*b));
                // C = A B   : dA = G Bᵀ,  dB = Aᵀ G
                // C = A Bᵀ  : dA = G B,   dB = Gᵀ A
                let (ga, gb) = if *transpose_b {
                    (kernels::matmul(g, bv, false)?, matmul_tn(g, av))
                } else {
                    (kernels::matmul(g, bv, true)?, matmul_tn(av, g))
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(a) => vec![(*a, kernels::transpose(g))],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, kernels::mul(g, val(*b))?),
                (*b, kernels::mul(g, val(*a))?),
            ],
            Op::Div(a, b) => {
                let bv = val(*b);
                let ga = kernels::div(g, bv)?;
                // d(a/b)/db = -out / b
                let gb = zip3(g, out, bv, |g, o, b| -g * o / b);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, kernels::scale(g, *s))],
            Op::Exp(a) => vec![(*a, kernels::mul(g, out)?)],
            Op::Log(a) => vec![(*a, kernels::div(g, val(*a))?)],
            Op::SumAxis { a, .. } | Op::Broadcast(a) | Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                let ga = if matches!(node.op, Op::Broadcast(_)) {
                    reduce_to(g, r, c)
                } else {
                    kernels::broadcast(g, r, c)?
                };
                vec![(*a, ga)]
            }
            Op::MaxAxis { a, argmax } | Op::SegmentMaxCols { a, argmax } => {
                let [r, c] = val(*a).shape();
                let mut ga = Tensor::zeros(r, c);
                let gd = ga.data_mut();
                for (&flat, &gv) in argmax.iter().zip(g.data()) {
                    gd[flat] += gv;
                }
                vec![(*a, ga)]
            }
            Op::L2NormalizeRows { a, norms } => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gy) = (out.row(i), g.row(i));
                    let dot = y.iter().zip(gy).fold(T::ZERO, |s, (&a, &b)| s + a * b);
                    for (j, o) in ga.row_mut(i).iter_mut().enumerate() {
                        *o = (gy[j] - y[j] * dot) / norms[i];
                    }
                }
                vec![(*a, ga)]
            }
            Op::LayerNormRows { x, gain, bias, rstd } => {
                let (xv, gain_v) = (val(*x), val(*gain));
                let d = xv.cols();
                let n = T::from_f64(d as f64);
                let mut gx = Tensor::zeros(xv.rows(), d);
                let mut ggain = Tensor::zeros(1, d);
                let mut gbias = Tensor::zeros(1, d);
                let mut xhat = vec![T::ZERO; d];
                let mut dxhat = vec![T::ZERO; d];
                for i in 0..xv.rows() {
                    let row = xv.row(i);
                    let mean = row.iter().fold(T::ZERO, |s, &v| s + v) / n;
                    let gy = g.row(i);
                    let mut mean_dxhat = T::ZERO;
                    let mut mean_dxhat_xhat = T::ZERO;
                    for j in 0..d {
                        xhat[j] = (row[j] - mean) * rstd[i];
                        dxhat[j] = gy[j] * gain_v.data()[j];
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                        ggain.data_mut()[j] += gy[j] * xhat[j];
                        gbias.data_mut()[j] += gy[j];
                    }
                    mean_dxhat = mean_dxhat / n;
                    mean_dxhat_xhat = mean_dxhat_xhat / n;
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = rstd[i] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                }
                vec![(*x, gx), (*gain, ggain), (*bias, gbias)]
            }
            Op::Gelu(a) => {
                let av = val(*a);
                vec![(*a, zip3(g, av, av, |g, x, _| g * kernels::gelu_grad(x)))]
            }
            Op::Dropout { a, mask } => vec![(*a, kernels::mul(g, mask)?)],
            Op::MaskedFill { a, mask } => {
                let ga = kernels::masked_fill(g, mask, T::ZERO)?;
                vec![(*a, ga)]
            }
            Op::GatherRows { table, ids } => {
                let tv = val(*table);
                let mut gt = Tensor::zeros(tv.rows(), tv.cols());
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &x) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                vec![(*table, gt)]
            }
            Op::SegmentSumRows { a, segs, mean } => {
                let av = val(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (s, span) in segs.iter().enumerate() {
                    let scale = if *mean {
                        T::ONE / T::from_f64(span.len() as f64)
                    } else {
                        T::ONE
                    };
                    let gs = g.row(s);
                    for i in span {
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(gs) {
                            *o = x * scale;
                        }
                    }
                }
                vec![(*a, ga)]
            }
        })
    }
}

/// `aᵀ @ b`.
fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    T::gemm(
        m,
        k,
        n,
        T::ONE,
        a.data(),
        1,
        m as isize,
        b.data(),
        n as isize,
        1,
        T::ZERO,
        out.data_mut(),
        n as isize,
        1,
    );
    out
}

/// Sums a broadcast gradient back down to `r×c`.
fn reduce_to<T: Scalar>(g: &Tensor<T>, r: usize, c: usize) -> Tensor<T> {
    if g.shape() == [r, c] {
        return g.clone();
    }
    if r == 1 && c == 1 {
        return kernels::sum_all(g);
    }
    let axis = if r == 1 { 0 } else { 1 };
    kernels::sum_axis(g, axis).expect("valid axis")
}

fn zip3<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, c: &Tensor<T>, f: impl Fn(T, T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("matching shapes")
}
