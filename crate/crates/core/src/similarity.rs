//! Text-to-text similarity: token-level MaxSim and pooled cosine.
//!
//! MaxSim is asymmetric. The first argument is the query/anchor and the
//! score is `Σ_k max_l q_k · d_l` over valid tokens, with no length
//! normalization, so it ranges over `[-n, n]` for an `n`-token query. Keep
//! that scale in mind when picking a temperature.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Eval, Graph, Scalar, Segments, Tensor, Var};
use crate::encoder::{ClsRep, TokenReps};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimRep {
    #[default]
    Token,
    Cls,
}

impl fmt::Display for SimRep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimRep::Token => "token",
            SimRep::Cls => "cls",
        })
    }
}

impl FromStr for SimRep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(SimRep::Token),
            "cls" => Ok(SimRep::Cls),
            other => Err(Error::Config(format!("unknown sim_rep {other:?}"))),
        }
    }
}

/// All ordered pair scores of a batch. Entry `(i, j)` scores row `i` as
/// the query against row `j`; the diagonal is zero and never used.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMatrix<T> {
    pub scores: Tensor<T>,
    pub metric: SimRep,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::ZERO, |s, (&x, &y)| s + x * y)
}

pub fn sim_token<T: Scalar>(query: &TokenReps<T>, doc: &TokenReps<T>) -> T {
    let mut total = T::ZERO;
    for q in query.valid_rows() {
        let mut best: Option<T> = None;
        for d in doc.valid_rows() {
            let s = dot(q, d);
            if best.map_or(true, |b| s > b) {
                best = Some(s);
            }
        }
        total += best.unwrap_or(T::ZERO);
    }
    total
}

pub fn sim_cls<T: Scalar>(a: &ClsRep<T>, b: &ClsRep<T>) -> T {
    dot(&a.vec, &b.vec)
}

fn diagonal_mask(n: usize) -> Vec<bool> {
    (0..n * n).map(|i| i / n == i % n).collect()
}

/// Pairwise scores for packed, row-normalized token representations.
///
/// Token metric: Gram matrix of all tokens, max over each document's
/// token span, then summed over each query's token span.
/// Cls metric: cosine of the normalized per-text mean.
pub fn sim_matrix_graph<'a, T: Scalar, G: Graph<'a, T>>(
    g: &mut G,
    reps: Var,
    segs: &Segments,
    metric: SimRep,
) -> Result<Var> {
    let r = segs.len();
    if r < 2 {
        return Err(Error::Contract(format!("similarity matrix needs >= 2 rows, got {r}")));
    }
    let scores = match metric {
        SimRep::Token => {
            let gram = g.matmul_nt(reps, reps)?;
            let best = g.segment_max_cols(gram, segs)?;
            g.segment_sum_rows(best, segs)?
        }
        SimRep::Cls => {
            let pooled = g.segment_mean_rows(reps, segs)?;
            let pooled = g.l2_normalize_rows(pooled)?;
            g.matmul_nt(pooled, pooled)?
        }
    };
    g.masked_fill(scores, diagonal_mask(r), T::ZERO)
}

/// Batched scoring of already-encoded texts.
pub fn sim_matrix<T: Scalar>(batch: &[TokenReps<T>], metric: SimRep) -> Result<SimMatrix<T>> {
    let packed: Vec<Vec<T>> = batch
        .iter()
        .flat_map(|r| r.valid_rows().map(<[T]>::to_vec))
        .collect();
    let packed = Tensor::from_rows(&packed)?;
    let segs = Segments::from_lengths(batch.iter().map(|r| r.n_valid));
    let mut g = Eval::new();
    let x = g.constant(packed);
    let out = sim_matrix_graph(&mut g, x, &segs, metric)?;
    Ok(SimMatrix {
        scores: g.take(out),
        metric,
    })
}
