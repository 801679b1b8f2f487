//! Token encoder: embeddings, optional single-head self-attention, a
//! residual GELU MLP, layer norm and per-token L2 normalization.
//!
//! Training runs on a packed layout: only valid tokens of every text are
//! stacked into one `tokens × d` matrix, with [`Segments`] marking which
//! rows belong to which text. Padding never enters the math.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Eval, Graph, Scalar, Segments, Tensor, Var};
use crate::tokenizer::{TokenIds, TokenizerConfig};
use crate::{Error, Result};

const INIT_RANGE: f64 = 0.05;
/// Fill value for attention scores between tokens of different texts.
const ATTENTION_FILL: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub h: usize,
    pub dropout_rate: f64,
    pub use_attention: bool,
    pub init_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            h: 128,
            dropout_rate: 0.1,
            use_attention: false,
            init_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config(format!("d must be >= 2, got {}", self.d)));
        }
        if self.h < self.d {
            return Err(Error::Config(format!(
                "hidden width {} must be >= d = {}",
                self.h, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

/// All trainable weights. Vectors are stored as `1×n` tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub embedding: Tensor<T>,
    pub pos_embedding: Tensor<T>,
    pub mlp_w1: Tensor<T>,
    pub mlp_b1: Tensor<T>,
    pub mlp_w2: Tensor<T>,
    pub mlp_b2: Tensor<T>,
    pub ln_gain: Tensor<T>,
    pub ln_bias: Tensor<T>,
    pub attention: Option<AttentionParams<T>>,
}

impl<T: Scalar> EncoderParams<T> {
    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.embedding,
            &self.pos_embedding,
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.ln_gain,
            &self.ln_bias,
        ];
        if let Some(a) = &self.attention {
            out.extend([&a.wq, &a.wk, &a.wv, &a.wo]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.embedding,
            &mut self.pos_embedding,
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.ln_gain,
            &mut self.ln_bias,
        ];
        if let Some(a) = &mut self.attention {
            out.extend([&mut a.wq, &mut a.wk, &mut a.wv, &mut a.wo]);
        }
        out
    }

    /// Expected `(rows, cols)` of each tensor, in [`tensors`](Self::tensors) order.
    pub fn layout(tok: &TokenizerConfig, enc: &EncoderConfig) -> Vec<[usize; 2]> {
        let (d, h) = (enc.d, enc.h);
        let mut out = vec![
            [tok.vocab_size, d],
            [tok.max_len, d],
            [d, h],
            [1, h],
            [h, d],
            [1, d],
            [1, d],
            [1, d],
        ];
        if enc.use_attention {
            out.extend([[d, d]; 4]);
        }
        out
    }

    /// Rebuilds params from tensors in [`tensors`](Self::tensors) order.
    pub fn from_tensors(mut ts: Vec<Tensor<T>>) -> Result<Self> {
        let attention = match ts.len() {
            8 => None,
            12 => {
                let wo = ts.pop().unwrap();
                let wv = ts.pop().unwrap();
                let wk = ts.pop().unwrap();
                let wq = ts.pop().unwrap();
                Some(AttentionParams { wq, wk, wv, wo })
            }
            n => return Err(Error::shape(format!("expected 8 or 12 tensors, got {n}"))),
        };
        let mut it = ts.into_iter();
        let mut next = || it.next().unwrap();
        Ok(Self {
            embedding: next(),
            pos_embedding: next(),
            mlp_w1: next(),
            mlp_b1: next(),
            mlp_w2: next(),
            mlp_b2: next(),
            ln_gain: next(),
            ln_bias: next(),
            attention,
        })
    }

    pub fn d(&self) -> usize {
        self.embedding.cols()
    }

    pub fn max_len(&self) -> usize {
        self.pos_embedding.rows()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderParams<U> {
        EncoderParams {
            embedding: self.embedding.cast(),
            pos_embedding: self.pos_embedding.cast(),
            mlp_w1: self.mlp_w1.cast(),
            mlp_b1: self.mlp_b1.cast(),
            mlp_w2: self.mlp_w2.cast(),
            mlp_b2: self.mlp_b2.cast(),
            ln_gain: self.ln_gain.cast(),
            ln_bias: self.ln_bias.cast(),
            attention: self.attention.as_ref().map(|a| AttentionParams {
                wq: a.wq.cast(),
                wk: a.wk.cast(),
                wv: a.wv.cast(),
                wo: a.wo.cast(),
            }),
        }
    }

    pub fn register<'a, G: Graph<'a, T>>(&'a self, g: &mut G) -> ParamVars {
        ParamVars {
            embedding: g.leaf(&self.embedding),
            pos_embedding: g.leaf(&self.pos_embedding),
            mlp_w1: g.leaf(&self.mlp_w1),
            mlp_b1: g.leaf(&self.mlp_b1),
            mlp_w2: g.leaf(&self.mlp_w2),
            mlp_b2: g.leaf(&self.mlp_b2),
            ln_gain: g.leaf(&self.ln_gain),
            ln_bias: g.leaf(&self.ln_bias),
            attention: self
                .attention
                .as_ref()
                .map(|a| [g.leaf(&a.wq), g.leaf(&a.wk), g.leaf(&a.wv), g.leaf(&a.wo)]),
        }
    }
}

/// Graph handles for each parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embedding: Var,
    pub pos_embedding: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
    /// `[wq, wk, wv, wo]`
    pub attention: Option<[Var; 4]>,
}

impl ParamVars {
    /// Handles in [`EncoderParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![
            self.embedding,
            self.pos_embedding,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
            self.ln_gain,
            self.ln_bias,
        ];
        if let Some(a) = self.attention {
            out.extend(a);
        }
        out
    }

    /// Rebuilds handles from [`all`](Self::all) order.
    pub fn from_slice(vars: &[Var]) -> Self {
        Self {
            embedding: vars[0],
            pos_embedding: vars[1],
            mlp_w1: vars[2],
            mlp_b1: vars[3],
            mlp_w2: vars[4],
            mlp_b2: vars[5],
            ln_gain: vars[6],
            ln_bias: vars[7],
            attention: (vars.len() == 12).then(|| [vars[8], vars[9], vars[10], vars[11]]),
        }
    }
}

pub fn init_params<T: Scalar>(tok: &TokenizerConfig, config: &EncoderConfig) -> EncoderParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let dist = Uniform::new(-INIT_RANGE, INIT_RANGE);
    let mut uniform = |r: usize, c: usize| {
        let data = (0..r * c).map(|_| T::from_f64(dist.sample(&mut rng))).collect();
        Tensor::new(r, c, data).expect("sized")
    };
    let (d, h) = (config.d, config.h);
    let embedding = uniform(tok.vocab_size, d);
    let pos_embedding = uniform(tok.max_len, d);
    let mlp_w1 = uniform(d, h);
    let mlp_w2 = uniform(h, d);
    let attention = config.use_attention.then(|| AttentionParams {
        wq: uniform(d, d),
        wk: uniform(d, d),
        wv: uniform(d, d),
        wo: uniform(d, d),
    });
    EncoderParams {
        embedding,
        pos_embedding,
        mlp_w1,
        mlp_b1: Tensor::zeros(1, h),
        mlp_w2,
        mlp_b2: Tensor::zeros(1, d),
        ln_gain: Tensor::full(1, d, T::ONE),
        ln_bias: Tensor::zeros(1, d),
        attention,
    }
}

/// Inverted-dropout mask: entries are `0` with probability `rate`,
/// otherwise `1/(1-rate)`.
pub fn sample_dropout_mask<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    d: usize,
    rate: f64,
) -> Tensor<T> {
    if rate == 0.0 {
        return Tensor::full(rows, d, T::ONE);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let data = (0..rows * d)
        .map(|_| if rng.gen::<f64>() < rate { T::ZERO } else { keep })
        .collect();
    Tensor::new(rows, d, data).expect("sized")
}

/// Encodes the valid tokens of every row into one packed, row-normalized
/// `tokens × d` matrix. `dropout` is the embedding-site mask for the packed
/// rows (train mode) or `None` (eval mode).
pub fn encode_packed<'a, T: Scalar, G: Graph<'a, T>>(
    g: &mut G,
    pv: &ParamVars,
    rows: &[&TokenIds],
    dropout: Option<Tensor<T>>,
) -> Result<(Var, Segments)> {
    let segs = Segments::from_lengths(rows.iter().map(|t| t.n_valid));
    let max_len = g.value(pv.pos_embedding).rows();
    let mut ids = Vec::with_capacity(segs.total());
    let mut positions = Vec::with_capacity(segs.total());
    for t in rows {
        if t.n_valid == 0 || t.n_valid > max_len {
            return Err(Error::shape(format!(
                "text with {} valid tokens for max_len {max_len}",
                t.n_valid
            )));
        }
        ids.extend_from_slice(t.valid_ids());
        positions.extend(0..t.n_valid);
    }
    let n = ids.len();
    let d = g.value(pv.embedding).cols();
    let h = g.value(pv.mlp_w1).cols();

    let tok = g.gather_rows(pv.embedding, ids)?;
    let pos = g.gather_rows(pv.pos_embedding, positions)?;
    let mut x = g.add(tok, pos)?;
    if let Some(mask) = dropout {
        x = g.dropout(x, mask)?;
    }

    if let Some([wq, wk, wv, wo]) = pv.attention {
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let scores = g.matmul_nt(q, k)?;
        let scores = g.scale(scores, T::from_f64(1.0 / (d as f64).sqrt()));
        let owner = segs.owners();
        let cross: Vec<bool> = (0..n * n).map(|i| owner[i / n] != owner[i % n]).collect();
        let scores = g.masked_fill(scores, cross, T::from_f64(ATTENTION_FILL))?;
        let attn = softmax_rows(g, scores)?;
        let ctx = g.matmul(attn, v)?;
        let out = g.matmul(ctx, wo)?;
        x = g.add(x, out)?;
    }

    let b1 = g.broadcast(pv.mlp_b1, n, h)?;
    let b2 = g.broadcast(pv.mlp_b2, n, d)?;
    let hidden = g.matmul(x, pv.mlp_w1)?;
    let hidden = g.add(hidden, b1)?;
    let hidden = g.gelu(hidden);
    let y = g.matmul(hidden, pv.mlp_w2)?;
    let y = g.add(y, b2)?;
    let y = g.add(x, y)?;
    let y = g.layernorm_rows(y, pv.ln_gain, pv.ln_bias)?;
    let y = g.l2_normalize_rows(y)?;
    Ok((y, segs))
}

/// Row softmax with the row max held constant.
pub fn softmax_rows<'a, T: Scalar, G: Graph<'a, T>>(g: &mut G, x: Var) -> Result<Var> {
    let [r, c] = g.value(x).shape();
    let (m, _) = kernels::max_axis(g.value(x), 1)?;
    let m = g.constant(m);
    let m = g.broadcast(m, r, c)?;
    let shifted = g.sub(x, m)?;
    let e = g.exp(shifted);
    let s = g.sum_axis(e, 1)?;
    let s = g.broadcast(s, r, c)?;
    g.div(e, s)
}

/// Per-token representations padded to `max_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenReps<T> {
    /// `max_len × d`; unit rows where `mask == 1`, zero rows elsewhere.
    pub reps: Tensor<T>,
    pub mask: Vec<u8>,
    pub n_valid: usize,
}

impl<T: Scalar> TokenReps<T> {
    pub fn valid_rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.mask.len())
            .filter(|&i| self.mask[i] == 1)
            .map(|i| self.reps.row(i))
    }

    /// Valid rows stacked into an `n_valid × d` matrix.
    pub fn packed(&self) -> Tensor<T> {
        let rows: Vec<Vec<T>> = self.valid_rows().map(<[T]>::to_vec).collect();
        Tensor::from_rows(&rows).expect("uniform width")
    }

    /// Pads packed rows back out to `max_len × d`.
    pub fn from_packed(packed: &Tensor<T>, ids: &TokenIds) -> Result<Self> {
        if packed.rows() != ids.n_valid {
            return Err(Error::shape(format!(
                "{} packed rows for {} valid tokens",
                packed.rows(),
                ids.n_valid
            )));
        }
        let mut reps = Tensor::zeros(ids.max_len(), packed.cols());
        let mut k = 0;
        for (i, &m) in ids.mask.iter().enumerate() {
            if m == 1 {
                reps.row_mut(i).copy_from_slice(packed.row(k));
                k += 1;
            }
        }
        Ok(Self {
            reps,
            mask: ids.mask.clone(),
            n_valid: ids.n_valid,
        })
    }
}

/// Pooled text representation (unit length).
#[derive(Clone, Debug, PartialEq)]
pub struct ClsRep<T> {
    pub vec: Vec<T>,
}

pub enum EncodeMode<'m, T> {
    Eval,
    /// One mask per dropout site, each `n_valid × d`.
    Train(&'m [Tensor<T>]),
}

/// Number of dropout sites in the encoder (the embedding output).
pub const DROPOUT_SITES: usize = 1;

pub fn encode_tokens<T: Scalar>(
    params: &EncoderParams<T>,
    ids: &TokenIds,
    mode: EncodeMode<'_, T>,
) -> Result<TokenReps<T>> {
    let dropout = match mode {
        EncodeMode::Eval => None,
        EncodeMode::Train(masks) => {
            if masks.len() != DROPOUT_SITES {
                return Err(Error::Contract(format!(
                    "train mode needs {DROPOUT_SITES} dropout mask(s), got {}",
                    masks.len()
                )));
            }
            Some(masks[0].clone())
        }
    };
    let mut g = Eval::new();
    let pv = params.register(&mut g);
    let (out, _) = encode_packed(&mut g, &pv, &[ids], dropout)?;
    let packed = g.take(out);
    TokenReps::from_packed(&packed, ids)
}

/// Masked mean of the valid rows, L2-normalized.
pub fn pool_cls<T: Scalar>(reps: &TokenReps<T>) -> Result<ClsRep<T>> {
    if reps.n_valid == 0 || !reps.mask.contains(&1) {
        return Err(Error::Contract("cannot pool a fully masked text".into()));
    }
    let packed = reps.packed();
    let segs = Segments::uniform(1, packed.rows());
    let mean = kernels::segment_sum_rows(&packed, &segs, true)?;
    let (unit, _) = kernels::l2_normalize_rows(&mean)?;
    Ok(ClsRep {
        vec: unit.into_data(),
    })
}
