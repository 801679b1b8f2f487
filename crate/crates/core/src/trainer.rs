//! Training loop: seeded epoch shuffles, augmented batches, contrastive loss,
//! and AdamW updates.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Scalar, Tape, Tensor};
use crate::contrastive::{build_batch, positives_mask, supcon_loss, AugmentedBatch, LossConfig, LossOutput, MaskSpec};
use crate::data_io::Dataset;
use crate::encoder::{encode_packed, init_params, EncoderConfig, EncoderParams, ParamVars};
use crate::similarity::{sim_matrix_graph, SimRep};
use crate::tokenizer::{tokenize, TokenIds, TokenizerConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Original texts per batch, before class-name injection and repeats.
    pub batch_size: usize,
    pub num_repeats: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub metric: SimRep,
    pub seed: u64,
    pub tokenizer: TokenizerConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            num_repeats: 4,
            lr: 1e-2,
            weight_decay: 0.01,
            temperature: 0.1,
            metric: SimRep::Token,
            seed: 0,
            tokenizer: TokenizerConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Sets the shuffle/dropout seed and the parameter init seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.encoder.init_seed = seed;
        self
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            metric: self.metric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tokenizer.validate()?;
        self.encoder.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.num_repeats == 0 {
            return Err(Error::Config("num_repeats must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    pub hyper: AdamW,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>], hyper: AdamW) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            hyper,
        }
    }
}

/// One AdamW update with decoupled weight decay applied before the Adam step.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adamw: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(format!(
                "adamw: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }

    state.t += 1;
    let AdamW { beta1, beta2, eps } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let decay = T::from_f64(1.0 - lr * weight_decay);
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let step = T::from_f64(lr / bc1);
    let inv_sqrt_bc2 = T::from_f64(1.0 / bc2.sqrt());
    let eps = T::from_f64(eps);

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            *x *= decay;
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            *x -= step * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

/// Seeded shuffle of `0..n` cut into chunks of `batch_size`. A trailing
/// single-text chunk is dropped unless it is the only chunk.
pub fn epoch_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        let dropped = chunks.pop().unwrap();
        log::debug!("dropping single-text trailing batch (text {})", dropped[0]);
    }
    chunks
}

/// Full training objective for one augmented batch on any graph.
pub fn batch_objective<'a, T: Scalar, G: Graph<'a, T>>(
    g: &mut G,
    pv: &ParamVars,
    batch: &AugmentedBatch<T>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let (reps, segs) = encode_packed(g, pv, &batch.token_ids(), Some(batch.packed_mask()))?;
    let sim = sim_matrix_graph(g, reps, &segs, cfg.metric)?;
    let pos = positives_mask(&batch.labels())?;
    supcon_loss(g, sim, &pos, cfg)
}

/// Loss value and gradients (in [`EncoderParams::tensors`] order).
pub fn loss_and_grads<T: Scalar>(
    params: &EncoderParams<T>,
    batch: &AugmentedBatch<T>,
    cfg: &LossConfig,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let out = batch_objective(&mut tape, &pv, batch, cfg)?;
    let loss = tape.value(out.loss).item()?;
    let mut grads = tape.backward(out.loss)?;
    Ok((loss, pv.all().into_iter().map(|v| grads.take(v)).collect()))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassEntry {
    pub label: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Trained encoder plus everything needed to rebuild its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub params: EncoderParams<f32>,
    /// Sorted by label.
    pub classes: Vec<ClassEntry>,
    /// Per-epoch log; empty for loaded models.
    pub history: Vec<EpochStats>,
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainedModel> {
    train_with(config, data, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    config: &TrainConfig,
    data: &Dataset,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if config.batch_size < 2 && data.len() > 1 {
        return Err(Error::Config(format!(
            "batch_size {} is too small for {} texts",
            config.batch_size,
            data.len()
        )));
    }

    let tok = &config.tokenizer;
    let classes: Vec<ClassEntry> = data
        .classes()
        .iter()
        .map(|label| ClassEntry {
            label: label.clone(),
            name: data.class_name(label).to_string(),
        })
        .collect();
    let label_ids: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.label.as_str(), i))
        .collect();
    let class_names: BTreeMap<usize, TokenIds> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (i, tokenize(&c.name, tok)))
        .collect();
    let texts: Vec<(TokenIds, usize)> = data
        .examples()
        .iter()
        .map(|ex| (tokenize(&ex.text, tok), label_ids[ex.label.as_str()]))
        .collect();

    let mut params: EncoderParams<f32> = init_params(tok, &config.encoder);
    let mut state = OptimizerState::new(&params.tensors(), AdamW::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let loss_cfg = config.loss_config();
    let masks = MaskSpec {
        rate: config.encoder.dropout_rate,
        d: config.encoder.d,
    };

    let mut history = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let mut total = 0.0f64;
        let batches = epoch_batches(texts.len(), config.batch_size, &mut rng);
        for (bi, idx) in batches.iter().enumerate() {
            let chunk: Vec<(TokenIds, usize)> = idx.iter().map(|&i| texts[i].clone()).collect();
            let batch: AugmentedBatch<f32> =
                build_batch(&chunk, &class_names, config.num_repeats, masks, &mut rng)?;
            let diverged = |loss: f64| Error::TrainingDiverged {
                epoch,
                batch: bi,
                loss,
            };
            let (loss, grads) = match loss_and_grads(&params, &batch, &loss_cfg) {
                Ok(out) => out,
                // Zero-norm rows and the like only arise once weights have
                // blown up or collapsed numerically.
                Err(Error::Domain(msg)) => {
                    log::error!("numeric failure in forward pass: {msg}");
                    return Err(diverged(f64::NAN));
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(loss as f64));
            }
            total += loss as f64;
            adamw_step(
                &mut params.tensors_mut(),
                &grads,
                &mut state,
                config.lr,
                config.weight_decay,
            )?;
            if !params.tensors().iter().all(|t| t.all_finite()) {
                return Err(diverged(loss as f64));
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: if batches.is_empty() { 0.0 } else { total / batches.len() as f64 },
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} mean_loss {:.6} elapsed {:.3}s",
            stats.epoch,
            stats.mean_loss,
            stats.seconds
        );
        on_epoch(&stats);
        history.push(stats);
    }

    Ok(TrainedModel {
        config: config.clone(),
        params,
        classes,
        history,
    })
}
