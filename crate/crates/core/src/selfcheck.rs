//! Finite-difference check of the whole training objective: tokenize,
//! encode, score, contrastive loss, over randomly drawn small models and
//! batches.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_many, Tensor};
use crate::contrastive::{build_batch, LossConfig, MaskSpec};
use crate::encoder::{init_params, EncoderConfig, EncoderParams, ParamVars};
use crate::similarity::SimRep;
use crate::tokenizer::{tokenize, TokenIds, TokenizerConfig};
use crate::trainer::batch_objective;
use crate::Result;

/// Central-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Pass threshold on the max relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub metric: SimRep,
    pub use_attention: bool,
    pub rows: usize,
    pub parameters: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: Vec<TrialResult>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

const WORDS: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];

fn phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Redraws every parameter at a scale where derivatives are comfortably
/// above finite-difference noise.
fn randomize(params: &mut EncoderParams<f64>, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    for x in params.ln_gain.data_mut() {
        *x = rng.gen_range(0.5..1.5);
    }
}

/// Runs `trials` random configurations, alternating the similarity metric.
pub fn pipeline_grad_check(trials: usize, seed: u64) -> Result<GradCheckReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tok = TokenizerConfig {
        vocab_size: 16,
        max_len: 4,
        lowercase: true,
    };
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let metric = if trial % 2 == 0 { SimRep::Token } else { SimRep::Cls };
        let d = rng.gen_range(3..=5);
        let enc = EncoderConfig {
            d,
            h: rng.gen_range(d..=8),
            dropout_rate: rng.gen_range(0.0..0.4),
            use_attention: rng.gen_bool(0.5),
            init_seed: rng.gen(),
        };
        let mut params: EncoderParams<f64> = init_params(&tok, &enc);
        randomize(&mut params, &mut rng);

        let n_classes = rng.gen_range(1..=3);
        let names: BTreeMap<usize, TokenIds> = (0..n_classes).map(|c| (c, tokenize(&phrase(&mut rng, 2), &tok))).collect();
        let b = rng.gen_range(1..=3);
        let texts: Vec<(TokenIds, usize)> = (0..b)
            .map(|_| (tokenize(&phrase(&mut rng, 4), &tok), rng.gen_range(0..n_classes)))
            .collect();
        let repeats = rng.gen_range(1..=2);
        let mask = MaskSpec { rate: enc.dropout_rate, d };
        let batch = build_batch::<f64, _>(&texts, &names, repeats, mask, &mut rng)?;
        let cfg = LossConfig {
            temperature: [0.05, 0.1, 0.5, 1.0][rng.gen_range(0..4)],
            metric,
        };

        let points: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
        let err = grad_check_many(
            |t, vars| Ok(batch_objective(t, &ParamVars::from_slice(vars), &batch, &cfg)?.loss),
            &points,
            GRAD_CHECK_EPS,
        )?;
        results.push(TrialResult {
            trial,
            metric,
            use_attention: enc.use_attention,
            rows: batch.len(),
            parameters: points.iter().map(Tensor::len).sum(),
            max_rel_error: err,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        trials: results,
        tolerance: GRAD_CHECK_TOL,
        seconds: start.elapsed().as_secs_f64(),
    })
}
