//! Optimized graph code against the straight-line reference implementations.

use std::collections::BTreeMap;

use fewfit_core::autodiff::Tensor;
use fewfit_core::classifier::{class_scores, model_class_index, predict};
use fewfit_core::contrastive::{positives_mask, supcon_loss_value, LossConfig};
use fewfit_core::encoder::{encode_tokens, init_params, EncodeMode, EncoderConfig, EncoderParams, TokenReps};
use fewfit_core::similarity::{sim_matrix, sim_token, SimMatrix};
use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::tokenizer::{tokenize, TokenizerConfig};
use fewfit_core::{train, SimRep, TrainConfig};
use fewfit_oracles as oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_tok() -> TokenizerConfig {
    TokenizerConfig {
        vocab_size: 97,
        max_len: 6,
        lowercase: true,
    }
}

fn random_text(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.gen_range(1..=max_words);
    (0..n).map(|_| format!("w{}", rng.gen_range(0..30))).collect::<Vec<_>>().join(" ")
}

fn as_text(r: &TokenReps<f64>) -> oracle::Text {
    r.valid_rows().map(<[f64]>::to_vec).collect()
}

fn oracle_metric(m: SimRep) -> oracle::Metric {
    match m {
        SimRep::Token => oracle::Metric::Token,
        SimRep::Cls => oracle::Metric::Cls,
    }
}

fn encoder(seed: u64, use_attention: bool) -> EncoderParams<f64> {
    let enc = EncoderConfig {
        d: 8,
        h: 16,
        use_attention,
        init_seed: seed,
        ..Default::default()
    };
    init_params(&small_tok(), &enc)
}

#[test]
fn loss_matches_bruteforce_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let n = rng.gen_range(2..=12);
        let classes = rng.gen_range(1..=4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let metric = if trial % 2 == 0 { SimRep::Token } else { SimRep::Cls };
        let scale = if metric == SimRep::Token { 4.0 } else { 1.0 };
        let mut sim = vec![vec![0.0; n]; n];
        for (i, row) in sim.iter_mut().enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                if i != j {
                    *s = rng.gen_range(-scale..scale);
                }
            }
        }
        for tau in [0.05, 0.1, 1.0] {
            let m = SimMatrix {
                scores: Tensor::from_rows(&sim).unwrap(),
                metric,
            };
            let got = supcon_loss_value(&m, &positives_mask(&labels).unwrap(), &LossConfig { temperature: tau, metric })
                .unwrap();
            let want = oracle::supcon_loss(&sim, &labels, tau);
            assert!((got - want).abs() < 1e-6, "trial {trial} τ={tau}: {got} vs {want}");
        }
    }
}

#[test]
fn similarity_matrix_matches_pairwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let params = encoder(trial, trial % 3 == 0);
        let n = rng.gen_range(2..8);
        let reps: Vec<TokenReps<f64>> = (0..n)
            .map(|_| {
                let ids = tokenize(&random_text(&mut rng, 6), &small_tok());
                encode_tokens(&params, &ids, EncodeMode::Eval).unwrap()
            })
            .collect();
        let texts: Vec<oracle::Text> = reps.iter().map(as_text).collect();
        for metric in [SimRep::Token, SimRep::Cls] {
            let got = sim_matrix(&reps, metric).unwrap();
            let want = oracle::sim_matrix(&texts, oracle_metric(metric));
            for i in 0..n {
                for j in 0..n {
                    let g = got.scores.get(i, j);
                    assert!((g - want[i][j]).abs() < 1e-6, "{metric} ({i},{j}): {g} vs {}", want[i][j]);
                }
            }
        }
    }
}

#[test]
fn self_maxsim_counts_valid_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = encoder(5, true);
    for _ in 0..100 {
        let ids = tokenize(&random_text(&mut rng, 6), &small_tok());
        let r = encode_tokens(&params, &ids, EncodeMode::Eval).unwrap();
        assert!((sim_token(&r, &r) - ids.n_valid as f64).abs() < 1e-5);
        assert!((oracle::maxsim(&as_text(&r), &as_text(&r)) - ids.n_valid as f64).abs() < 1e-5);
    }
}

#[test]
fn prediction_matches_bruteforce_class_scoring() {
    let spec = SynthSpec {
        k_train: 5,
        k_test: 4,
        ..SynthSpec::easy()
    };
    let (train_set, test_set) = generate_synthetic(&spec).unwrap();
    for metric in [SimRep::Token, SimRep::Cls] {
        let config = TrainConfig {
            epochs: 3,
            metric,
            ..Default::default()
        };
        let model = train(&config, &train_set).unwrap();
        let index = model_class_index(&model).unwrap();
        let tok = &model.config.tokenizer;
        let params = model.params.cast::<f64>();
        let names: BTreeMap<&str, oracle::Text> = model
            .classes
            .iter()
            .map(|c| {
                let r = encode_tokens(&params, &tokenize(&c.name, tok), EncodeMode::Eval).unwrap();
                (c.label.as_str(), as_text(&r))
            })
            .collect();
        for ex in test_set.examples().iter().take(60) {
            let q = as_text(&encode_tokens(&params, &tokenize(&ex.text, tok), EncodeMode::Eval).unwrap());
            let mut best: Option<(&str, f64)> = None;
            let mut brute = Vec::new();
            for (label, name) in &names {
                let s = match metric {
                    SimRep::Token => oracle::maxsim(&q, name),
                    SimRep::Cls => oracle::cosine_of_means(&q, name),
                };
                brute.push(s);
                if best.map_or(true, |(_, b)| s > b) {
                    best = Some((label, s));
                }
            }
            let scores = class_scores(&model, &index, &ex.text).unwrap();
            for (a, b) in scores.iter().zip(&brute) {
                assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
            }
            let p = predict(&model, &index, &ex.text, 1).unwrap();
            let (label, score) = best.unwrap();
            if p.label != label {
                // Only acceptable when the two winners are within f32 rounding.
                let other = brute[index.position(&p.label).unwrap()];
                assert!((other - score).abs() < 1e-5, "{} vs {label}", p.label);
            }
        }
    }
}
