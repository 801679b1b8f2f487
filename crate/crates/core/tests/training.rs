use std::collections::BTreeMap;

use fewfit_core::autodiff::grad_check_many;
use fewfit_core::classifier::{evaluate, model_class_index, predict};
use fewfit_core::contrastive::{build_batch, MaskSpec};
use fewfit_core::data_io::{model_from_bytes, model_to_bytes, multi_seed_eval, sample_kshot};
use fewfit_core::encoder::{init_params, EncoderConfig, EncoderParams, ParamVars};
use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::tokenizer::{tokenize, TokenIds, TokenizerConfig};
use fewfit_core::trainer::{batch_objective, train_with, EpochStats};
use fewfit_core::{train, Dataset, Error, Example, SimRep, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_synth(seed: u64) -> (Dataset, Dataset) {
    generate_synthetic(&SynthSpec {
        num_classes: 10,
        k_train: 5,
        k_test: 10,
        seed,
        ..SynthSpec::easy()
    })
    .unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        encoder: EncoderConfig {
            d: 32,
            h: 64,
            ..Default::default()
        },
        tokenizer: TokenizerConfig {
            vocab_size: 4096,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn single_text_single_class_has_zero_loss() {
    let data = Dataset::new(vec![Example::new("only one text", "lonely")]).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 1,
        num_repeats: 1,
        ..quick(3)
    };
    let model = train(&config, &data).unwrap();
    assert_eq!(model.history.len(), 3);
    assert!(model.history.iter().all(|h| h.mean_loss == 0.0), "{:?}", model.history);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (train_set, _) = small_synth(0);
    let a = model_to_bytes(&train(&quick(2), &train_set).unwrap()).unwrap();
    let b = model_to_bytes(&train(&quick(2), &train_set).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = model_to_bytes(&train(&quick(2).with_seed(1), &train_set).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn round_trip_preserves_predictions() {
    let (train_set, test_set) = small_synth(1);
    let model = train(&quick(3), &train_set).unwrap();
    let loaded = model_from_bytes(&model_to_bytes(&model).unwrap()).unwrap();
    assert_eq!(loaded.params, model.params);
    let (ia, ib) = (model_class_index(&model).unwrap(), model_class_index(&loaded).unwrap());
    for ex in test_set.examples() {
        assert_eq!(
            predict(&model, &ia, &ex.text, 3).unwrap(),
            predict(&loaded, &ib, &ex.text, 3).unwrap()
        );
    }
}

#[test]
fn loss_decreases_early_on_separable_data() {
    // The default benchmark and default training settings.
    let (train_set, _) = generate_synthetic(&SynthSpec::easy()).unwrap();
    let config = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let mut seen: Vec<EpochStats> = Vec::new();
    let model = train_with(&config, &train_set, |s| seen.push(s.clone())).unwrap();
    assert_eq!(seen, model.history);
    let losses: Vec<f64> = seen.iter().map(|s| s.mean_loss).collect();
    let increases: Vec<usize> = (1..5).filter(|&i| losses[i] > losses[i - 1]).collect();
    assert!(increases.len() <= 1, "{losses:?}");
    for &i in &increases {
        assert!(losses[i] <= 1.05 * losses[i - 1], "{losses:?}");
    }
    assert!(losses[4] < losses[0]);
    assert!(seen.windows(2).all(|w| w[1].seconds >= w[0].seconds));
}

#[test]
fn short_training_beats_chance() {
    let (train_set, test_set) = small_synth(2);
    let model = train(&quick(8), &train_set).unwrap();
    let index = model_class_index(&model).unwrap();
    assert!(evaluate(&model, &index, &test_set).unwrap().accuracy > 0.5);
}

#[test]
fn repeats_multiply_effective_batch() {
    let tok = TokenizerConfig::default();
    let texts: Vec<(TokenIds, usize)> = (0..5).map(|i| (tokenize(&format!("text {i}"), &tok), i % 2)).collect();
    let names: BTreeMap<usize, TokenIds> = [(0, tokenize("even", &tok)), (1, tokenize("odd", &tok))].into();
    for r in [1, 2, 4] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = build_batch::<f32, _>(&texts, &names, r, MaskSpec { rate: 0.1, d: 8 }, &mut rng).unwrap();
        assert_eq!(batch.len(), 2 * 5 * r);
    }
}

#[test]
fn bad_training_inputs() {
    let empty = Dataset::new(vec![]).unwrap();
    assert!(matches!(train(&quick(1), &empty), Err(Error::Data(_))));
    let (train_set, _) = small_synth(0);
    let tiny_batch = TrainConfig {
        batch_size: 1,
        ..quick(1)
    };
    assert!(matches!(train(&tiny_batch, &train_set), Err(Error::Config(_))));
}

#[test]
fn diverging_training_is_reported() {
    let (train_set, _) = small_synth(0);
    let config = TrainConfig {
        lr: 1e30,
        temperature: 1e-30,
        ..quick(3)
    };
    match train(&config, &train_set) {
        Err(Error::TrainingDiverged { epoch, .. }) => assert!(epoch < 3),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.history)),
    }
}

#[test]
fn kshot_protocol_end_to_end() {
    let (pool, test_set) = generate_synthetic(&SynthSpec {
        num_classes: 6,
        k_train: 12,
        k_test: 5,
        ..SynthSpec::easy()
    })
    .unwrap();
    for k in [5, 10] {
        let split = sample_kshot(&pool, k, 0, false).unwrap();
        assert_eq!(split.len(), 6 * k);
    }
    let report = multi_seed_eval(&pool, &test_set, 5, &[0, 1, 2], &quick(2), true).unwrap();
    assert_eq!(report.per_seed.iter().map(|s| s.seed).collect::<Vec<_>>(), [0, 1, 2]);
    assert_eq!(report.failed(), 0);
    assert_eq!(report.overlap_pairs, 0);
    let sequential = multi_seed_eval(&pool, &test_set, 5, &[0, 1, 2], &quick(2), false).unwrap();
    assert_eq!(report.accuracies(), sequential.accuracies());
    let failing = multi_seed_eval(&pool, &test_set, 50, &[0], &quick(1), false).unwrap();
    assert_eq!(failing.failed(), 1);
    assert!(failing.per_seed[0].error.as_deref().unwrap().contains("class"));
}

#[test]
fn full_pipeline_gradients_small_config() {
    let tok = TokenizerConfig {
        vocab_size: 16,
        max_len: 4,
        lowercase: true,
    };
    let enc = EncoderConfig {
        d: 4,
        h: 8,
        use_attention: true,
        init_seed: 3,
        dropout_rate: 0.2,
    };
    let params: EncoderParams<f64> = init_params(&tok, &enc);
    let texts: Vec<(TokenIds, usize)> = ["a b", "c", "a d e"].iter().zip([0, 1, 0]).map(|(t, l)| (tokenize(t, &tok), l)).collect();
    let names: BTreeMap<usize, TokenIds> = [(0, tokenize("x", &tok)), (1, tokenize("y z", &tok))].into();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = build_batch::<f64, _>(&texts, &names, 2, MaskSpec { rate: 0.2, d: 4 }, &mut rng).unwrap();
    let points: Vec<_> = params.tensors().into_iter().cloned().collect();
    for metric in [SimRep::Token, SimRep::Cls] {
        let cfg = fewfit_core::contrastive::LossConfig { temperature: 0.5, metric };
        let err = grad_check_many(
            |t, vars| Ok(batch_objective(t, &ParamVars::from_slice(vars), &batch, &cfg)?.loss),
            &points,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{metric}: {err:e}");
    }
}
