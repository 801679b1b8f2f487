use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fewfit_core::classifier::{model_class_index, predict};
use fewfit_core::contrastive::{build_batch, MaskSpec};
use fewfit_core::encoder::{encode_tokens, init_params, EncodeMode, EncoderParams, TokenReps};
use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::tokenizer::{tokenize, TokenIds};
use fewfit_core::trainer::loss_and_grads;
use fewfit_core::{train, SimRep, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn texts(n: usize) -> Vec<(String, String)> {
    let (train_set, _) = generate_synthetic(&SynthSpec::easy()).unwrap();
    train_set.examples().iter().take(n).map(|e| (e.text.clone(), e.label.clone())).collect()
}

fn params(config: &TrainConfig) -> EncoderParams<f32> {
    init_params(&config.tokenizer, &config.encoder)
}

fn bench_encode(c: &mut Criterion) {
    let config = TrainConfig::default();
    let p = params(&config);
    let ids = tokenize("open a new checking account for my small business today", &config.tokenizer);
    c.bench_function("encode_text", |b| b.iter(|| encode_tokens(&p, black_box(&ids), EncodeMode::Eval).unwrap()));
}

fn bench_sim_matrix(c: &mut Criterion) {
    let config = TrainConfig::default();
    let p = params(&config);
    let reps: Vec<TokenReps<f32>> = texts(64)
        .iter()
        .map(|(t, _)| encode_tokens(&p, &tokenize(t, &config.tokenizer), EncodeMode::Eval).unwrap())
        .collect();
    let mut group = c.benchmark_group("sim_matrix_64");
    for metric in [SimRep::Token, SimRep::Cls] {
        group.bench_with_input(BenchmarkId::from_parameter(metric), &metric, |b, &m| {
            b.iter(|| fewfit_core::similarity::sim_matrix(black_box(&reps), m).unwrap())
        });
    }
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let config = TrainConfig::default();
    let p = params(&config);
    let raw = texts(config.batch_size);
    let mut labels = BTreeMap::new();
    let batch_texts: Vec<(TokenIds, usize)> = raw
        .iter()
        .map(|(t, l)| {
            let next = labels.len();
            let id = *labels.entry(l.clone()).or_insert(next);
            (tokenize(t, &config.tokenizer), id)
        })
        .collect();
    let names: BTreeMap<usize, TokenIds> = labels.iter().map(|(l, &i)| (i, tokenize(l, &config.tokenizer))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mask = MaskSpec {
        rate: config.encoder.dropout_rate,
        d: config.encoder.d,
    };
    let batch = build_batch::<f32, _>(&batch_texts, &names, config.num_repeats, mask, &mut rng).unwrap();
    let mut group = c.benchmark_group("loss_and_grads_b32_r4");
    for metric in [SimRep::Token, SimRep::Cls] {
        let cfg = TrainConfig { metric, ..config.clone() }.loss_config();
        group.bench_with_input(BenchmarkId::from_parameter(metric), &cfg, |b, cfg| {
            b.iter(|| loss_and_grads(&p, black_box(&batch), cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_predict(c: &mut Criterion) {
    let (train_set, test_set) = generate_synthetic(&SynthSpec::easy()).unwrap();
    let model = train(&TrainConfig { epochs: 2, ..Default::default() }, &train_set).unwrap();
    let index = model_class_index(&model).unwrap();
    let text = test_set.examples()[0].text.clone();
    c.bench_function("predict_50_classes", |b| b.iter(|| predict(&model, &index, black_box(&text), 1).unwrap()));
}

criterion_group!(benches, bench_encode, bench_sim_matrix, bench_train_step, bench_predict);
criterion_main!(benches);
