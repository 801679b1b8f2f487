//! Wall-clock training time, inference throughput, and accuracy over seeds.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifier::{evaluate, model_class_index, predict, ClassIndex};
use crate::data_io::{summarize, Dataset};
use crate::synth::{generate_synthetic, SynthSpec};
use crate::trainer::{train, TrainConfig, TrainedModel};
use crate::{Error, Result};

/// Inference throughput is measured over at least this many predictions.
pub const MIN_PREDICT_CALLS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedBench {
    pub seed: u64,
    pub accuracy: f64,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub train_seconds: f64,
    pub throughput_tps: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub per_seed: Vec<SeedBench>,
    pub config: serde_json::Value,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Single-threaded predictions per second, cycling through `texts` until at
/// least `min_calls` predictions have been made.
pub fn measure_throughput(model: &TrainedModel, index: &ClassIndex, texts: &[&str], min_calls: usize) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Data("no texts to measure throughput on".into()));
    }
    let calls = min_calls.max(texts.len());
    let start = Instant::now();
    for i in 0..calls {
        std::hint::black_box(predict(model, index, texts[i % texts.len()], 1)?);
    }
    Ok(calls as f64 / start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
}

/// Trains `repeats` times (excluding any data loading) and reports the median
/// time, then measures throughput and test accuracy on the last model.
pub fn bench_timing(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset, repeats: usize) -> Result<BenchReport> {
    let mut times = Vec::new();
    let mut model = None;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let m = train(config, train_set)?;
        times.push(start.elapsed().as_secs_f64());
        model = Some(m);
    }
    let model = model.unwrap();
    let index = model_class_index(&model)?;
    let texts: Vec<&str> = test_set.examples().iter().map(|e| e.text.as_str()).collect();
    let throughput = measure_throughput(&model, &index, &texts, MIN_PREDICT_CALLS)?;
    let accuracy = evaluate(&model, &index, test_set)?.accuracy;
    let train_seconds = median(times);
    Ok(BenchReport {
        train_seconds,
        throughput_tps: throughput,
        accuracy_mean: accuracy,
        accuracy_std: 0.0,
        per_seed: vec![SeedBench {
            seed: config.seed,
            accuracy,
            train_seconds,
        }],
        config: serde_json::json!({ "train": config }),
    })
}

/// One synthetic dataset and one training run per seed; the seed drives the
/// data generator, parameter init, shuffling, and dropout. Training time is
/// the median over seeds; throughput is measured on the first seed's model.
pub fn bench_synth(spec: &SynthSpec, config: &TrainConfig, seeds: &[u64]) -> Result<BenchReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut per_seed = Vec::with_capacity(seeds.len());
    let mut throughput = None;
    for &seed in seeds {
        let (train_set, test_set) = generate_synthetic(&SynthSpec { seed, ..spec.clone() })?;
        let cfg = config.clone().with_seed(seed);
        let start = Instant::now();
        let model = train(&cfg, &train_set)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let index = model_class_index(&model)?;
        let accuracy = evaluate(&model, &index, &test_set)?.accuracy;
        log::info!("seed {seed}: accuracy {accuracy:.4}, train {train_seconds:.2}s");
        if throughput.is_none() {
            let texts: Vec<&str> = test_set.examples().iter().map(|e| e.text.as_str()).collect();
            throughput = Some(measure_throughput(&model, &index, &texts, MIN_PREDICT_CALLS)?);
        }
        per_seed.push(SeedBench {
            seed,
            accuracy,
            train_seconds,
        });
    }
    let summary = summarize(&per_seed.iter().map(|s| s.accuracy).collect::<Vec<_>>());
    Ok(BenchReport {
        train_seconds: median(per_seed.iter().map(|s| s.train_seconds).collect()),
        throughput_tps: throughput.unwrap(),
        accuracy_mean: summary.mean,
        accuracy_std: summary.std,
        per_seed,
        config: serde_json::json!({ "synth": spec, "train": config }),
    })
}
