//! Wall-clock checks. Kept in their own binary, as a single test, so no
//! other test competes for the CPU while timing.

use fewfit_core::benchmark::{bench_timing, measure_throughput};
use fewfit_core::classifier::model_class_index;
use fewfit_core::encoder::EncoderConfig;
use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::{train, TrainConfig};

#[test]
fn timing_scales_and_throughput_is_stable() {
    let (train_set, test_set) = generate_synthetic(&SynthSpec {
        num_classes: 20,
        k_train: 5,
        k_test: 10,
        ..SynthSpec::easy()
    })
    .unwrap();
    let base = TrainConfig {
        epochs: 4,
        encoder: EncoderConfig {
            d: 32,
            h: 64,
            ..Default::default()
        },
        ..Default::default()
    };
    let one = bench_timing(&base, &train_set, &test_set, 3).unwrap();
    assert!(one.train_seconds > 0.0 && one.throughput_tps > 0.0);
    let doubled = bench_timing(&TrainConfig { epochs: 8, ..base.clone() }, &train_set, &test_set, 3).unwrap();
    let ratio = doubled.train_seconds / one.train_seconds;
    assert!((1.6..=2.6).contains(&ratio), "doubling epochs scaled time by {ratio:.2}");

    let model = train(&base, &train_set).unwrap();
    let index = model_class_index(&model).unwrap();
    let texts: Vec<&str> = test_set.examples().iter().map(|e| e.text.as_str()).collect();
    let a = measure_throughput(&model, &index, &texts, 2000).unwrap();
    let b = measure_throughput(&model, &index, &texts, 2000).unwrap();
    assert!((a / b - 1.0).abs() <= 0.3, "{a:.0} vs {b:.0} texts/s");
}
