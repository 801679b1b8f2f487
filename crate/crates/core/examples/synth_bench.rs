//! Runs the synthetic benchmark and prints the report as JSON.
//!
//! `cargo run --release --example synth_bench -- [hard] [cls]`

use fewfit_core::benchmark::bench_synth;
use fewfit_core::synth::SynthSpec;
use fewfit_core::{SimRep, TrainConfig};

fn main() -> fewfit_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let spec = if args.iter().any(|a| a == "hard") { SynthSpec::hard() } else { SynthSpec::easy() };
    let metric = if args.iter().any(|a| a == "cls") { SimRep::Cls } else { SimRep::Token };
    let config = TrainConfig { metric, ..Default::default() };
    let report = bench_synth(&spec, &config, &[0, 1, 2, 3, 4])?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
