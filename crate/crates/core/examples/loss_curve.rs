//! Prints the per-epoch mean loss on the synthetic benchmark.
//!
//! `cargo run --release --example loss_curve -- [seed] [epochs]`

use fewfit_core::synth::{generate_synthetic, SynthSpec};
use fewfit_core::trainer::train_with;
use fewfit_core::TrainConfig;

fn main() -> fewfit_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(0, |s| s.parse().expect("seed"));
    let epochs = args.next().map_or(10, |s| s.parse().expect("epochs"));
    let (train_set, _) = generate_synthetic(&SynthSpec { seed, ..SynthSpec::easy() })?;
    let config = TrainConfig { epochs, ..Default::default() }.with_seed(seed);
    train_with(&config, &train_set, |s| println!("{} {:.4} {:.2}s", s.epoch, s.mean_loss, s.seconds))?;
    Ok(())
}
