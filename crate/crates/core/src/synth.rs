//! Synthetic many-class benchmark data.
//!
//! Every class owns a small set of signature tokens that no other class
//! uses. A text mixes some signature tokens with tokens drawn from a shared
//! noise vocabulary; the hard preset borrows a fraction of signature tokens
//! from the neighbouring class so that classes overlap.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{Dataset, Example};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub signature_tokens_per_class: usize,
    pub shared_noise_vocab: usize,
    pub tokens_per_text: usize,
    pub signature_fraction: f64,
    pub overlap_prob: f64,
    pub k_train: usize,
    pub k_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::easy()
    }
}

impl SynthSpec {
    pub fn easy() -> Self {
        Self {
            num_classes: 50,
            signature_tokens_per_class: 4,
            shared_noise_vocab: 200,
            tokens_per_text: 8,
            signature_fraction: 0.6,
            overlap_prob: 0.0,
            k_train: 5,
            k_test: 20,
            seed: 0,
        }
    }

    pub fn hard() -> Self {
        Self {
            overlap_prob: 0.3,
            ..Self::easy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.signature_tokens_per_class == 0 || self.tokens_per_text == 0 {
            return bad("signature_tokens_per_class and tokens_per_text must be >= 1".into());
        }
        if !(self.signature_fraction > 0.0 && self.signature_fraction <= 1.0) {
            return bad(format!("signature_fraction must be in (0, 1], got {}", self.signature_fraction));
        }
        if !(0.0..1.0).contains(&self.overlap_prob) {
            return bad(format!("overlap_prob must be in [0, 1), got {}", self.overlap_prob));
        }
        if self.signature_count() < self.tokens_per_text && self.shared_noise_vocab == 0 {
            return bad("texts need noise tokens but shared_noise_vocab is 0".into());
        }
        if self.k_train + self.k_test == 0 {
            return bad("k_train + k_test must be >= 1".into());
        }
        Ok(())
    }

    /// Signature tokens per text.
    pub fn signature_count(&self) -> usize {
        ((self.signature_fraction * self.tokens_per_text as f64).round() as usize).clamp(1, self.tokens_per_text)
    }
}

pub fn class_label(c: usize) -> String {
    format!("class_{c:03}")
}

fn signature_token(c: usize, j: usize) -> String {
    format!("sig{c}x{j}")
}

fn noise_token(j: usize) -> String {
    format!("w{j}")
}

/// Returns `(train, test)` with `k_train` and `k_test` texts per class. No
/// text appears twice anywhere, so the two sets are disjoint.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.num_classes;
    let n_sig = spec.signature_count();
    let per_class = spec.k_train + spec.k_test;
    let mut seen = HashSet::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());

    for c in 0..m {
        let mut made = 0;
        let mut attempts = 0usize;
        while made < per_class {
            attempts += 1;
            if attempts > 1000 * per_class {
                return Err(Error::Config(format!(
                    "cannot draw {per_class} distinct texts for class {c}; enlarge the vocabularies"
                )));
            }
            let mut tokens = Vec::with_capacity(spec.tokens_per_text);
            for _ in 0..n_sig {
                let owner = if rng.gen::<f64>() < spec.overlap_prob { (c + 1) % m } else { c };
                tokens.push(signature_token(owner, rng.gen_range(0..spec.signature_tokens_per_class)));
            }
            for _ in n_sig..spec.tokens_per_text {
                tokens.push(noise_token(rng.gen_range(0..spec.shared_noise_vocab)));
            }
            tokens.shuffle(&mut rng);
            let text = tokens.join(" ");
            if !seen.insert(text.clone()) {
                continue;
            }
            let ex = Example::new(text, class_label(c));
            if made < spec.k_train {
                train.push(ex);
            } else {
                test.push(ex);
            }
            made += 1;
        }
    }
    Ok((Dataset::new(train)?, Dataset::new(test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{load_dataset, overlap_pairs, save_jsonl, ColumnMap, DataFormat};

    #[test]
    fn sizes_and_labels() {
        let spec = SynthSpec {
            k_train: 5,
            k_test: 20,
            ..SynthSpec::easy()
        };
        let (train, test) = generate_synthetic(&spec).unwrap();
        assert_eq!((train.len(), test.len()), (250, 1000));
        assert_eq!(train.classes().len(), 50);
        assert_eq!(train.classes()[0], "class_000");
        assert_eq!(train.classes()[49], "class_049");
        assert_eq!(overlap_pairs(&train, &test), 0);
        for ex in train.examples() {
            assert_eq!(ex.text.split(' ').count(), 8);
        }
    }

    #[test]
    fn pure_signature_texts_identify_their_class() {
        let spec = SynthSpec {
            num_classes: 10,
            signature_fraction: 1.0,
            overlap_prob: 0.0,
            k_train: 3,
            k_test: 3,
            ..SynthSpec::easy()
        };
        let (train, test) = generate_synthetic(&spec).unwrap();
        for ex in train.examples().iter().chain(test.examples()) {
            let c: usize = ex.label[6..].parse().unwrap();
            assert!(ex.text.split(' ').all(|t| t.starts_with(&format!("sig{c}x"))), "{ex:?}");
        }
    }

    #[test]
    fn hard_preset_borrows_from_the_neighbour() {
        let (train, _) = generate_synthetic(&SynthSpec::hard()).unwrap();
        let borrowed = train
            .examples()
            .iter()
            .filter(|ex| {
                let c: usize = ex.label[6..].parse().unwrap();
                ex.text.split(' ').any(|t| t.starts_with(&format!("sig{}x", (c + 1) % 50)))
            })
            .count();
        assert!(borrowed > 50, "{borrowed}");
    }

    #[test]
    fn seeded_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::hard();
        let (a, _) = generate_synthetic(&spec).unwrap();
        let (b, _) = generate_synthetic(&spec).unwrap();
        let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        save_jsonl(&a, &pa).unwrap();
        save_jsonl(&b, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(load_dataset(&pa, DataFormat::Jsonl, &ColumnMap::default()).unwrap(), a);
        let (c, _) = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs() {
        for s in [
            SynthSpec { num_classes: 1, ..SynthSpec::easy() },
            SynthSpec { overlap_prob: 1.0, ..SynthSpec::easy() },
            SynthSpec { signature_fraction: 0.0, ..SynthSpec::easy() },
        ] {
            assert!(matches!(generate_synthetic(&s), Err(Error::Config(_))));
        }
    }
}
