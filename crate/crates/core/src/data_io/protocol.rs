use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{overlap_pairs, sample_kshot, Dataset};
use crate::classifier::{evaluate, model_class_index};
use crate::trainer::{train, TrainConfig};
use crate::{Error, Result};

/// Mean and sample standard deviation (n − 1 denominator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Set when `n == 1`; `std` is then reported as 0.
    pub single_seed: bool,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
            single_seed: false,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary {
        mean,
        std,
        n,
        single_seed: n == 1,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub train_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub k: usize,
    /// Ordered by seed as given, whatever the completion order.
    pub per_seed: Vec<SeedOutcome>,
    /// Over successful seeds only.
    pub summary: Summary,
    pub total_seconds: f64,
    /// `(text, label)` pairs shared by the train pool and the test set.
    pub overlap_pairs: usize,
}

impl Report {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().filter_map(|s| s.accuracy).collect()
    }

    pub fn failed(&self) -> usize {
        self.per_seed.iter().filter(|s| s.error.is_some()).count()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8}  {:>9}  {:>9}", "seed", "accuracy", "train_s")?;
        for s in &self.per_seed {
            match (&s.accuracy, &s.error) {
                (Some(a), _) => writeln!(f, "{:>8}  {:>9.4}  {:>9.2}", s.seed, a, s.train_seconds)?,
                (None, Some(e)) => writeln!(f, "{:>8}  {:>9}  {e}", s.seed, "FAILED")?,
                (None, None) => writeln!(f, "{:>8}  {:>9}", s.seed, "-")?,
            }
        }
        write!(
            f,
            "k={} mean={:.4} std={:.4}{} n={} total={:.2}s",
            self.k,
            self.summary.mean,
            self.summary.std,
            if self.summary.single_seed { " (single seed)" } else { "" },
            self.summary.n,
            self.total_seconds
        )?;
        if self.overlap_pairs > 0 {
            write!(f, "\nwarning: {} train/test pairs overlap", self.overlap_pairs)?;
        }
        Ok(())
    }
}

fn run_seed(train_full: &Dataset, test: &Dataset, k: usize, seed: u64, config: &TrainConfig) -> Result<(f64, f64)> {
    let split = sample_kshot(train_full, k, seed, false)?;
    let start = Instant::now();
    let model = train(&config.clone().with_seed(seed), &split)?;
    let seconds = start.elapsed().as_secs_f64();
    let index = model_class_index(&model)?;
    Ok((evaluate(&model, &index, test)?.accuracy, seconds))
}

/// For each seed: draw a k-shot split, train with that seed, and evaluate on
/// `test`. Failed seeds are recorded, not fatal.
pub fn multi_seed_eval(
    train_full: &Dataset,
    test: &Dataset,
    k: usize,
    seeds: &[u64],
    config: &TrainConfig,
    parallel: bool,
) -> Result<Report> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    config.validate()?;
    let overlap = overlap_pairs(train_full, test);
    if overlap > 0 {
        log::warn!("{overlap} (text, label) pairs appear in both train and test data");
    }
    let start = Instant::now();
    let one = |&seed: &u64| {
        let (accuracy, train_seconds, error) = match run_seed(train_full, test, k, seed, config) {
            Ok((a, s)) => (Some(a), s, None),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                (None, 0.0, Some(e.to_string()))
            }
        };
        SeedOutcome {
            seed,
            accuracy,
            train_seconds,
            error,
        }
    };
    let per_seed: Vec<SeedOutcome> = if parallel {
        seeds.par_iter().map(one).collect()
    } else {
        seeds.iter().map(one).collect()
    };
    let accs: Vec<f64> = per_seed.iter().filter_map(|s| s.accuracy).collect();
    Ok(Report {
        k,
        summary: summarize(&accs),
        per_seed,
        total_seconds: start.elapsed().as_secs_f64(),
        overlap_pairs: overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_accuracies() {
        let s = summarize(&[0.9; 5]);
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!(s.std.abs() < 1e-12);
        assert!(!s.single_seed);
    }

    #[test]
    fn single_seed_flag() {
        let s = summarize(&[0.7]);
        assert_eq!((s.mean, s.std, s.single_seed), (0.7, 0.0, true));
    }

    #[test]
    fn sample_std_known_value() {
        // 1..=5: mean 3, sum of squares 10, / 4 -> 2.5
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_seed_list() {
        let d = Dataset::new(vec![super::super::Example::new("a", "x")]).unwrap();
        assert!(matches!(
            multi_seed_eval(&d, &d, 1, &[], &TrainConfig::default(), false),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn summary_matches_two_pass_recomputation(v in proptest::collection::vec(0.0f64..1.0, 2..20)) {
            let s = summarize(&v);
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| x * x).sum::<f64>() / (n - 1.0) - mean * mean * n / (n - 1.0);
            prop_assert!((s.mean - mean).abs() < 1e-12);
            prop_assert!((s.std - var.max(0.0).sqrt()).abs() < 1e-6);
        }
    }
}
