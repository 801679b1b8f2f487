//! Batch augmentation and the supervised batch contrastive loss.
//!
//! For anchor `b` with positives `P(b)` (same label, `b` itself excluded):
//!
//! ```text
//! L = Σ_b  -1/|P(b)|  Σ_{p ∈ P(b)}  log( exp(S(b,p)/τ) / Σ_{a ≠ b} exp(S(b,a)/τ) )
//! ```
//!
//! Anchors without positives contribute nothing.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Eval, Graph, Scalar, Tensor, Var};
use crate::encoder::sample_dropout_mask;
use crate::similarity::{SimMatrix, SimRep};
use crate::tokenizer::TokenIds;
use crate::{Error, Result};

/// Excludes the diagonal from the log-sum-exp; `exp` of it underflows to 0.
const DIAGONAL_FILL: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOrigin {
    Text,
    ClassName,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub ids: TokenIds,
    pub label: usize,
    pub origin: RowOrigin,
    pub repeat: usize,
}

/// `2·B·r` encoder rows: for each repeat, the `B` texts followed by their
/// `B` class names, each row with its own dropout mask.
#[derive(Clone, Debug)]
pub struct AugmentedBatch<T> {
    pub rows: Vec<BatchRow>,
    pub base_size: usize,
    pub repeats: usize,
    /// Embedding-site mask per row, `n_valid × d`.
    pub dropout_masks: Vec<Tensor<T>>,
}

impl<T: Scalar> AugmentedBatch<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn token_ids(&self) -> Vec<&TokenIds> {
        self.rows.iter().map(|r| &r.ids).collect()
    }

    /// All row masks stacked in packed-token order.
    pub fn packed_mask(&self) -> Tensor<T> {
        let d = self.dropout_masks.first().map_or(0, Tensor::cols);
        let mut data = Vec::new();
        for m in &self.dropout_masks {
            data.extend_from_slice(m.data());
        }
        let rows = data.len() / d.max(1);
        Tensor::new(rows, d, data).expect("uniform width")
    }
}

/// Dropout settings used when drawing per-row masks.
#[derive(Clone, Copy, Debug)]
pub struct MaskSpec {
    pub rate: f64,
    pub d: usize,
}

pub fn build_batch<T: Scalar, R: Rng + ?Sized>(
    texts: &[(TokenIds, usize)],
    class_names: &BTreeMap<usize, TokenIds>,
    repeats: usize,
    masks: MaskSpec,
    rng: &mut R,
) -> Result<AugmentedBatch<T>> {
    if repeats == 0 {
        return Err(Error::Config("num_repeats must be >= 1".into()));
    }
    let mut names = Vec::with_capacity(texts.len());
    for (_, label) in texts {
        let name = class_names
            .get(label)
            .ok_or_else(|| Error::Config(format!("no class name for label {label}")))?;
        names.push(name);
    }

    let mut rows = Vec::with_capacity(2 * texts.len() * repeats);
    for repeat in 0..repeats {
        for (ids, label) in texts {
            rows.push(BatchRow {
                ids: ids.clone(),
                label: *label,
                origin: RowOrigin::Text,
                repeat,
            });
        }
        for (name, (_, label)) in names.iter().zip(texts) {
            rows.push(BatchRow {
                ids: (*name).clone(),
                label: *label,
                origin: RowOrigin::ClassName,
                repeat,
            });
        }
    }
    let dropout_masks = rows
        .iter()
        .map(|r| sample_dropout_mask(rng, r.ids.n_valid, masks.d, masks.rate))
        .collect();
    Ok(AugmentedBatch {
        rows,
        base_size: texts.len(),
        repeats,
        dropout_masks,
    })
}

/// `R×R` positives; `(b, p)` is set iff labels match and `b != p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PositivesMask {
    n: usize,
    mask: Vec<bool>,
}

impl PositivesMask {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, b: usize, p: usize) -> bool {
        self.mask[b * self.n + p]
    }

    pub fn positives(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&p| self.get(b, p))
    }

    pub fn count(&self, b: usize) -> usize {
        self.positives(b).count()
    }

    pub fn as_rows(&self) -> Vec<Vec<bool>> {
        self.mask.chunks(self.n).map(<[bool]>::to_vec).collect()
    }
}

pub fn positives_mask<L: PartialEq>(labels: &[L]) -> Result<PositivesMask> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Contract(format!("positives need >= 2 rows, got {n}")));
    }
    let mask = (0..n * n)
        .map(|i| {
            let (b, p) = (i / n, i % n);
            b != p && labels[b] == labels[p]
        })
        .collect();
    Ok(PositivesMask { n, mask })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub metric: SimRep,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            metric: SimRep::Token,
        }
    }
}

pub struct LossOutput {
    pub loss: Var,
    /// Set when no anchor had a positive, so the loss is identically zero.
    pub no_positives: bool,
}

/// Differentiable batch contrastive loss on a graph.
///
/// Each row's log-sum-exp subtracts the row max (held constant) before
/// exponentiating.
pub fn supcon_loss<'a, T: Scalar, G: Graph<'a, T>>(
    g: &mut G,
    sim: Var,
    pos: &PositivesMask,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if !(cfg.temperature > 0.0) {
        return Err(Error::Config(format!(
            "temperature must be > 0, got {}",
            cfg.temperature
        )));
    }
    let n = pos.len();
    if g.value(sim).shape() != [n, n] {
        return Err(Error::shape(format!(
            "similarity {:?} vs positives {n}x{n}",
            g.value(sim).shape()
        )));
    }

    let mut weights = Tensor::zeros(n, n);
    let mut no_positives = true;
    for b in 0..n {
        let count = pos.count(b);
        if count == 0 {
            continue;
        }
        no_positives = false;
        let w = T::from_f64(-1.0 / count as f64);
        for p in pos.positives(b) {
            weights.set(b, p, w);
        }
    }
    if no_positives {
        log::warn!("contrastive batch has no positive pairs; loss is zero");
    }

    let z = g.scale(sim, T::from_f64(1.0 / cfg.temperature));
    let diag: Vec<bool> = (0..n * n).map(|i| i / n == i % n).collect();
    let denom = g.masked_fill(z, diag, T::from_f64(DIAGONAL_FILL))?;
    let (row_max, _) = kernels::max_axis(g.value(denom), 1)?;
    let row_max = g.constant(row_max);
    let row_max_b = g.broadcast(row_max, n, n)?;
    let shifted = g.sub(denom, row_max_b)?;
    let e = g.exp(shifted);
    let s = g.sum_axis(e, 1)?;
    let lse = g.log(s)?;
    let lse = g.add(lse, row_max)?;
    let lse = g.broadcast(lse, n, n)?;
    let log_prob = g.sub(z, lse)?;
    let w = g.constant(weights);
    let terms = g.mul(log_prob, w)?;
    let loss = g.sum_all(terms);
    Ok(LossOutput { loss, no_positives })
}

/// Loss value for a precomputed similarity matrix.
pub fn supcon_loss_value<T: Scalar>(
    sim: &SimMatrix<T>,
    pos: &PositivesMask,
    cfg: &LossConfig,
) -> Result<T> {
    let mut g = Eval::new();
    let s = g.constant(sim.scores.clone());
    let out = supcon_loss(&mut g, s, pos, cfg)?;
    g.value(out.loss).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use crate::tokenizer::{tokenize, TokenizerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sim(rows: &[&[f64]]) -> SimMatrix<f64> {
        let data: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        SimMatrix {
            scores: Tensor::from_rows(&data).unwrap(),
            metric: SimRep::Token,
        }
    }

    fn cfg(t: f64) -> LossConfig {
        LossConfig {
            temperature: t,
            metric: SimRep::Token,
        }
    }

    #[test]
    fn positives_examples() {
        let m = positives_mask(&["A", "B", "A"]).unwrap();
        assert_eq!(m.positives(0).collect::<Vec<_>>(), vec![2]);
        let m = positives_mask(&[1, 2, 3]).unwrap();
        assert!(m.as_rows().iter().flatten().all(|&x| !x));
        let m = positives_mask(&["A", "A"]).unwrap();
        assert_eq!(m.as_rows(), vec![vec![false, true], vec![true, false]]);
        assert!(positives_mask(&["A"]).is_err());
    }

    #[test]
    fn two_same_label_rows_give_exact_zero() {
        let pos = positives_mask(&[0, 0]).unwrap();
        for (a, b, t) in [(0.3, -4.0, 0.1), (7.0, 2.5, 1.0), (-1.0, 1.0, 0.05)] {
            let l = supcon_loss_value(&sim(&[&[0.0, a], &[b, 0.0]]), &pos, &cfg(t)).unwrap();
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn hand_computed_three_row_case() {
        // 2·(−log(e/(e+1))) = 2·ln(1 + e⁻¹)
        let s = sim(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        let pos = positives_mask(&["A", "A", "B"]).unwrap();
        let l = supcon_loss_value(&s, &pos, &cfg(1.0)).unwrap();
        let want = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((l - want).abs() < 1e-12, "{l} vs {want}");
        assert!((l - 0.6265).abs() < 1e-4);
    }

    #[test]
    fn temperature_changes_loss() {
        let s = sim(&[&[0.0, 0.5, 0.2], &[0.5, 0.0, 0.9], &[0.2, 0.9, 0.0]]);
        let pos = positives_mask(&[0, 0, 1]).unwrap();
        let a = supcon_loss_value(&s, &pos, &cfg(0.1)).unwrap();
        let b = supcon_loss_value(&s, &pos, &cfg(1.0)).unwrap();
        assert!(a >= 0.0 && b >= 0.0);
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn bad_temperature_is_config_error() {
        let s = sim(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let pos = positives_mask(&[0, 0]).unwrap();
        for t in [0.0, -1.0] {
            assert!(matches!(supcon_loss_value(&s, &pos, &cfg(t)), Err(Error::Config(_))));
        }
    }

    #[test]
    fn no_positives_gives_zero() {
        let s = sim(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let pos = positives_mask(&[0, 1]).unwrap();
        let mut g = Eval::new();
        let v = g.constant(s.scores.clone());
        let out = supcon_loss(&mut g, v, &pos, &cfg(0.1)).unwrap();
        assert!(out.no_positives);
        assert_eq!(g.value(out.loss).item().unwrap(), 0.0);
    }

    #[test]
    fn loss_gradient_wrt_similarities() {
        let pos = positives_mask(&[0, 1, 0, 2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let point = Tensor::new(5, 5, data).unwrap();
        let err = grad_check(
            |t: &mut Tape<'_, f64>, v| Ok(supcon_loss(t, v, &pos, &cfg(0.5))?.loss),
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn ids(text: &str) -> TokenIds {
        tokenize(text, &TokenizerConfig { max_len: 4, ..Default::default() })
    }

    #[test]
    fn batch_layout() {
        let names = BTreeMap::from([(0, ids("alpha")), (1, ids("beta"))]);
        let spec = MaskSpec { rate: 0.1, d: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let texts = vec![(ids("x y"), 0), (ids("z"), 1)];
        let b: AugmentedBatch<f32> = build_batch(&texts, &names, 2, spec, &mut rng).unwrap();
        assert_eq!(b.len(), 8);
        assert_eq!(b.labels(), vec![0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(b.rows[2].origin, RowOrigin::ClassName);
        assert_eq!(b.rows[6].repeat, 1);
        assert_eq!(b.dropout_masks[0].shape(), [2, 4]);

        let one = vec![(ids("hello"), 0)];
        let b: AugmentedBatch<f32> = build_batch(&one, &names, 1, spec, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.rows[1].ids, names[&0]);
        let pos = positives_mask(&b.labels()).unwrap();
        assert!(pos.get(0, 1) && pos.get(1, 0));
    }

    #[test]
    fn batch_is_seed_deterministic() {
        let names = BTreeMap::from([(0, ids("alpha")), (1, ids("beta"))]);
        let texts = vec![(ids("x y"), 0), (ids("z w v"), 1), (ids("q"), 0)];
        let spec = MaskSpec { rate: 0.3, d: 6 };
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            build_batch::<f32, _>(&texts, &names, 4, spec, &mut rng).unwrap()
        };
        let (a, b) = (draw(), draw());
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.dropout_masks, b.dropout_masks);
        // repeats share ids but not masks
        assert_eq!(a.rows[0].ids, a.rows[6].ids);
        assert_ne!(a.dropout_masks[0], a.dropout_masks[6]);
    }

    #[test]
    fn missing_class_name_is_config_error() {
        let names = BTreeMap::from([(0, ids("alpha"))]);
        let texts = vec![(ids("x"), 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = build_batch::<f32, _>(&texts, &names, 1, MaskSpec { rate: 0.0, d: 2 }, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
