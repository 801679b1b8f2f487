//! Straight-line reference implementations on plain `f64` vectors.
//!
//! Nothing here shares code with `fewfit-core`; each function is a literal
//! transcription of its formula with explicit loops, so tests can compare
//! the optimized graph code against it.

/// A text as a list of token vectors.
pub type Text = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Sum over query tokens of the best dot product against any doc token.
pub fn maxsim(query: &Text, doc: &Text) -> f64 {
    let mut total = 0.0;
    for q in query {
        let mut best = f64::NEG_INFINITY;
        for d in doc {
            let s = dot(q, d);
            if s > best {
                best = s;
            }
        }
        total += best;
    }
    total
}

/// Unit-length mean of the token vectors.
pub fn mean_pool(text: &Text) -> Vec<f64> {
    let d = text[0].len();
    let mut m = vec![0.0; d];
    for t in text {
        for k in 0..d {
            m[k] += t[k] / text.len() as f64;
        }
    }
    let norm = dot(&m, &m).sqrt();
    m.iter().map(|x| x / norm).collect()
}

pub fn cosine_of_means(a: &Text, b: &Text) -> f64 {
    dot(&mean_pool(a), &mean_pool(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Token,
    Cls,
}

/// All ordered pairs, row = query; zero diagonal.
pub fn sim_matrix(texts: &[Text], metric: Metric) -> Vec<Vec<f64>> {
    let n = texts.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i][j] = match metric {
                    Metric::Token => maxsim(&texts[i], &texts[j]),
                    Metric::Cls => cosine_of_means(&texts[i], &texts[j]),
                };
            }
        }
    }
    out
}

/// Batch contrastive loss, evaluated term by term:
///
/// `L = Σ_b −1/|P(b)| Σ_{p∈P(b)} log( exp(s_bp/τ) / Σ_{a≠b} exp(s_ba/τ) )`
///
/// with `P(b)` the other rows sharing `b`'s label. Anchors without
/// positives contribute nothing.
pub fn supcon_loss(sim: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for b in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != b && labels[p] == labels[b]).collect();
        if positives.is_empty() {
            continue;
        }
        let mut denom = 0.0;
        for a in 0..n {
            if a != b {
                denom += (sim[b][a] / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += ((sim[b][p] / tau).exp() / denom).ln();
        }
        total += -inner / positives.len() as f64;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxsim_hand_values() {
        let q = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = vec![vec![0.6, 0.8]];
        assert!((maxsim(&q, &d) - 1.4).abs() < 1e-12);
        assert!((maxsim(&d, &q) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn two_row_batch_is_zero() {
        let sim = vec![vec![0.0, 3.7], vec![-1.2, 0.0]];
        assert_eq!(supcon_loss(&sim, &[4, 4], 0.3), 0.0);
    }

    #[test]
    fn three_row_hand_value() {
        // labels [0,0,1], all off-diagonal sims 0 except s01 = s10 = 1, τ = 1:
        // anchors 0 and 1 each give -ln(e / (e + 1)); anchor 2 has no positive.
        let sim = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]];
        let want = 2.0 * (1.0f64 + (-1.0f64).exp()).ln();
        assert!((supcon_loss(&sim, &[0, 0, 1], 1.0) - want).abs() < 1e-12);
    }
}
