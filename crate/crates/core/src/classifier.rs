//! Retrieval-style inference: encode every class name once, then assign each
//! query to the class whose name scores highest against it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::Dataset;
use crate::encoder::{encode_tokens, pool_cls, ClsRep, EncodeMode, TokenReps};
use crate::similarity::{sim_cls, sim_token, SimRep};
use crate::tokenizer::tokenize;
use crate::trainer::{ClassEntry, TrainedModel};
use crate::{Error, Result};

/// Eval-mode encodings of every class name, in lexicographic label order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassIndex {
    pub class_ids: Vec<String>,
    pub names: Vec<String>,
    pub token_reps: Vec<TokenReps<f32>>,
    pub cls_reps: Vec<ClsRep<f32>>,
}

impl ClassIndex {
    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.class_ids.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }
}

pub fn build_class_index(model: &TrainedModel, classes: &[ClassEntry]) -> Result<ClassIndex> {
    if classes.is_empty() {
        return Err(Error::Config("cannot build an index over zero classes".into()));
    }
    let mut sorted = classes.to_vec();
    sorted.sort_by(|a, b| a.label.cmp(&b.label));
    if let Some(w) = sorted.windows(2).find(|w| w[0].label == w[1].label) {
        return Err(Error::Config(format!("duplicate class label {:?}", w[0].label)));
    }
    let mut token_reps = Vec::with_capacity(sorted.len());
    let mut cls_reps = Vec::with_capacity(sorted.len());
    for c in &sorted {
        let ids = tokenize(&c.name, &model.config.tokenizer);
        let reps = encode_tokens(&model.params, &ids, EncodeMode::Eval)?;
        cls_reps.push(pool_cls(&reps)?);
        token_reps.push(reps);
    }
    Ok(ClassIndex {
        class_ids: sorted.iter().map(|c| c.label.clone()).collect(),
        names: sorted.into_iter().map(|c| c.name).collect(),
        token_reps,
        cls_reps,
    })
}

/// Index over the classes stored in the model.
pub fn model_class_index(model: &TrainedModel) -> Result<ClassIndex> {
    build_class_index(model, &model.classes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub score: f32,
    /// Best `k` classes by descending score, ties by class index.
    pub ranking: Vec<(String, f32)>,
}

/// Similarity of the query against every class, in index order.
pub fn class_scores(model: &TrainedModel, index: &ClassIndex, text: &str) -> Result<Vec<f32>> {
    let ids = tokenize(text, &model.config.tokenizer);
    let query = encode_tokens(&model.params, &ids, EncodeMode::Eval)?;
    Ok(match model.config.metric {
        SimRep::Token => index.token_reps.iter().map(|c| sim_token(&query, c)).collect(),
        SimRep::Cls => {
            let q = pool_cls(&query)?;
            index.cls_reps.iter().map(|c| sim_cls(&q, c)).collect()
        }
    })
}

fn rank(index: &ClassIndex, scores: &[f32], k: usize) -> Prediction {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort on descending score keeps ties in index order.
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let best = order[0];
    Prediction {
        label: index.class_ids[best].clone(),
        score: scores[best],
        ranking: order
            .iter()
            .take(k.max(1))
            .map(|&i| (index.class_ids[i].clone(), scores[i]))
            .collect(),
    }
}

pub fn predict(model: &TrainedModel, index: &ClassIndex, text: &str, k: usize) -> Result<Prediction> {
    predict_scored(model, index, text, k, |s| s)
}

/// [`predict`] with every class score passed through `hook` before ranking.
pub fn predict_scored(
    model: &TrainedModel,
    index: &ClassIndex,
    text: &str,
    k: usize,
    hook: impl Fn(f32) -> f32,
) -> Result<Prediction> {
    if index.is_empty() {
        return Err(Error::Config("empty class index".into()));
    }
    let scores: Vec<f32> = class_scores(model, index, text)?.into_iter().map(hook).collect();
    Ok(rank(index, &scores, k))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Only labels present in the test set.
    pub per_class: BTreeMap<String, ClassAccuracy>,
}

pub fn evaluate(model: &TrainedModel, index: &ClassIndex, test: &Dataset) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    let known: HashMap<&str, ()> = index.class_ids.iter().map(|c| (c.as_str(), ())).collect();
    if let Some(l) = test.classes().iter().find(|l| !known.contains_key(l.as_str())) {
        return Err(Error::Data(format!("test label {l:?} is not a known class")));
    }
    let predicted: Vec<String> = test
        .examples()
        .par_iter()
        .map(|ex| predict(model, index, &ex.text, 1).map(|p| p.label))
        .collect::<Result<_>>()?;

    let mut per_class: BTreeMap<String, ClassAccuracy> = BTreeMap::new();
    for (ex, pred) in test.examples().iter().zip(&predicted) {
        let entry = per_class.entry(ex.label.clone()).or_insert(ClassAccuracy {
            correct: 0,
            total: 0,
            accuracy: 0.0,
        });
        entry.total += 1;
        entry.correct += usize::from(*pred == ex.label);
    }
    for c in per_class.values_mut() {
        c.accuracy = c.correct as f64 / c.total as f64;
    }
    let correct = per_class.values().map(|c| c.correct).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        correct,
        total: test.len(),
        per_class,
    })
}
