//! Few-shot, many-class text classification.
//!
//! Texts and class names are embedded into one space by a small token
//! encoder trained with a supervised batch contrastive loss. Each batch is
//! augmented with the class name of every text and repeated under
//! independent dropout masks. Queries are classified to the class whose
//! encoded name is most similar, using either token-level MaxSim or pooled
//! cosine similarity.

pub mod autodiff;
pub mod benchmark;
pub mod classifier;
pub mod contrastive;
pub mod data_io;
pub mod encoder;
mod error;
pub mod selfcheck;
pub mod similarity;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use classifier::{build_class_index, evaluate, model_class_index, predict, ClassIndex, Evaluation, Prediction};
pub use data_io::{load_dataset, load_model, save_model, ColumnMap, DataFormat, Dataset, Example};
pub use error::{Error, Result};
pub use similarity::SimRep;
pub use trainer::{train, TrainConfig, TrainedModel};
