//! Datasets, k-shot sampling, the multi-seed evaluation protocol, and the
//! binary model file.

mod kshot;
mod model_file;
mod protocol;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use kshot::{overlap_pairs, sample_kshot, shuffle_indices};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};
pub use protocol::{multi_seed_eval, summarize, Report, SeedOutcome, Summary};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub text: String,
    pub label: String,
}

impl Example {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: label.into(),
        }
    }
}

/// Labeled texts. `classes` is always the sorted set of labels present.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    examples: Vec<Example>,
    classes: Vec<String>,
    class_name_overrides: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        if let Some(i) = examples.iter().position(|e| e.label.is_empty()) {
            return Err(Error::Data(format!("example {i} has an empty label")));
        }
        let classes = examples
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            examples,
            classes,
            class_name_overrides: BTreeMap::new(),
        })
    }

    /// Display strings used as class names instead of the raw labels.
    pub fn with_class_names(mut self, overrides: BTreeMap<String, String>) -> Self {
        self.class_name_overrides = overrides;
        self
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_name_overrides(&self) -> &BTreeMap<String, String> {
        &self.class_name_overrides
    }

    pub fn class_name<'s>(&'s self, label: &'s str) -> &'s str {
        self.class_name_overrides
            .get(label)
            .map_or(label, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Row indices per label, in dataset order.
    pub fn rows_by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            out.entry(e.label.as_str()).or_default().push(i);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Guesses from the file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::Config(format!("unknown data format {other:?}"))),
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::Jsonl => "jsonl",
            DataFormat::Csv => "csv",
        })
    }
}

/// Which input fields hold the text and the label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnMap {
    pub text: String,
    pub label: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            text: "text".into(),
            label: "label".into(),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let examples = match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), path, columns)?,
        DataFormat::Csv => read_csv(file, columns)?,
    };
    Dataset::new(examples)
}

fn field_as_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn read_jsonl(reader: impl BufRead, path: &Path, columns: &ColumnMap) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            message: format!("invalid JSON: {e}"),
        })?;
        let get = |key: &str| {
            value
                .get(key)
                .and_then(field_as_string)
                .ok_or_else(|| Error::Schema {
                    line: line_no,
                    message: format!("missing or non-scalar field {key:?}"),
                })
        };
        let (text, label) = (get(&columns.text)?, get(&columns.label)?);
        if label.is_empty() {
            return Err(Error::Schema {
                line: line_no,
                message: "empty label".into(),
            });
        }
        out.push(Example { text, label });
    }
    Ok(out)
}

fn read_csv(file: File, columns: &ColumnMap) -> Result<Vec<Example>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (ti, li) = (find(&columns.text)?, find(&columns.label)?);

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Schema {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let text = record.get(ti).ok_or_else(|| Error::Schema {
            line,
            message: format!("missing {:?} value", columns.text),
        })?;
        let label = record.get(li).filter(|l| !l.is_empty()).ok_or_else(|| Error::Schema {
            line,
            message: format!("missing or empty {:?} value", columns.label),
        })?;
        out.push(Example::new(text, label));
    }
    Ok(out)
}

/// Writes `{"text", "label"}` objects, one per line.
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in dataset.examples() {
        let line = serde_json::to_string(ex).expect("strings serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
