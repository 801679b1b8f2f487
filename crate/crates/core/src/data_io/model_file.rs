//! Binary model file.
//!
//! ```text
//! "FFIT"                      4 bytes
//! version                     u32 LE
//! config length               u32 LE
//! config                      canonical JSON (sorted keys, compact), UTF-8
//! parameters                  f32 LE, tensors in EncoderParams::tensors order,
//!                             shapes implied by the config
//! class count                 u32 LE
//! per class: label, name      each u32 LE byte length + UTF-8
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::encoder::EncoderParams;
use crate::trainer::{ClassEntry, TrainConfig, TrainedModel};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FFIT";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes with sorted object keys and no whitespace.
fn canonical_json(config: &TrainConfig) -> Result<String> {
    // serde_json's Value map is ordered by key unless `preserve_order` is on.
    let value = serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| Error::Format(e.to_string()))
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &canonical_json(&model.config)?)?;

    let layout = EncoderParams::<f32>::layout(&model.config.tokenizer, &model.config.encoder);
    let tensors = model.params.tensors();
    if tensors.len() != layout.len() {
        return Err(Error::Format(format!(
            "config implies {} tensors, model has {}",
            layout.len(),
            tensors.len()
        )));
    }
    for (t, shape) in tensors.iter().zip(&layout) {
        if t.shape() != *shape {
            return Err(Error::Format(format!(
                "tensor shape {:?} disagrees with config shape {shape:?}",
                t.shape()
            )));
        }
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }

    put_u32(&mut out, model.classes.len())?;
    for c in &model.classes {
        put_str(&mut out, &c.label)?;
        put_str(&mut out, &c.name)?;
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated file: need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| Error::Format(format!("{what}: {e}")))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {:?}", MAGIC)));
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    let json = r.string("config")?;
    let config: TrainConfig =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;

    let layout = EncoderParams::<f32>::layout(&config.tokenizer, &config.encoder);
    let mut tensors = Vec::with_capacity(layout.len());
    for [rows, cols] in layout {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("parameter size overflow".into()))?;
        let raw = r.take(n, "parameters")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(rows, cols, data)?);
    }
    let params = EncoderParams::from_tensors(tensors)?;

    let count = r.u32("class count")?;
    let mut classes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let label = r.string("class label")?;
        let name = r.string("class name")?;
        classes.push(ClassEntry { label, name });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after class index",
            bytes.len() - r.pos
        )));
    }
    Ok(TrainedModel {
        config,
        params,
        classes,
        history: Vec::new(),
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, EncoderConfig};
    use crate::tokenizer::TokenizerConfig;

    fn tiny(use_attention: bool) -> TrainedModel {
        let config = TrainConfig {
            tokenizer: TokenizerConfig {
                vocab_size: 32,
                max_len: 5,
                lowercase: true,
            },
            encoder: EncoderConfig {
                d: 4,
                h: 6,
                use_attention,
                init_seed: 9,
                ..Default::default()
            },
            ..Default::default()
        };
        TrainedModel {
            params: init_params(&config.tokenizer, &config.encoder),
            config,
            classes: vec![
                ClassEntry {
                    label: "a".into(),
                    name: "alpha".into(),
                },
                ClassEntry {
                    label: "b".into(),
                    name: "bêta".into(),
                },
            ],
            history: Vec::new(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for attn in [false, true] {
            let m = tiny(attn);
            let bytes = model_to_bytes(&m).unwrap();
            let back = model_from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let m = tiny(false);
        let bytes = model_to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"FFIT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + n]).unwrap();
        assert!(!json.contains(' ') && !json.contains('\n'));
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(json)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let first = f32::from_le_bytes(bytes[12 + n..16 + n].try_into().unwrap());
        assert_eq!(first, m.params.embedding.data()[0]);
        let params: usize = EncoderParams::<f32>::layout(&m.config.tokenizer, &m.config.encoder)
            .iter()
            .map(|[r, c]| r * c)
            .sum();
        let tail = 4 + (4 + 1 + 4 + 5) + (4 + 1 + 4 + "bêta".len());
        assert_eq!(bytes.len(), 12 + n + 4 * params + tail);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = model_to_bytes(&tiny(false)).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));

        let mut newer = bytes.clone();
        newer[4..8].copy_from_slice(&2u32.to_le_bytes());
        match model_from_bytes(&newer) {
            Err(Error::Format(msg)) => assert!(msg.contains('2') && msg.contains('1'), "{msg}"),
            other => panic!("{other:?}"),
        }

        for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(model_from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn missing_file_is_io() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_model(dir.path().join("nope.ffit")), Err(Error::Io { .. })));
    }
}
