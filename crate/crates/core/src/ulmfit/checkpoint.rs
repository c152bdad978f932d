//! Single-file checkpoints: one line of JSON manifest, then the raw
//! little-endian `f64` payload of every tensor in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierConfig};
use super::lm::{new_lm, LanguageModel};
use super::{AwdLstmConfig, TrainingMetadata, UlmfitError};
use crate::neural::{BatchNormStats, ParamStore, Tensor};
use crate::tokenizer::UnigramVocab;

pub const CHECKPOINT_FORMAT: &str = "codemix-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LanguageModel,
    Classifier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: AwdLstmConfig,
    pub classifier: Option<ClassifierConfig>,
    pub vocab_fingerprint: String,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    kind: ModelKind,
    config: AwdLstmConfig,
    classifier: Option<ClassifierConfig>,
    vocab_fingerprint: String,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let len = t.len() * 8;
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f64".into(),
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            classifier: self.classifier.clone(),
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serialises");
        out.push(b'\n');
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, UlmfitError> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| UlmfitError::CorruptManifest("no manifest line".into()))?;
        let head: serde_json::Value =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| UlmfitError::CorruptManifest(e.to_string()))?;
        if head.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(UlmfitError::CorruptManifest("not a checkpoint file".into()));
        }
        let version = head
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| UlmfitError::CorruptManifest("missing version".into()))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(UlmfitError::VersionMismatch {
                found: version as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let m: Manifest = serde_json::from_value(head).map_err(|e| UlmfitError::CorruptManifest(e.to_string()))?;
        let payload = &bytes[nl + 1..];
        let mut tensors = Vec::with_capacity(m.tensors.len());
        for e in m.tensors {
            if e.dtype != "f64" {
                return Err(UlmfitError::CorruptManifest(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            if e.shape.iter().product::<usize>() * 8 != e.len {
                return Err(UlmfitError::CorruptManifest(format!("{}: shape and byte length disagree", e.name)));
            }
            let end = e.offset + e.len;
            if end > payload.len() {
                return Err(UlmfitError::TruncatedPayload {
                    expected: end,
                    found: payload.len(),
                });
            }
            let data = payload[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name, Tensor { shape: e.shape, data }));
        }
        Ok(Self {
            kind: m.kind,
            config: m.config,
            classifier: m.classifier,
            vocab_fingerprint: m.vocab_fingerprint,
            metadata: m.metadata,
            tensors,
        })
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<(), UlmfitError> {
        if self.kind != kind {
            return Err(UlmfitError::WrongModelKind {
                expected: kind,
                found: self.kind,
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), UlmfitError> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, UlmfitError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Rebuilds a store whose names and shapes must equal `expected` exactly.
fn restore(
    tensors: &[(String, Tensor)],
    expected: &[(String, Vec<usize>)],
) -> Result<BTreeMap<String, Tensor>, UlmfitError> {
    let mut by_name: BTreeMap<String, Tensor> = BTreeMap::new();
    for (n, t) in tensors {
        if by_name.insert(n.clone(), t.clone()).is_some() {
            return Err(UlmfitError::CorruptManifest(format!("duplicate tensor {n}")));
        }
    }
    if by_name.len() != expected.len() {
        return Err(UlmfitError::CorruptManifest(format!(
            "expected {} tensors, found {}",
            expected.len(),
            by_name.len()
        )));
    }
    for (n, shape) in expected {
        match by_name.get(n) {
            Some(t) if &t.shape == shape => {}
            Some(t) => {
                return Err(UlmfitError::CorruptManifest(format!(
                    "{n} has shape {:?}, config implies {shape:?}",
                    t.shape
                )))
            }
            None => return Err(UlmfitError::CorruptManifest(format!("missing tensor {n}"))),
        }
    }
    Ok(by_name)
}

fn shapes(store: &ParamStore) -> Vec<(String, Vec<usize>)> {
    store.iter().map(|(n, t)| (n.to_string(), t.shape.clone())).collect()
}

fn tensors(store: &ParamStore) -> Vec<(String, Tensor)> {
    store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

impl LanguageModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: ModelKind::LanguageModel,
            config: self.config.clone(),
            classifier: None,
            vocab_fingerprint: self.vocab_fingerprint.clone(),
            metadata: self.metadata.clone(),
            tensors: tensors(&self.params),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, UlmfitError> {
        ckpt.expect_kind(ModelKind::LanguageModel)?;
        let mut model = new_lm(ckpt.config.clone(), 0)?;
        let mut found = restore(&ckpt.tensors, &shapes(&model.params))?;
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            let name = model.params.name(id).to_string();
            *model.params.get_mut(id) = found.remove(&name).expect("checked by restore");
        }
        model.vocab_fingerprint = ckpt.vocab_fingerprint.clone();
        model.metadata = ckpt.metadata.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), UlmfitError> {
        save_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, UlmfitError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}

const BN_BUFFERS: [(&str, &str); 4] = [
    ("head.bn1.running_mean", "mean"),
    ("head.bn1.running_var", "var"),
    ("head.bn2.running_mean", "mean"),
    ("head.bn2.running_var", "var"),
];

impl Classifier {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ts = tensors(&self.params);
        for (i, (name, which)) in BN_BUFFERS.iter().enumerate() {
            let stats = &self.bn[i / 2];
            let v = if *which == "mean" { &stats.mean } else { &stats.var };
            ts.push((name.to_string(), Tensor { shape: vec![v.len()], data: v.clone() }));
        }
        Checkpoint {
            kind: ModelKind::Classifier,
            config: self.lm_config.clone(),
            classifier: Some(self.config.clone()),
            vocab_fingerprint: self.vocab.fingerprint(),
            metadata: self.metadata.clone(),
            tensors: ts,
        }
    }

    /// Restores a classifier; `vocab` must be the tokenizer it was trained with.
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: &UnigramVocab) -> Result<Self, UlmfitError> {
        ckpt.expect_kind(ModelKind::Classifier)?;
        let config = ckpt
            .classifier
            .clone()
            .ok_or_else(|| UlmfitError::CorruptManifest("classifier config missing".into()))?;
        config.validate()?;
        let found_fp = vocab.fingerprint();
        if ckpt.vocab_fingerprint != found_fp {
            return Err(UlmfitError::FingerprintMismatch {
                expected: ckpt.vocab_fingerprint.clone(),
                found: found_fp,
            });
        }
        let mut lm = new_lm(ckpt.config.clone(), 0)?;
        lm.vocab_fingerprint = found_fp;
        let mut cls = super::build_classifier(&lm, vocab, config, 0)?;
        let mut expected = shapes(&cls.params);
        let widths = [cls.bn[0].mean.len(), cls.bn[1].mean.len()];
        for (i, (name, _)) in BN_BUFFERS.iter().enumerate() {
            expected.push((name.to_string(), vec![widths[i / 2]]));
        }
        let mut found = restore(&ckpt.tensors, &expected)?;
        let ids: Vec<_> = cls.params.ids().collect();
        for id in ids {
            let name = cls.params.name(id).to_string();
            *cls.params.get_mut(id) = found.remove(&name).expect("checked by restore");
        }
        for (i, (name, which)) in BN_BUFFERS.iter().enumerate() {
            let data = found.remove(*name).expect("checked by restore").data;
            let stats: &mut BatchNormStats = &mut cls.bn[i / 2];
            if *which == "mean" {
                stats.mean = data;
            } else {
                stats.var = data;
            }
        }
        cls.metadata = ckpt.metadata.clone();
        Ok(cls)
    }
}
