use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{accuracy, Model, ModelConfig, TrainingRecord};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::grammar::{read_corpus, Grammar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FIDAMCKP";
const VERSION: u32 = 1;

/// Corpus file the checkpoint was trained on, for perfection re-checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub path: String,
    pub sha256: String,
}

/// Trained parameters plus how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub training: TrainingRecord,
    pub corpus: Option<CorpusRef>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    training: TrainingRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corpus: Option<CorpusRef>,
    param: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn is_converged(&self) -> bool {
        self.training.converged && self.training.train_accuracy == 1.0 && self.training.test_accuracy == 1.0
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if !self.is_converged() {
            return Err(Error::NotConverged {
                train: self.training.train_accuracy,
                test: self.training.test_accuracy,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.config().clone(),
            training: self.training.clone(),
            corpus: self.corpus.clone(),
            param: self
                .model
                .config()
                .layout()
                .into_iter()
                .map(|(name, shape)| ParamEntry { name, shape })
                .collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Invalid(format!("checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for p in self.model.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Parses and verifies a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Integrity { path: path.to_path_buf(), msg };
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(bad("file too short".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch".into()));
        }
        if &body[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let text = body
            .get(20..20 + len)
            .ok_or_else(|| bad("truncated header".into()))
            .and_then(|b| std::str::from_utf8(b).map_err(|_| bad("header is not UTF-8".into())))?;
        let header: Header = toml::from_str(text).map_err(|e| bad(format!("header: {e}")))?;

        let layout = header.model.layout();
        if layout.len() != header.param.len()
            || layout.iter().zip(&header.param).any(|((n, s), p)| *n != p.name || *s != p.shape)
        {
            return Err(bad("parameter manifest does not match model config".into()));
        }
        let mut blobs = body[20 + len..].chunks_exact(8);
        let mut params = Vec::with_capacity(layout.len());
        for (_, shape) in &layout {
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let b = blobs.next().ok_or_else(|| bad("truncated parameters".into()))?;
                data.push(f64::from_le_bytes(b.try_into().unwrap()));
            }
            params.push(Tensor::new(shape.clone(), data)?);
        }
        if blobs.next().is_some() || !blobs.remainder().is_empty() {
            return Err(bad("trailing bytes after parameters".into()));
        }
        let model = Model::new(header.model, params).map_err(|e| bad(e.to_string()))?;
        Ok(Self { model, training: header.training, corpus: header.corpus })
    }

    /// Recomputes train and test accuracy on `corpus`; a converged
    /// checkpoint that no longer classifies every item correctly is an
    /// integrity failure.
    pub fn verify_perfection(&self, corpus: &crate::grammar::Corpus, path: &Path) -> Result<()> {
        if !self.training.converged {
            return Ok(());
        }
        let train = accuracy(&self.model, corpus.train_items()?)?;
        let test_items = corpus.test_items()?;
        let test = if test_items.is_empty() { 1.0 } else { accuracy(&self.model, test_items)? };
        if train != 1.0 || test != 1.0 {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                msg: format!("checkpoint marked converged but scores train {train:.4}, test {test:.4}"),
            });
        }
        Ok(())
    }
}

/// Hex sha256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, ck.to_bytes()?)?;
    Ok(())
}

/// Loads and verifies a checkpoint. When it references a corpus file that
/// exists, perfection is re-checked against it.
pub fn load_checkpoint(path: &Path, grammar: Option<&Grammar>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let ck = Checkpoint::from_bytes(&bytes, path)?;
    if let (Some(g), Some(r)) = (grammar, &ck.corpus) {
        let corpus_path = resolve(path, &r.path);
        if corpus_path.exists() {
            let digest = file_sha256(&corpus_path)?;
            if digest != r.sha256 {
                return Err(Error::Integrity {
                    path: corpus_path,
                    msg: "corpus changed since the checkpoint was trained".into(),
                });
            }
            let corpus = read_corpus(&corpus_path, g)?;
            ck.verify_perfection(&corpus, path)?;
        }
    }
    Ok(ck)
}

fn resolve(checkpoint: &Path, reference: &str) -> PathBuf {
    let p = PathBuf::from(reference);
    if p.is_absolute() {
        p
    } else {
        checkpoint.parent().unwrap_or(Path::new(".")).join(p)
    }
}
