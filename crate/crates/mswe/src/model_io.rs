//! Bundle serialization: vocabulary, optional topic model, embedding
//! model, and the training-config snapshot in one directory with a
//! checksummed manifest.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::lda::TopicModel;
use crate::trainer::{EmbeddingModel, TrainingConfig};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const MODEL_FILE: &str = "model.txt";
pub const TOPICS_FILE: &str = "topics.txt";
pub const CONFIG_FILE: &str = "config.json";

/// A trained model with everything needed to evaluate it.
#[derive(Debug)]
pub struct ModelBundle {
    pub vocab: Vocabulary,
    pub topics: Option<TopicModel>,
    pub model: EmbeddingModel,
    pub config: TrainingConfig,
}

impl ModelBundle {
    fn validate(&self) -> Result<()> {
        if self.model.vocab_size() != self.vocab.size() {
            return Err(Error::CorruptBundle(format!(
                "embedding rows ({}) do not match vocabulary size ({})",
                self.model.vocab_size(),
                self.vocab.size()
            )));
        }
        if self.model.dim() != self.config.dim {
            return Err(Error::CorruptBundle(format!(
                "embedding dim ({}) does not match config dim ({})",
                self.model.dim(),
                self.config.dim
            )));
        }
        if let Some(topics) = &self.topics {
            if topics.vocab_size() != self.vocab.size() {
                return Err(Error::CorruptBundle(format!(
                    "topic model vocabulary ({}) does not match vocabulary size ({})",
                    topics.vocab_size(),
                    self.vocab.size()
                )));
            }
            if self.model.topic_count() != 0 && self.model.topic_count() != topics.topics() {
                return Err(Error::CorruptBundle(format!(
                    "topic vector count ({}) does not match topic model T ({})",
                    self.model.topic_count(),
                    topics.topics()
                )));
            }
        } else if self.model.variant().uses_topics() {
            return Err(Error::CorruptBundle(format!(
                "variant {} requires a topic model section",
                self.model.variant()
            )));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write all components plus a manifest of per-file checksums.
pub fn save_bundle(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    bundle.vocab.save(&dir.join(VOCAB_FILE))?;
    bundle.model.save(&bundle.vocab, &dir.join(MODEL_FILE))?;
    if let Some(topics) = &bundle.topics {
        topics.save(&dir.join(TOPICS_FILE))?;
    }
    let config_json = serde_json::to_string_pretty(&bundle.config)
        .map_err(|e| Error::CorruptBundle(format!("config serialization failed: {e}")))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config_json.as_bytes()).map_err(|e| Error::io(&config_path, e))?;

    let mut names = vec![CONFIG_FILE, MODEL_FILE, VOCAB_FILE];
    if bundle.topics.is_some() {
        names.push(TOPICS_FILE);
    }
    names.sort_unstable();
    let mut manifest = String::new();
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!("{name}\t{}\n", sha256_hex(&bytes)));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest.as_bytes()).map_err(|e| Error::io(&manifest_path, e))
}

/// Load and validate a bundle; checksums and cross-references are checked.
pub fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest =
        fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for (lineno, line) in manifest.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (name, expected) = line.split_once('\t').ok_or_else(|| {
            Error::parse(&manifest_path, lineno + 1, "expected filename<TAB>sha256")
        })?;
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != expected {
            return Err(Error::CorruptBundle(format!(
                "checksum mismatch for {name}: manifest {expected}, file {actual}"
            )));
        }
    }

    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let (model, tokens) = EmbeddingModel::load(&dir.join(MODEL_FILE))?;
    if tokens.len() != vocab.size() {
        return Err(Error::CorruptBundle(format!(
            "model token column ({}) does not match vocabulary size ({})",
            tokens.len(),
            vocab.size()
        )));
    }
    for (i, token) in tokens.iter().enumerate() {
        if vocab.token(i as u32) != token {
            return Err(Error::CorruptBundle(format!(
                "token order mismatch at id {i}: vocabulary has {:?}, model has {token:?}",
                vocab.token(i as u32)
            )));
        }
    }
    let topics_path = dir.join(TOPICS_FILE);
    let topics = if topics_path.exists() {
        Some(TopicModel::load(&topics_path)?)
    } else {
        None
    };
    let config_path = dir.join(CONFIG_FILE);
    let config_json =
        fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config: TrainingConfig = serde_json::from_str(&config_json)
        .map_err(|e| Error::CorruptBundle(format!("bad config.json: {e}")))?;

    let bundle = ModelBundle {
        vocab,
        topics,
        model,
        config,
    };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_document, EncodedCorpus};
    use crate::lda::{train_online_lda, LdaConfig};
    use crate::trainer::{train, Variant};

    fn tiny_bundle(variant: Variant) -> ModelBundle {
        let docs: Vec<Vec<String>> = (0..20)
            .map(|i| (0..15).map(|j| format!("w{}", (i * 5 + j * 3) % 12)).collect())
            .collect();
        let vocab = Vocabulary::build(docs.clone(), 12).unwrap();
        let corpus = EncodedCorpus::new(
            docs.iter().map(|d| encode_document(d, &vocab)).collect(),
        );
        let topics = if variant.uses_topics() {
            let lda_config = LdaConfig {
                topics: 3,
                seed: 2,
                ..LdaConfig::default()
            };
            Some(train_online_lda(&corpus, vocab.size(), &lda_config).unwrap())
        } else {
            None
        };
        let config = TrainingConfig {
            dim: 6,
            epochs: 1,
            seed: 9,
            negatives: 3,
            variant,
            ..TrainingConfig::default()
        };
        let model = train(&corpus, &vocab, topics.as_ref(), &config).unwrap();
        ModelBundle {
            vocab,
            topics,
            model,
            config,
        }
    }

    fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        entries.sort();
        entries
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for variant in [Variant::SkipGram, Variant::Mswe2] {
            let bundle = tiny_bundle(variant);
            let dir = tempfile::tempdir().unwrap();
            let first = dir.path().join("first");
            save_bundle(&bundle, &first).unwrap();
            let loaded = load_bundle(&first).unwrap();
            let second = dir.path().join("second");
            save_bundle(&loaded, &second).unwrap();
            assert_eq!(read_dir_bytes(&first), read_dir_bytes(&second));
        }
    }

    #[test]
    fn skipgram_bundle_without_topics_is_valid() {
        let bundle = tiny_bundle(Variant::SkipGram);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        assert!(!dir.path().join(TOPICS_FILE).exists());
        let loaded = load_bundle(dir.path()).unwrap();
        assert!(loaded.topics.is_none());
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let bundle = tiny_bundle(Variant::SkipGram);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        let vocab_path = dir.path().join(VOCAB_FILE);
        let mut text = fs::read_to_string(&vocab_path).unwrap();
        text.push_str("extra\t1\n");
        fs::write(&vocab_path, text).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch"));
    }

    #[test]
    fn header_vocab_mismatch_is_named() {
        let bundle = tiny_bundle(Variant::SkipGram);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        // Drop the last vocabulary line (UNK), breaking the V cross-check,
        // and refresh the manifest so the checksum passes.
        let vocab_path = dir.path().join(VOCAB_FILE);
        let text = fs::read_to_string(&vocab_path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.truncate(lines.len() - 2);
        lines.push("UNK\t0");
        fs::write(&vocab_path, lines.join("\n") + "\n").unwrap();
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&manifest_path).unwrap();
        let fixed: String = manifest
            .lines()
            .map(|l| {
                if l.starts_with(VOCAB_FILE) {
                    format!(
                        "{VOCAB_FILE}\t{}\n",
                        sha256_hex(&fs::read(&vocab_path).unwrap())
                    )
                } else {
                    format!("{l}\n")
                }
            })
            .collect();
        fs::write(&manifest_path, fixed).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(
            err.to_string().contains("does not match vocabulary size"),
            "unexpected error: {err}"
        );
    }
}
