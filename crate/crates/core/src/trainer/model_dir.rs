//! A trained model on disk: `model.toml`, `vocab.tsv`, `params.ckpt` and a
//! human-readable `model-card.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, TrainConfig, TrainError};
use crate::model::{ModelBundle, ModelConfig, SharingSpec};
use crate::numcore::Checkpoint;
use crate::treebank::VocabularySet;

pub struct ModelFiles {
    pub config: PathBuf,
    pub vocab: PathBuf,
    pub params: PathBuf,
    pub card: PathBuf,
}

impl ModelFiles {
    pub fn new(dir: &Path) -> Self {
        ModelFiles {
            config: dir.join("model.toml"),
            vocab: dir.join("vocab.tsv"),
            params: dir.join("params.ckpt"),
            card: dir.join("model-card.txt"),
        }
    }
}

/// Everything needed to rebuild the networks before loading weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedModel {
    pub sharing: SharingSpec,
    pub seed: u64,
    pub model: ModelConfig,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn hash(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn save_model(dir: &Path, bundle: &ModelBundle, config: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = ModelFiles::new(dir);
    let saved = SavedModel {
        sharing: bundle.sharing(),
        seed: config.seed,
        model: bundle.config().clone(),
    };
    let text = toml::to_string(&saved).expect("model description serializes");
    let ckpt = Checkpoint::from_store(bundle.store(), config.precision, &hash(&text));
    let tmp = dir.join("params.ckpt.tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &files.params).map_err(io_err(&files.params))?;
    fs::write(&files.config, text).map_err(io_err(&files.config))?;
    fs::write(&files.vocab, bundle.vocab().to_tsv()).map_err(io_err(&files.vocab))?;
    fs::write(&files.card, bundle.model_card()).map_err(io_err(&files.card))?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ModelBundle> {
    let files = ModelFiles::new(dir);
    let text = fs::read_to_string(&files.config).map_err(io_err(&files.config))?;
    let saved: SavedModel = toml::from_str(&text).map_err(|e| TrainError::Format {
        path: files.config.clone(),
        message: e.to_string(),
    })?;
    let vocab_text = fs::read_to_string(&files.vocab).map_err(io_err(&files.vocab))?;
    let vocab = VocabularySet::from_tsv(&vocab_text)?;
    let bytes = fs::read(&files.params).map_err(io_err(&files.params))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if ckpt.config_hash != hash(&text) {
        return Err(TrainError::Format {
            path: files.params,
            message: "parameters were saved with a different model.toml".into(),
        });
    }
    let mut bundle = ModelBundle::new(saved.model, saved.sharing, vocab, saved.seed)?;
    ckpt.apply_to(bundle.store_mut())?;
    Ok(bundle)
}
