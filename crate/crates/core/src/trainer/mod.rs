//! Single- and multi-language training with early stopping.

mod config;
mod model_dir;

pub use config::{OptimizerConfig, TrainConfig};
pub use model_dir::{load_model, save_model, ModelFiles, SavedModel};

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, EvalReport};
use crate::decoder::DecodeOptions;
use crate::model::{LossParts, ModelBundle, ModelConfig, ModelError, SharingSpec};
use crate::numcore::{
    adadelta_step, clip_gradients, weight_decay, AdadeltaState, Checkpoint, ClipState,
    EpsilonSchedule, NumError, ParamId, Tensor,
};
use crate::seed;
use crate::treebank::{BatchStream, Sentence, TreebankError, VocabularySet};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("training config: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: Box<TrainError>,
        /// Parameters from before the failed step.
        last_good: Box<Checkpoint>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Training and development sentences of one language.
#[derive(Clone, Debug)]
pub struct LanguageData {
    pub language: String,
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
}

impl LanguageData {
    pub fn new(language: &str, train: Vec<Sentence>, dev: Vec<Sentence>) -> Self {
        LanguageData {
            language: language.to_string(),
            train,
            dev,
        }
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub language: String,
    #[serde(rename = "UAS")]
    pub uas: f64,
    #[serde(rename = "LAS")]
    pub las: f64,
    #[serde(rename = "L_h")]
    pub loss_head: f64,
    #[serde(rename = "L_l")]
    pub loss_label: f64,
    #[serde(rename = "L_t")]
    pub loss_pos: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub evaluations: usize,
    /// Best main-language dev UAS so far.
    pub best_uas: Option<f64>,
    pub best_epoch: usize,
    pub since_improvement: usize,
    pub best_checkpoint: Option<PathBuf>,
    pub log: Vec<MetricRecord>,
}

pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub state: TrainState,
}

/// Builds the per-language networks, aliasing the shared subnetworks.
pub fn instantiate_sharing(
    spec: SharingSpec,
    config: ModelConfig,
    vocab: VocabularySet,
    seed: u64,
) -> Result<ModelBundle> {
    Ok(ModelBundle::new(config, spec, vocab, seed)?)
}

/// Per-language UAS/LAS with dropout off.
pub fn evaluate_checkpoint(
    bundle: &ModelBundle,
    dev: &[(&str, &[Sentence])],
    opts: DecodeOptions,
    include_punct: bool,
) -> Result<Vec<EvalReport>> {
    dev.iter()
        .map(|(lang, sentences)| {
            if sentences.is_empty() {
                return Err(TrainError::Config(format!("dev set for {lang} is empty")));
            }
            Ok(analysis::evaluate(bundle, lang, sentences, opts, include_punct)?)
        })
        .collect()
}

pub struct Trainer {
    config: TrainConfig,
    bundle: ModelBundle,
    data: Vec<LanguageData>,
    lang_index: Vec<usize>,
    weights: Vec<f64>,
    all_ids: Vec<ParamId>,
    clip_groups: Vec<(Vec<ParamId>, ClipState)>,
    adadelta: AdadeltaState,
    schedule: EpsilonSchedule,
    stream: BatchStream,
    state: TrainState,
    best: Option<Vec<Tensor>>,
    frozen: bool,
    output: Option<PathBuf>,
}

impl Trainer {
    /// Builds the vocabulary from the training sets; the first language is
    /// the main one.
    pub fn new(config: TrainConfig, data: Vec<LanguageData>) -> Result<Self> {
        let corpora: Vec<(String, Vec<Sentence>)> =
            data.iter().map(|d| (d.language.clone(), d.train.clone())).collect();
        let vocab = VocabularySet::build(&corpora)?;
        Self::with_vocab(config, data, vocab)
    }

    /// Uses an existing vocabulary, which may cover more languages than are
    /// trained.
    pub fn with_vocab(config: TrainConfig, data: Vec<LanguageData>, vocab: VocabularySet) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(TrainError::Config("no training languages".into()));
        }
        let bundle = instantiate_sharing(config.sharing, config.model.clone(), vocab, config.seed)?;
        let lang_index = data
            .iter()
            .map(|d| bundle.language_index(&d.language))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, d) in data.iter().enumerate() {
            if data[..i].iter().any(|e| e.language == d.language) {
                return Err(TreebankError::DuplicateLanguage(d.language.clone()).into());
            }
        }
        let weights = data
            .iter()
            .map(|d| config.language_weights.get(&d.language).copied().unwrap_or(1.0))
            .collect();
        let sizes: Vec<(&str, usize)> = data.iter().map(|d| (d.language.as_str(), d.train.len())).collect();
        let stream = BatchStream::new(&sizes, config.batch_size, config.seed)?;
        let all_ids: Vec<ParamId> = bundle.store().iter().map(|(id, _)| id).collect();
        let opt = &config.optimizer;
        let clip_groups = bundle
            .language_groups()
            .into_iter()
            .map(|group| {
                let mut ids: Vec<ParamId> = group.iter().flat_map(|&l| bundle.language_params(l)).collect();
                ids.sort();
                ids.dedup();
                Ok((ids, ClipState::new(opt.clip_decay, opt.clip_multiplier)?))
            })
            .collect::<Result<_>>()?;
        let schedule = EpsilonSchedule::new(opt.epsilon_start, opt.epsilon_end, config.epochs)?;
        let adadelta = AdadeltaState::new(opt.rho, schedule.at(0))?;
        Ok(Trainer {
            config,
            bundle,
            data,
            lang_index,
            weights,
            all_ids,
            clip_groups,
            adadelta,
            schedule,
            stream,
            state: TrainState::default(),
            best: None,
            frozen: false,
            output: None,
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn bundle_mut(&mut self) -> &mut ModelBundle {
        &mut self.bundle
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Frozen trainers compute losses but never change the parameters.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Directory where the model is saved whenever validation improves.
    pub fn set_output(&mut self, dir: impl Into<PathBuf>) {
        self.output = Some(dir.into());
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(self.bundle.store(), self.config.precision, "")
    }

    /// One pass over the epoch's batches; returns the mean training loss
    /// per sentence for every language.
    pub fn run_epoch(&mut self) -> Result<Vec<LossParts>> {
        let epoch = self.state.epoch + 1;
        self.adadelta.epsilon = self.schedule.at(epoch - 1);
        let mut sums = vec![LossParts::default(); self.data.len()];
        let mut counts = vec![0usize; self.data.len()];
        for b in 0..self.stream.epoch_len() {
            let batch = self.stream.next().expect("batch stream is endless");
            // A failed step leaves the parameters untouched.
            if let Err(e) = self.step(epoch, b, &batch.per_language, &mut sums, &mut counts) {
                return Err(TrainError::Diverged {
                    epoch,
                    source: Box::new(e),
                    last_good: Box::new(self.checkpoint()),
                });
            }
        }
        if !self.frozen {
            weight_decay(self.bundle.store_mut(), self.config.optimizer.weight_decay)?;
        }
        self.state.epoch = epoch;
        Ok(sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| s.scaled(1.0 / n.max(1) as f64))
            .collect())
    }

    fn step(
        &mut self,
        epoch: usize,
        b: usize,
        per_language: &[Vec<usize>],
        sums: &mut [LossParts],
        counts: &mut [usize],
    ) -> Result<()> {
        let items: Vec<(usize, usize, usize)> = per_language
            .iter()
            .enumerate()
            .flat_map(|(d, idx)| idx.iter().enumerate().map(move |(slot, &s)| (d, slot, s)))
            .collect();
        let seed = self.config.seed;
        let (bundle, data, lang_index) = (&self.bundle, &self.data, &self.lang_index);
        let results: Vec<_> = items
            .par_iter()
            .map(|&(d, slot, s)| {
                let lang = &data[d].language;
                let mut rng = seed::rng(seed, &format!("dropout/{lang}/{epoch}/{b}/{slot}"));
                bundle.loss_and_gradients(lang_index[d], &data[d].train[s], Some(&mut rng))
            })
            .collect();
        let store = self.bundle.store_mut();
        store.zero_grad();
        for (&(d, _, _), r) in items.iter().zip(results) {
            let (parts, grads) = r?;
            store.accumulate_scaled(&grads, self.weights[d] / per_language[d].len() as f64);
            sums[d] = sums[d].plus(&parts);
            counts[d] += 1;
        }
        if self.frozen {
            return Ok(());
        }
        for (ids, clip) in &mut self.clip_groups {
            clip_gradients(store, ids, clip);
        }
        adadelta_step(store, &self.all_ids, &mut self.adadelta)?;
        Ok(())
    }

    /// Dev reports per language. A language without dev sentences is
    /// scored on its training set.
    pub fn evaluate(&self) -> Result<Vec<EvalReport>> {
        let opts = DecodeOptions {
            decoder: self.config.decoder,
            single_root: false,
        };
        let sets: Vec<(&str, &[Sentence])> = self
            .data
            .iter()
            .map(|d| {
                let s = if d.dev.is_empty() { &d.train } else { &d.dev };
                (d.language.as_str(), s.as_slice())
            })
            .collect();
        evaluate_checkpoint(&self.bundle, &sets, opts, self.config.include_punct)
    }

    /// Trains until the epoch budget is spent or the main language stops
    /// improving, then restores the best evaluated parameters.
    pub fn train(mut self) -> Result<TrainOutcome> {
        for d in &self.data {
            if d.dev.is_empty() {
                warn!("{}: no dev set, validating on training data", d.language);
            }
        }
        while self.state.epoch < self.config.epochs {
            let losses = self.run_epoch()?;
            let epoch = self.state.epoch;
            if epoch % self.config.eval_every != 0 && epoch != self.config.epochs {
                continue;
            }
            if self.record_evaluation(&losses)? {
                break;
            }
        }
        if let Some(best) = &self.best {
            self.bundle.store_mut().restore(best)?;
        }
        Ok(TrainOutcome {
            bundle: self.bundle,
            state: self.state,
        })
    }

    /// Evaluates, logs, and updates the early-stopping state. Returns true
    /// when patience has run out.
    pub fn record_evaluation(&mut self, losses: &[LossParts]) -> Result<bool> {
        let reports = self.evaluate()?;
        let epoch = self.state.epoch;
        for ((d, r), l) in self.data.iter().zip(&reports).zip(losses) {
            info!(
                "epoch {epoch} {}: UAS {:.2} LAS {:.2} loss {:.4}",
                d.language, r.uas, r.las, l.total
            );
            self.state.log.push(MetricRecord {
                epoch,
                language: d.language.clone(),
                uas: r.uas,
                las: r.las,
                loss_head: l.head,
                loss_label: l.label,
                loss_pos: l.pos,
            });
        }
        self.state.evaluations += 1;
        let uas = reports[0].uas;
        if self.state.best_uas.is_none_or(|b| uas > b) {
            self.state.best_uas = Some(uas);
            self.state.best_epoch = epoch;
            self.state.since_improvement = 0;
            self.best = Some(self.bundle.store().snapshot());
            if let Some(dir) = &self.output {
                save_model(dir, &self.bundle, &self.config)?;
                self.state.best_checkpoint = Some(ModelFiles::new(dir).params);
            }
        } else {
            self.state.since_improvement += 1;
        }
        Ok(self.state.since_improvement >= self.config.patience)
    }
}

/// Writes the metric log as one JSON object per line.
pub fn write_metric_log(path: &Path, log: &[MetricRecord]) -> Result<()> {
    let mut text = String::new();
    for r in log {
        text.push_str(&serde_json::to_string(r).expect("metric records serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests;
