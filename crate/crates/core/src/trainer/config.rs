use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::decoder::Decoder;
use crate::model::{ModelConfig, SharingSpec};
use crate::numcore::Precision;

/// Adadelta, gradient clipping and weight decay settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rho: f64,
    /// Adadelta epsilon, annealed geometrically from start to end over the
    /// epoch budget.
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Decay of the running mean of gradient norms.
    pub clip_decay: f64,
    /// Norms above this multiple of the running mean are scaled down.
    pub clip_multiplier: f64,
    /// Per-epoch multiplicative decay of weights; 1 disables it.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rho: 0.95,
            epsilon_start: 1e-8,
            epsilon_end: 1e-12,
            clip_decay: 0.99,
            clip_multiplier: 2.0,
            weight_decay: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sharing: SharingSpec,
    pub model: ModelConfig,
    /// Sentences per language in every batch.
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Loss multiplier per language, 1 when absent.
    pub language_weights: BTreeMap<String, f64>,
    /// Decoder used for validation.
    pub decoder: Decoder,
    pub include_punct: bool,
    /// Storage precision of saved parameters.
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sharing: SharingSpec::none(),
            model: ModelConfig::default(),
            batch_size: 8,
            epochs: 30,
            eval_every: 1,
            patience: 10,
            seed: 1,
            optimizer: OptimizerConfig::default(),
            language_weights: BTreeMap::new(),
            decoder: Decoder::Greedy,
            include_punct: true,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        let o = &self.optimizer;
        if !(o.rho > 0.0 && o.rho < 1.0) {
            return bad(format!("rho {} outside (0, 1)", o.rho));
        }
        if !(o.epsilon_start > 0.0 && o.epsilon_end > 0.0 && o.epsilon_end <= o.epsilon_start) {
            return bad("epsilon needs 0 < epsilon_end <= epsilon_start".into());
        }
        if !(0.0..1.0).contains(&o.clip_decay) || !(o.clip_multiplier > 0.0) {
            return bad("clip_decay must be in [0, 1) and clip_multiplier positive".into());
        }
        if !(o.weight_decay > 0.0 && o.weight_decay <= 1.0) {
            return bad(format!("weight_decay {} outside (0, 1]", o.weight_decay));
        }
        for (lang, w) in &self.language_weights {
            if !(w.is_finite() && *w > 0.0) {
                return bad(format!("weight of {lang} must be positive"));
            }
        }
        self.model.validate().map_err(|e| TrainError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let mut c = TrainConfig {
            sharing: SharingSpec::all(),
            model: ModelConfig::tiny(),
            ..Default::default()
        };
        c.language_weights.insert("pl".into(), 0.5);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = TrainConfig::from_toml("sharing = \"reader,parser\"\nepochs = 3\n[optimizer]\nrho = 0.9\n").unwrap();
        assert!(p.sharing.reader && p.sharing.parser && !p.sharing.tagger);
        assert_eq!((p.epochs, p.optimizer.rho, p.batch_size), (3, 0.9, 8));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "patience = 0",
            "batch_size = 0",
            "sharing = \"lexer\"",
            "unknown = 1",
            "[optimizer]\nweight_decay = 1.5",
            "[optimizer]\nepsilon_start = 1e-12\nepsilon_end = 1e-8",
            "[language_weights]\npl = -1.0",
            "[model]\ntagger_hidden = 0",
        ] {
            assert!(TrainConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
