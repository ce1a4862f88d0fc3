use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Network dimensions and regularization. `Default` gives the full-size
/// parser; tests and small corpora use [`ModelConfig::tiny`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub char_embed_dim: usize,
    /// `(width, count)` per filter bank.
    pub filters: Vec<(usize, usize)>,
    pub reader_proj_dim: usize,
    pub reader_mlp_layers: usize,
    pub tagger_layers: usize,
    pub tagger_hidden: usize,
    pub scorer_hidden: usize,
    pub labeler_units: usize,
    pub labeler_pieces: usize,
    pub loss_weights: LossWeights,
    pub dropout: DropoutRates,
    pub reduction: LossReduction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub head: f64,
    pub label: f64,
    pub pos: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutRates {
    pub reader: f64,
    pub tagger: f64,
    pub labeler: f64,
}

/// How per-token losses are combined within one sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    #[default]
    Mean,
    Sum,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            char_embed_dim: 15,
            filters: (1..=6).map(|k| (k, 50 * k)).collect(),
            reader_proj_dim: 512,
            reader_mlp_layers: 3,
            tagger_layers: 2,
            tagger_hidden: 548,
            scorer_hidden: 384,
            labeler_units: 256,
            labeler_pieces: 2,
            loss_weights: LossWeights {
                head: 0.6,
                label: 0.4,
                pos: 1.0,
            },
            dropout: DropoutRates {
                reader: 0.2,
                tagger: 0.7,
                labeler: 0.5,
            },
            reduction: LossReduction::Mean,
        }
    }
}

impl ModelConfig {
    /// A few thousand parameters per language with the full layout.
    pub fn tiny() -> Self {
        ModelConfig {
            char_embed_dim: 8,
            filters: vec![(1, 8), (2, 8), (3, 8), (4, 8)],
            reader_proj_dim: 32,
            reader_mlp_layers: 1,
            tagger_layers: 2,
            tagger_hidden: 32,
            scorer_hidden: 32,
            labeler_units: 16,
            ..ModelConfig::default()
        }
    }

    pub fn total_filters(&self) -> usize {
        self.filters.iter().map(|&(_, c)| c).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        let dims = [
            ("char_embed_dim", self.char_embed_dim),
            ("reader_proj_dim", self.reader_proj_dim),
            ("tagger_layers", self.tagger_layers),
            ("tagger_hidden", self.tagger_hidden),
            ("scorer_hidden", self.scorer_hidden),
            ("labeler_units", self.labeler_units),
            ("labeler_pieces", self.labeler_pieces),
        ];
        for (name, v) in dims {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.filters.is_empty() {
            return bad("at least one filter bank is required".into());
        }
        let mut widths: Vec<usize> = self.filters.iter().map(|f| f.0).collect();
        widths.sort_unstable();
        widths.dedup();
        if widths.len() != self.filters.len() {
            return bad("filter widths must be distinct".into());
        }
        if self.filters.iter().any(|&(w, c)| w == 0 || c == 0) {
            return bad("filter widths and counts must be positive".into());
        }
        for (name, r) in [
            ("reader", self.dropout.reader),
            ("tagger", self.dropout.tagger),
            ("labeler", self.dropout.labeler),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} dropout {r} outside [0, 1)"));
            }
        }
        let w = self.loss_weights;
        if [w.head, w.label, w.pos].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("loss weights must be finite and nonnegative".into());
        }
        Ok(())
    }

    /// Width of the word embeddings fed to the tagger.
    pub fn embed_dim(&self) -> usize {
        self.reader_proj_dim
    }
}

/// The four subnetworks that can be shared across languages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subnet {
    Reader,
    Tagger,
    Pos,
    Parser,
}

impl Subnet {
    pub const ALL: [Subnet; 4] = [Subnet::Reader, Subnet::Tagger, Subnet::Pos, Subnet::Parser];

    pub fn name(self) -> &'static str {
        match self {
            Subnet::Reader => "reader",
            Subnet::Tagger => "tagger",
            Subnet::Pos => "pos",
            Subnet::Parser => "parser",
        }
    }
}

/// Which subnetworks are shared by all languages. Start- and end-of-word
/// embeddings stay private even with a shared reader.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SharingSpec {
    pub reader: bool,
    pub tagger: bool,
    pub pos: bool,
    pub parser: bool,
}

impl SharingSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        SharingSpec {
            reader: true,
            tagger: true,
            pos: true,
            parser: true,
        }
    }

    pub fn is_shared(&self, subnet: Subnet) -> bool {
        match subnet {
            Subnet::Reader => self.reader,
            Subnet::Tagger => self.tagger,
            Subnet::Pos => self.pos,
            Subnet::Parser => self.parser,
        }
    }

    pub fn any(&self) -> bool {
        Subnet::ALL.iter().any(|&s| self.is_shared(s))
    }
}

impl FromStr for SharingSpec {
    type Err = ModelError;

    /// `all`, `none`, or a comma-separated subset of
    /// `reader,tagger,pos,parser`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => return Ok(Self::all()),
            "none" | "" => return Ok(Self::none()),
            _ => {}
        }
        let mut spec = Self::none();
        for part in s.split(',').map(str::trim) {
            match part {
                "reader" => spec.reader = true,
                "tagger" => spec.tagger = true,
                "pos" => spec.pos = true,
                "parser" => spec.parser = true,
                other => {
                    return Err(ModelError::Config(format!(
                        "unknown subnetwork {other:?} (expected reader, tagger, pos, parser, all or none)"
                    )))
                }
            }
        }
        Ok(spec)
    }
}

impl TryFrom<String> for SharingSpec {
    type Error = ModelError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SharingSpec> for String {
    fn from(s: SharingSpec) -> String {
        s.to_string()
    }
}

impl fmt::Display for SharingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = Subnet::ALL
            .iter()
            .filter(|&&s| self.is_shared(s))
            .map(|s| s.name())
            .collect();
        match parts.len() {
            0 => f.write_str("none"),
            4 => f.write_str("all"),
            _ => f.write_str(&parts.join(",")),
        }
    }
}
