//! Attachment scores and the embedding and error analyses.

mod embeddings;
mod metrics;
mod pos_errors;

pub use embeddings::{
    char_analogy_accuracy, format_char_embeddings, nearest, nearest_words, parse_char_embeddings, parse_pairs, AnalogyOptions, AnalogyQuery,
    AnalogyReport, CharPair, Metric, Neighbor, PL_RU_PAIRS,
};
pub use metrics::{attachment_scores, EvalReport, SentenceScore};
pub use pos_errors::{pos_error_attribution, ConditionalRate, PosErrorTable};

use rayon::prelude::*;
use thiserror::Error;

use crate::decoder::{DecodeOptions, ParseTree, ScoreMatrix};
use crate::model::{ModelBundle, ModelError};
use crate::treebank::{Inventory, Sentence};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{what}: expected {expected}, got {got}")]
    Length {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("letter {0:?} has no embedding")]
    MissingLetter(char),
    #[error("{0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Heads and labels for one sentence, as produced by a parser or read from
/// a gold file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
    /// Predicted UPOS tags, when the parser has a tagger.
    pub upos: Option<Vec<String>>,
}

impl Parsed {
    pub fn from_tree(tree: &ParseTree, labels: &Inventory) -> Self {
        let names = match &tree.labels {
            Some(ids) => ids
                .iter()
                .map(|&l| labels.symbol(l).unwrap_or("_").to_string())
                .collect(),
            None => vec!["_".to_string(); tree.heads.len()],
        };
        Parsed {
            heads: tree.heads.clone(),
            labels: names,
            upos: None,
        }
    }

    /// The gold annotation of a sentence.
    pub fn gold(sentence: &Sentence) -> Self {
        Parsed {
            heads: sentence.heads(),
            labels: sentence.tokens.iter().map(|t| t.deprel.clone()).collect(),
            upos: Some(sentence.tokens.iter().map(|t| t.upos.clone()).collect()),
        }
    }

    /// `sentence` with its heads, labels (and UPOS, if predicted) replaced.
    pub fn apply_to(&self, sentence: &Sentence) -> Sentence {
        let mut out = sentence.clone();
        for (i, t) in out.tokens.iter_mut().enumerate() {
            t.head = self.heads[i];
            t.deprel = self.labels[i].clone();
            if let Some(u) = &self.upos {
                t.upos = u[i].clone();
            }
        }
        out
    }
}

/// Anything that can parse a gold-tokenized sentence.
pub trait SentenceParser: Sync {
    fn parse(&self, language: &str, sentence: &Sentence, opts: DecodeOptions) -> Result<(Parsed, Option<ScoreMatrix>)>;
}

impl SentenceParser for ModelBundle {
    fn parse(&self, language: &str, sentence: &Sentence, opts: DecodeOptions) -> Result<(Parsed, Option<ScoreMatrix>)> {
        let lang = self.language_index(language)?;
        let forms: Vec<&str> = sentence.forms().collect();
        let p = self.predict(lang, &forms, opts)?;
        let mut parsed = Parsed::from_tree(&p.tree, self.vocab().deprel());
        let upos = self.vocab().upos();
        parsed.upos = Some(
            p.pos[0]
                .iter()
                .map(|&id| upos.symbol(id).unwrap_or("_").to_string())
                .collect(),
        );
        Ok((parsed, Some(p.scores)))
    }
}

/// Parses every sentence (in parallel, order preserved).
pub fn parse_corpus<P: SentenceParser + ?Sized>(
    parser: &P,
    language: &str,
    sentences: &[Sentence],
    opts: DecodeOptions,
) -> Result<Vec<(Parsed, Option<ScoreMatrix>)>> {
    sentences
        .par_iter()
        .map(|s| parser.parse(language, s, opts))
        .collect()
}

/// Parses and scores a dev set.
pub fn evaluate<P: SentenceParser + ?Sized>(
    parser: &P,
    language: &str,
    sentences: &[Sentence],
    opts: DecodeOptions,
    include_punct: bool,
) -> Result<EvalReport> {
    let parsed: Vec<Parsed> = parse_corpus(parser, language, sentences, opts)?
        .into_iter()
        .map(|p| p.0)
        .collect();
    attachment_scores(&parsed, sentences, include_punct)
}
