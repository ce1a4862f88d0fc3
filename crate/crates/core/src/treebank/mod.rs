//! Treebank input: CoNLL-U files, vocabularies and batching.

mod batch;
mod conllu;
mod vocab;

pub use batch::{Batch, BatchStream};
pub use conllu::{
    load_conllu, load_conllu_with, parse_conllu, parse_conllu_with, to_conllu, write_sentence, LoadReport, Rejection, Sentence, Token, TreeCheck,
};
pub use vocab::{Category, Inventory, LanguageChars, VocabularySet, UNK, UNK_SYMBOL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreebankError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte {offset}")]
    Encoding { path: String, offset: usize },
    #[error("no training sentences")]
    EmptyCorpus,
    #[error("language {0} has no sentences")]
    EmptyLanguage(String),
    #[error("language {0} given twice")]
    DuplicateLanguage(String),
    #[error("unknown language {language:?}; known languages: {}", known.join(", "))]
    UnknownLanguage { language: String, known: Vec<String> },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("vocabulary file line {line}: {message}")]
    VocabFormat { line: usize, message: String },
}

pub type Result<T, E = TreebankError> = std::result::Result<T, E>;
