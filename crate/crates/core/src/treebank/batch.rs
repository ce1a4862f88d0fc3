//! Multilingual mini-batches with an equal number of sentences per language.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::seed;

use super::{Result, TreebankError};

/// Sentence indices drawn for one batch, one list per language (in the
/// order the corpus sizes were given).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub per_language: Vec<Vec<usize>>,
}

struct Cursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cursor {
    fn take(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Endless stream of batches. Each language's corpus is visited in a
/// shuffled order that is reshuffled whenever it runs out, so smaller
/// corpora are cycled while larger ones are still being read.
pub struct BatchStream {
    per_language_size: usize,
    cursors: Vec<Cursor>,
    epoch_len: usize,
}

impl BatchStream {
    /// `languages` pairs each language name with its corpus size. The
    /// shuffling stream of a language depends only on `seed` and its name.
    pub fn new(languages: &[(&str, usize)], per_language_size: usize, seed: u64) -> Result<Self> {
        if per_language_size == 0 {
            return Err(TreebankError::InvalidBatchSize);
        }
        if let Some((lang, _)) = languages.iter().find(|(_, n)| *n == 0) {
            return Err(TreebankError::EmptyLanguage(lang.to_string()));
        }
        if languages.is_empty() {
            return Err(TreebankError::EmptyCorpus);
        }
        let cursors = languages
            .iter()
            .map(|(lang, n)| {
                let mut rng = seed::rng(seed, &format!("batches/{lang}"));
                let mut order: Vec<usize> = (0..*n).collect();
                order.shuffle(&mut rng);
                Cursor { order, pos: 0, rng }
            })
            .collect();
        let largest = languages.iter().map(|(_, n)| *n).max().unwrap_or(0);
        Ok(BatchStream {
            per_language_size,
            cursors,
            epoch_len: largest.div_ceil(per_language_size),
        })
    }

    /// Batches needed to see the largest corpus once.
    pub fn epoch_len(&self) -> usize {
        self.epoch_len
    }

    pub fn per_language_size(&self) -> usize {
        self.per_language_size
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let size = self.per_language_size;
        Some(Batch {
            per_language: self
                .cursors
                .iter_mut()
                .map(|c| (0..size).map(|_| c.take()).collect())
                .collect(),
        })
    }
}
