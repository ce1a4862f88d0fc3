//! Tree decoding from per-word head distributions.

mod cle;

use serde::Serialize;
use thiserror::Error;

use crate::tree;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("cannot decode an empty sentence")]
    Empty,
    #[error("score row {row} has {got} entries, expected {expected}")]
    RowLength { row: usize, got: usize, expected: usize },
    #[error("score row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("score row {row} is not normalized (log-sum-exp {lse})")]
    NotNormalized { row: usize, lse: f64 },
    #[error("expected {expected} items, got {got}")]
    Length { expected: usize, got: usize },
}

pub type Result<T, E = DecodeError> = std::result::Result<T, E>;

/// Log-probabilities of heads for every word: row `w - 1` holds word `w`'s
/// distribution over heads `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    /// Wraps rows that are already log-normalized (checked to 1e-6).
    pub fn from_log_probs(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self::from_rows(rows)?;
        for w in 0..m.n {
            let lse = log_sum_exp(m.row(w + 1));
            if lse.abs() > 1e-6 {
                return Err(DecodeError::NotNormalized { row: w + 1, lse });
            }
        }
        Ok(m)
    }

    /// Log-softmax normalizes each row of raw scores.
    pub fn from_raw(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::from_rows(rows)?;
        let width = m.n + 1;
        for row in m.data.chunks_mut(width) {
            crate::numcore::log_softmax_in_place(row);
        }
        Ok(m)
    }

    fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(DecodeError::Empty);
        }
        let mut data = Vec::with_capacity(n * (n + 1));
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n + 1 {
                return Err(DecodeError::RowLength {
                    row: i + 1,
                    got: r.len(),
                    expected: n + 1,
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(DecodeError::NonFinite { row: i + 1 });
            }
            data.extend(r);
        }
        Ok(ScoreMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Distribution of word `w` (1-based) over heads `0..=n`.
    pub fn row(&self, w: usize) -> &[f64] {
        let width = self.n + 1;
        &self.data[(w - 1) * width..w * width]
    }

    pub fn get(&self, w: usize, h: usize) -> f64 {
        self.row(w)[h]
    }

    /// Sum of `scores[w][heads[w]]`.
    pub fn tree_score(&self, heads: &[usize]) -> f64 {
        heads.iter().enumerate().map(|(i, &h)| self.get(i + 1, h)).sum()
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Option<Vec<usize>>,
    pub is_tree: bool,
}

impl ParseTree {
    pub fn new(heads: Vec<usize>) -> Self {
        let is_tree = tree::is_arborescence(&heads);
        ParseTree {
            heads,
            labels: None,
            is_tree,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    #[default]
    Greedy,
    Cle,
}

impl std::str::FromStr for Decoder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "greedy" => Ok(Decoder::Greedy),
            "cle" => Ok(Decoder::Cle),
            _ => Err(format!("unknown decoder {s:?} (expected greedy or cle)")),
        }
    }
}

/// Decoder choice plus the single-root switch for CLE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    pub decoder: Decoder,
    pub single_root: bool,
}

impl DecodeOptions {
    pub fn decode(&self, scores: &ScoreMatrix) -> ParseTree {
        match self.decoder {
            Decoder::Greedy => decode_greedy(scores),
            Decoder::Cle => decode_cle(scores, self.single_root),
        }
    }
}

/// Best head per word; ties go to the smaller head. The result may contain
/// cycles.
pub fn decode_greedy(scores: &ScoreMatrix) -> ParseTree {
    let heads = (1..=scores.len())
        .map(|w| {
            let row = scores.row(w);
            let mut best = 0;
            for h in 1..row.len() {
                if row[h] > row[best] {
                    best = h;
                }
            }
            best
        })
        .collect();
    ParseTree::new(heads)
}

/// Highest-scoring arborescence rooted at 0, excluding self-arcs. With
/// `single_root` the root gets exactly one child.
pub fn decode_cle(scores: &ScoreMatrix, single_root: bool) -> ParseTree {
    let n = scores.len();
    let weights = |root_child: Option<usize>| {
        let mut w = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
        for d in 1..=n {
            for h in 0..=n {
                if h == d || (h == 0 && root_child.is_some_and(|c| c != d)) {
                    continue;
                }
                w[h][d] = scores.get(d, h);
            }
        }
        w
    };
    let solve = |root_child| {
        let mut heads = cle::max_arborescence(&weights(root_child));
        heads.remove(0);
        heads
    };

    let free = solve(None);
    if !single_root || free.iter().filter(|&&h| h == 0).count() == 1 {
        return ParseTree::new(free);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for c in 1..=n {
        let heads = solve(Some(c));
        let score = scores.tree_score(&heads);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, heads));
        }
    }
    ParseTree::new(best.expect("n >= 1").1)
}

/// Fills in `labels[w] = argmax label_dist(w, heads[w])`.
pub fn assign_labels<F>(tree: &mut ParseTree, mut label_dist: F)
where
    F: FnMut(usize, usize) -> Vec<f64>,
{
    let labels = tree
        .heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let dist = label_dist(i + 1, h);
            let mut best = 0;
            for l in 1..dist.len() {
                if dist[l] > dist[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    tree.labels = Some(labels);
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceComparison {
    pub greedy: Vec<usize>,
    pub cle: Vec<usize>,
    pub agree: bool,
    pub greedy_has_cycle: bool,
    pub greedy_score: f64,
    pub cle_score: f64,
    /// Heads correct under each decoder when gold heads were supplied.
    pub greedy_correct: Option<usize>,
    pub cle_correct: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecoderReport {
    pub sentences: Vec<SentenceComparison>,
    /// Fraction of sentences where both decoders return identical heads.
    pub agreement_rate: f64,
    /// Fraction of words with identical heads.
    pub token_agreement_rate: f64,
    /// Fraction of sentences where greedy output is not a tree.
    pub cycle_rate: f64,
    pub greedy_uas: Option<f64>,
    pub cle_uas: Option<f64>,
}

/// Decodes every matrix both ways and measures how the decoders differ.
/// `gold` adds per-decoder attachment accuracy.
pub fn compare_decoders(
    scores: &[ScoreMatrix],
    gold: Option<&[Vec<usize>]>,
    single_root: bool,
) -> Result<DecoderReport> {
    if scores.is_empty() {
        return Err(DecodeError::Empty);
    }
    if let Some(g) = gold {
        if g.len() != scores.len() {
            return Err(DecodeError::Length {
                expected: scores.len(),
                got: g.len(),
            });
        }
        for (s, heads) in scores.iter().zip(g) {
            if heads.len() != s.len() {
                return Err(DecodeError::Length {
                    expected: s.len(),
                    got: heads.len(),
                });
            }
        }
    }
    let mut sentences = Vec::with_capacity(scores.len());
    let (mut tokens, mut same_tokens) = (0usize, 0usize);
    for (i, s) in scores.iter().enumerate() {
        let g = decode_greedy(s);
        let c = decode_cle(s, single_root);
        let correct = |heads: &[usize]| {
            gold.map(|gold| heads.iter().zip(&gold[i]).filter(|(a, b)| a == b).count())
        };
        tokens += s.len();
        same_tokens += g.heads.iter().zip(&c.heads).filter(|(a, b)| a == b).count();
        sentences.push(SentenceComparison {
            agree: g.heads == c.heads,
            greedy_has_cycle: !g.is_tree,
            greedy_score: s.tree_score(&g.heads),
            cle_score: s.tree_score(&c.heads),
            greedy_correct: correct(&g.heads),
            cle_correct: correct(&c.heads),
            greedy: g.heads,
            cle: c.heads,
        });
    }
    let total = sentences.len() as f64;
    let uas = |pick: fn(&SentenceComparison) -> Option<usize>| {
        gold.map(|_| 100.0 * sentences.iter().filter_map(pick).sum::<usize>() as f64 / tokens as f64)
    };
    Ok(DecoderReport {
        agreement_rate: sentences.iter().filter(|s| s.agree).count() as f64 / total,
        token_agreement_rate: same_tokens as f64 / tokens as f64,
        cycle_rate: sentences.iter().filter(|s| s.greedy_has_cycle).count() as f64 / total,
        greedy_uas: uas(|s| s.greedy_correct),
        cle_uas: uas(|s| s.cle_correct),
        sentences,
    })
}
