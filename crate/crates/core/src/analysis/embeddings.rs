use std::collections::HashSet;
use std::str::FromStr;

use serde::Serialize;

use super::{AnalysisError, Result};
use crate::model::ModelBundle;

/// Polish–Russian letter correspondences with similar pronunciation.
pub const PL_RU_PAIRS: &str = include_str!("../../data/pl_ru_pairs.tsv");

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(format!("unknown metric {s:?} (expected cosine or euclidean)")),
        }
    }
}

impl Metric {
    /// Cosine distance treats a zero vector as orthogonal to everything.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }
}

pub type CharPair = (char, char);

/// Reads `source<TAB>target` lines; blank lines and `#` comments are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<CharPair>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| AnalysisError::Format {
            line: i + 1,
            message: m.to_string(),
        };
        let (a, b) = line.split_once('\t').ok_or_else(|| bad("expected two tab-separated letters"))?;
        let one = |s: &str| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(bad("each side must be a single character")),
            }
        };
        out.push((one(a)?, one(b)?));
    }
    Ok(out)
}

/// Reads character embeddings, one `char<TAB>v1 v2 ...` line each. All
/// vectors must have the same nonzero length and finite values.
pub fn parse_char_embeddings(text: &str) -> Result<Vec<(char, Vec<f64>)>> {
    let mut out: Vec<(char, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| AnalysisError::Format { line: i + 1, message: m };
        let (c, rest) = line.split_once('\t').ok_or_else(|| bad("expected a character, a tab and a vector".into()))?;
        let mut it = c.chars();
        let c = match (it.next(), it.next()) {
            (Some(c), None) => c,
            _ => return Err(bad(format!("{c:?} is not a single character"))),
        };
        let v = rest
            .split_whitespace()
            .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| bad("vector components must be finite numbers".into()))?;
        if v.is_empty() {
            return Err(bad("empty vector".into()));
        }
        if let Some(first) = out.first() {
            if first.1.len() != v.len() {
                return Err(bad(format!("vector has {} components, expected {}", v.len(), first.1.len())));
            }
        }
        if out.iter().any(|e| e.0 == c) {
            return Err(bad(format!("{c:?} listed twice")));
        }
        out.push((c, v));
    }
    Ok(out)
}

pub fn format_char_embeddings(table: &[(char, Vec<f64>)]) -> String {
    let mut s = String::new();
    for (c, v) in table {
        let comps: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        s.push_str(&format!("{c}\t{}\n", comps.join(" ")));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalogyOptions {
    pub metric: Metric,
    /// Query every ordered pair of pairs; otherwise only `i < j`.
    pub ordered: bool,
    /// Drop `r1` from the candidates of its own query.
    pub exclude_r1: bool,
}

impl Default for AnalogyOptions {
    fn default() -> Self {
        AnalogyOptions {
            metric: Metric::Cosine,
            ordered: true,
            exclude_r1: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalogyQuery {
    pub p1: char,
    pub r1: char,
    pub p2: char,
    pub expected: char,
    pub predicted: char,
    /// 1-based position of `expected` among the ranked candidates.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalogyReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub queries: Vec<AnalogyQuery>,
}

fn lookup<'a>(table: &'a [(char, Vec<f64>)], c: char) -> Result<&'a [f64]> {
    table
        .iter()
        .find(|e| e.0 == c)
        .map(|e| e.1.as_slice())
        .ok_or(AnalysisError::MissingLetter(c))
}

/// For each pair of letter pairs `(p1, r1)`, `(p2, r2)` the query
/// `C(p2) - C(p1) + C(r1)` is matched against every target letter; the
/// query is correct when the closest one is `r2`. Ties go to the earlier
/// candidate.
pub fn char_analogy_accuracy(
    source: &[(char, Vec<f64>)],
    target: &[(char, Vec<f64>)],
    pairs: &[CharPair],
    opts: AnalogyOptions,
) -> Result<AnalogyReport> {
    if pairs.len() < 2 {
        return Err(AnalysisError::Invalid("at least two letter pairs are needed".into()));
    }
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert(*p) {
            return Err(AnalysisError::Invalid(format!("pair {}-{} listed twice", p.0, p.1)));
        }
        lookup(source, p.0)?;
        lookup(target, p.1)?;
    }
    let dim = target[0].1.len();
    if source.iter().chain(target).any(|e| e.1.len() != dim) {
        return Err(AnalysisError::Invalid("embeddings differ in dimension".into()));
    }
    let mut queries = Vec::new();
    for (i, &(p1, r1)) in pairs.iter().enumerate() {
        for (j, &(p2, r2)) in pairs.iter().enumerate() {
            if i == j || (!opts.ordered && j < i) {
                continue;
            }
            let (cp1, cr1, cp2) = (lookup(source, p1)?, lookup(target, r1)?, lookup(source, p2)?);
            let q: Vec<f64> = cp2.iter().zip(cp1).zip(cr1).map(|((a, b), c)| a - b + c).collect();
            let mut ranked: Vec<(f64, usize)> = target
                .iter()
                .enumerate()
                .filter(|(_, (c, _))| !(opts.exclude_r1 && *c == r1))
                .map(|(k, (_, v))| (opts.metric.distance(&q, v), k))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if ranked.is_empty() {
                return Err(AnalysisError::Invalid(format!("no candidates left for the query on {r1}")));
            }
            let predicted = target[ranked[0].1].0;
            let rank = ranked
                .iter()
                .position(|&(_, k)| target[k].0 == r2)
                .map_or(0, |p| p + 1);
            queries.push(AnalogyQuery {
                p1,
                r1,
                p2,
                expected: r2,
                predicted,
                rank,
            });
        }
    }
    let correct = queries.iter().filter(|q| q.predicted == q.expected).count();
    Ok(AnalogyReport {
        total: queries.len(),
        correct,
        accuracy: 100.0 * correct as f64 / queries.len() as f64,
        queries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub word: String,
    pub distance: f64,
}

/// The `k` candidates closest to `query`, nearest first; ties keep
/// candidate order.
pub fn nearest(query: &[f64], candidates: &[(String, Vec<f64>)], k: usize, metric: Metric) -> Vec<Neighbor> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, (_, v))| (metric.distance(query, v), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(d, i)| Neighbor {
            word: candidates[i].0.clone(),
            distance: d,
        })
        .collect()
}

/// Embeds `query` with the reader of `source` and ranks the distinct
/// `target_words` embedded with the reader of `target`.
pub fn nearest_words(
    bundle: &ModelBundle,
    query: &str,
    source: &str,
    target: &str,
    target_words: &[String],
    k: usize,
    metric: Metric,
) -> Result<Vec<Neighbor>> {
    let mut uniq: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for w in target_words {
        if !w.is_empty() && seen.insert(w.as_str()) {
            uniq.push(w);
        }
    }
    if uniq.is_empty() {
        return Err(AnalysisError::Invalid("target vocabulary is empty".into()));
    }
    let q = bundle.read_word(bundle.language_index(source)?, query)?;
    let t = bundle.language_index(target)?;
    let mut candidates = Vec::with_capacity(uniq.len());
    for chunk in uniq.chunks(256) {
        let e = bundle.read_words_batch(t, chunk)?;
        for (r, w) in chunk.iter().enumerate() {
            candidates.push((w.to_string(), e.row_slice(r).to_vec()));
        }
    }
    Ok(nearest(&q, &candidates, k, metric))
}
