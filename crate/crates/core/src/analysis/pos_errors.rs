use serde::Serialize;

use super::{parse_corpus, AnalysisError, Result, SentenceParser};
use crate::decoder::DecodeOptions;
use crate::treebank::Sentence;

/// Joint token counts indexed `[pos_ok][head_ok][label_ok]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosErrorTable {
    pub counts: [[[usize; 2]; 2]; 2],
    pub tokens: usize,
    pub rates: Vec<ConditionalRate>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalRate {
    pub name: String,
    pub numerator: usize,
    pub denominator: usize,
    /// `None` when the denominator is zero.
    pub rate: Option<f64>,
}

impl PosErrorTable {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (bool, bool, bool)>) -> Self {
        let mut counts = [[[0usize; 2]; 2]; 2];
        for (p, h, l) in outcomes {
            counts[p as usize][h as usize][l as usize] += 1;
        }
        let sum = |f: &dyn Fn(usize, usize, usize) -> bool| {
            let mut s = 0;
            for p in 0..2 {
                for h in 0..2 {
                    for l in 0..2 {
                        if f(p, h, l) {
                            s += counts[p][h][l];
                        }
                    }
                }
            }
            s
        };
        let tokens = sum(&|_, _, _| true);
        let rate = |name: &str, num: usize, den: usize| ConditionalRate {
            name: name.to_string(),
            numerator: num,
            denominator: den,
            rate: (den > 0).then(|| num as f64 / den as f64),
        };
        let pos_wrong = sum(&|p, _, _| p == 0);
        let pos_right = tokens - pos_wrong;
        let rates = vec![
            rate("head wrong | pos wrong", sum(&|p, h, _| p == 0 && h == 0), pos_wrong),
            rate("head wrong | pos right", sum(&|p, h, _| p == 1 && h == 0), pos_right),
            rate("label wrong | pos wrong", sum(&|p, _, l| p == 0 && l == 0), pos_wrong),
            rate("label wrong | pos right", sum(&|p, _, l| p == 1 && l == 0), pos_right),
            rate("head or label wrong | pos wrong", sum(&|p, h, l| p == 0 && (h == 0 || l == 0)), pos_wrong),
            rate("head or label wrong | pos right", sum(&|p, h, l| p == 1 && (h == 0 || l == 0)), pos_right),
        ];
        PosErrorTable { counts, tokens, rates }
    }
}

/// Cross-tabulates, per token, whether the predicted UPOS, head and label
/// match the gold annotation. The label is judged on its own, regardless of
/// the head.
pub fn pos_error_attribution<P: SentenceParser + ?Sized>(
    parser: &P,
    language: &str,
    corpus: &[Sentence],
    opts: DecodeOptions,
) -> Result<PosErrorTable> {
    let parsed = parse_corpus(parser, language, corpus, opts)?;
    let mut outcomes = Vec::new();
    for (s, (p, _)) in corpus.iter().zip(&parsed) {
        let upos = p
            .upos
            .as_ref()
            .ok_or_else(|| AnalysisError::Invalid("parser does not predict POS tags".into()))?;
        for (i, t) in s.tokens.iter().enumerate() {
            outcomes.push((upos[i] == t.upos, p.heads[i] == t.head, p.labels[i] == t.deprel));
        }
    }
    Ok(PosErrorTable::from_outcomes(outcomes))
}
