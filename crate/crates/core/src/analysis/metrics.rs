use serde::Serialize;

use super::{AnalysisError, Parsed, Result};
use crate::treebank::Sentence;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentenceScore {
    pub tokens: usize,
    pub heads_correct: usize,
    pub labeled_correct: usize,
}

/// Unlabeled and labeled attachment scores in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub tokens: usize,
    pub sentences: Vec<SentenceScore>,
}

/// Scores predictions against gold sentences. With `include_punct` off,
/// tokens whose gold UPOS is `PUNCT` are skipped. A corpus with no scored
/// tokens gets 0 for both scores.
pub fn attachment_scores(predicted: &[Parsed], gold: &[Sentence], include_punct: bool) -> Result<EvalReport> {
    if predicted.len() != gold.len() {
        return Err(AnalysisError::Length {
            what: "sentence count".into(),
            expected: gold.len(),
            got: predicted.len(),
        });
    }
    let mut sentences = Vec::with_capacity(gold.len());
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.heads.len() != g.len() || p.labels.len() != g.len() {
            return Err(AnalysisError::Length {
                what: format!("tokens in sentence {}", i + 1),
                expected: g.len(),
                got: p.heads.len().min(p.labels.len()),
            });
        }
        let mut score = SentenceScore {
            tokens: 0,
            heads_correct: 0,
            labeled_correct: 0,
        };
        for (j, t) in g.tokens.iter().enumerate() {
            if !include_punct && t.upos == "PUNCT" {
                continue;
            }
            score.tokens += 1;
            if p.heads[j] == t.head {
                score.heads_correct += 1;
                if p.labels[j] == t.deprel {
                    score.labeled_correct += 1;
                }
            }
        }
        sentences.push(score);
    }
    let tokens: usize = sentences.iter().map(|s| s.tokens).sum();
    let pct = |n: usize| if tokens == 0 { 0.0 } else { 100.0 * n as f64 / tokens as f64 };
    Ok(EvalReport {
        uas: pct(sentences.iter().map(|s| s.heads_correct).sum()),
        las: pct(sentences.iter().map(|s| s.labeled_correct).sum()),
        tokens,
        sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::Token;
    use proptest::prelude::*;

    fn sentence(spec: &[(usize, &str, &str)]) -> Sentence {
        Sentence::new(
            "x",
            spec.iter().map(|&(h, l, u)| Token::new("w", u, h, l)).collect(),
        )
    }

    fn parsed(spec: &[(usize, &str)]) -> Parsed {
        Parsed {
            heads: spec.iter().map(|s| s.0).collect(),
            labels: spec.iter().map(|s| s.1.to_string()).collect(),
            upos: None,
        }
    }

    #[test]
    fn hand_counted_example() {
        let g = sentence(&[(2, "nsubj", "NOUN"), (0, "root", "VERB"), (2, "obj", "NOUN"), (2, "punct", "PUNCT")]);
        let p = parsed(&[(2, "nsubj"), (0, "obj"), (2, "obj"), (3, "punct")]);
        let r = attachment_scores(&[p.clone()], &[g.clone()], true).unwrap();
        assert_eq!((r.uas, r.las, r.tokens), (75.0, 50.0, 4));
        let r = attachment_scores(&[p], &[g], false).unwrap();
        assert_eq!(r.tokens, 3);
        assert!((r.uas - 100.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatches_are_errors() {
        let g = sentence(&[(0, "root", "X")]);
        assert!(attachment_scores(&[], &[g.clone()], true).is_err());
        assert!(attachment_scores(&[parsed(&[(0, "root"), (1, "x")])], &[g], true).is_err());
    }

    proptest! {
        #[test]
        fn las_never_exceeds_uas(heads in proptest::collection::vec((0usize..5, 0usize..5, 0usize..3, 0usize..3), 1..30)) {
            let labels = ["a", "b", "c"];
            let g = sentence(&heads.iter().map(|h| (h.0, labels[h.2], "X")).collect::<Vec<_>>());
            let p = parsed(&heads.iter().map(|h| (h.1, labels[h.3])).collect::<Vec<_>>());
            let r = attachment_scores(&[p], &[g], true).unwrap();
            prop_assert!(0.0 <= r.las && r.las <= r.uas && r.uas <= 100.0);
        }

        #[test]
        fn sentence_order_does_not_matter(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng, seq::SliceRandom};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pairs: Vec<(Parsed, Sentence)> = (0..5).map(|_| {
                let n = rng.random_range(1..6);
                let spec: Vec<(usize, usize)> = (0..n).map(|_| (rng.random_range(0..=n), rng.random_range(0..=n))).collect();
                (parsed(&spec.iter().map(|s| (s.1, "l")).collect::<Vec<_>>()),
                 sentence(&spec.iter().map(|s| (s.0, "l", "X")).collect::<Vec<_>>()))
            }).collect();
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let a = attachment_scores(&p, &g, true).unwrap();
            pairs.shuffle(&mut rng);
            let (p, g): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let b = attachment_scores(&p, &g, true).unwrap();
            prop_assert!((a.uas - b.uas).abs() < 1e-9 && (a.las - b.las).abs() < 1e-9);
        }
    }
}
