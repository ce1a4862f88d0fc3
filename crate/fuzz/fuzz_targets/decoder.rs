#![no_main]

use glotparse::decoder::{decode_cle, decode_greedy, ScoreMatrix};
use glotparse::tree::is_arborescence;
use libfuzzer_sys::fuzz_target;

// First byte picks the sentence length; the rest are raw scores.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let n = usize::from(n % 24) + 1;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|w| {
            (0..=n)
                .map(|h| rest.get(w * (n + 1) + h).map_or(0.0, |&b| f64::from(b as i8) / 8.0))
                .collect()
        })
        .collect();
    let scores = ScoreMatrix::from_raw(rows).expect("finite rows");
    let greedy = decode_greedy(&scores);
    let cle = decode_cle(&scores, false);
    assert!(cle.is_tree && is_arborescence(&cle.heads));
    assert!(scores.tree_score(&cle.heads) <= scores.tree_score(&greedy.heads) + 1e-9);
    let single = decode_cle(&scores, true);
    assert_eq!(single.heads.iter().filter(|&&h| h == 0).count(), 1);
});
