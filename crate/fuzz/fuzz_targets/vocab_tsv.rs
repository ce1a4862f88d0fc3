#![no_main]

use glotparse::treebank::VocabularySet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = VocabularySet::from_tsv(text) {
        let tsv = v.to_tsv();
        let back = VocabularySet::from_tsv(&tsv).expect("written vocabulary reloads");
        assert_eq!(back.to_tsv(), tsv);
    }
});
