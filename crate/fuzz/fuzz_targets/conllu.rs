#![no_main]

use glotparse::treebank::{parse_conllu_with, to_conllu, TreeCheck};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for check in [TreeCheck::Require, TreeCheck::Skip] {
        let report = parse_conllu_with(text, "xx", check);
        // Whatever was accepted must survive a write and a second read.
        let again = parse_conllu_with(&to_conllu(&report.sentences), "xx", check);
        assert!(again.rejected.is_empty());
        assert_eq!(again.sentences, report.sentences);
    }
});
