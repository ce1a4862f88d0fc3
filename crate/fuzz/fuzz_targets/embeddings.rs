#![no_main]

use glotparse::analysis::{format_char_embeddings, parse_char_embeddings, parse_pairs};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_pairs(text);
    if let Ok(table) = parse_char_embeddings(text) {
        let back = parse_char_embeddings(&format_char_embeddings(&table)).expect("written table reloads");
        assert_eq!(back, table);
    }
});
