#![no_main]

use glotparse::numcore::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = Checkpoint::from_bytes(data) {
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).expect("written checkpoint reloads");
        assert_eq!(back.to_bytes(), bytes);
    }
});
