#![no_main]

use glotparse::trainer::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = TrainConfig::from_toml(text) {
        let back = TrainConfig::from_toml(&c.to_toml()).expect("written config reloads");
        assert_eq!(back, c);
    }
});
