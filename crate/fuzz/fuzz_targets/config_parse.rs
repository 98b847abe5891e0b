#![no_main]

use libfuzzer_sys::fuzz_target;
use spinlab_cli::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(map) = parse_config(text) else {
        return;
    };
    let again: String = map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    assert_eq!(parse_config(&again).as_ref(), Ok(&map));
});
