#![no_main]

use libfuzzer_sys::fuzz_target;
use spinlab_cli::parse::{parse_list, parse_spin};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = parse_spin(text) {
        assert_eq!(parse_spin(&s.to_string()), Ok(s));
    }
    if let Ok(v) = parse_list(text) {
        assert!(!v.is_empty() && v.iter().all(|x| x.is_finite()));
    }
});
