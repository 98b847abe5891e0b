#![no_main]

use libfuzzer_sys::fuzz_target;
use spinlab::eigensolve::describe_factor;
use spinlab_cli::parse::parse_factor;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(f) = parse_factor(text) {
        assert_eq!(parse_factor(&describe_factor(&f)), Ok(f));
    }
});
