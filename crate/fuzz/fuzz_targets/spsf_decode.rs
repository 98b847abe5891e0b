// cargo fuzz run spsf_decode corpus/spsf_decode

#![no_main]

use libfuzzer_sys::fuzz_target;
use spinlab::flatmodel::{decode_dump, encode_scalar, encode_spinor, FieldDump};

fuzz_target!(|data: &[u8]| {
    let Ok(dump) = decode_dump(data) else {
        return;
    };
    // Anything accepted must re-encode to the same bytes.
    let bytes = match &dump {
        FieldDump::Scalar(s) => encode_scalar(s),
        FieldDump::Spinor(s) => encode_spinor(s),
    };
    assert_eq!(bytes, data);
});
