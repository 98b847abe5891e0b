#![no_main]

use libfuzzer_sys::fuzz_target;
use spinlab::curvature::{PolyChart, POLY_MAX_DEGREE, POLY_MAX_DIM, POLY_MIN_DIM};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(chart) = PolyChart::parse(text) {
        let n = spinlab::curvature::MetricChart::dim(&chart);
        assert!((POLY_MIN_DIM..=POLY_MAX_DIM).contains(&n));
        for t in chart.terms() {
            assert!(t.i < n && t.j < n && t.value.is_finite());
            assert_eq!(t.exponents.len(), n);
            assert!(t.exponents.iter().sum::<usize>() <= POLY_MAX_DEGREE);
        }
    }
});
