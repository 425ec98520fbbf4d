#![no_main]

use ixp_game::model::Assignment;
use ixp_game::multi::MultiAssignment;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(data) else {
        return;
    };
    let n = value.as_array().map_or(0, Vec::len);
    for m in [0, 1, 3, 12] {
        // Decoding untrusted strategy arrays must never panic, and
        // anything accepted must round-trip through its JSON form.
        if let Ok(single) = Assignment::from_json_value(&value, n, m) {
            let back = Assignment::from_json_value(&single.to_json_value(), n, m)
                .expect("emitted form must decode");
            assert_eq!(single, back);
        }
        if let Ok(multi) = MultiAssignment::from_json_value(&value, m) {
            let back = MultiAssignment::from_json_value(&multi.to_json_value(), m)
                .expect("emitted form must decode");
            assert_eq!(multi, back);
        }
    }
});
