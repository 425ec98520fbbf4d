#![no_main]

use ixp_game::model::Instance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Arbitrary JSON must be accepted or rejected without panicking.
        if let Ok(inst) = Instance::parse_json(text) {
            // Accepted instances must survive a serialization round trip
            // and keep the same content hash.
            let again = Instance::parse_json(&inst.to_json_string())
                .expect("emitted form must reparse");
            assert_eq!(inst.content_hash(), again.content_hash());
        }
    }
});
