#![no_main]

use ixp_game::rat::Rat;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Untrusted text must come back as Ok or Err, never a panic.
        if let Ok(value) = text.parse::<Rat>() {
            // Whatever parses must round-trip through its display form.
            let shown = value.to_string();
            let again: Rat = shown.parse().expect("display form must reparse");
            assert_eq!(value, again, "{text:?} -> {shown} changed value");
        }
    }
});
