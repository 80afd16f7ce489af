//! Fuzz the full run-config parser: arbitrary bytes must produce either a
//! parsed config or a structured error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = contact_lab::config::parse_config(text);
    }
});
