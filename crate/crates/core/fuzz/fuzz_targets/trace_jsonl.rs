#![no_main]

use bluetrail::trace::TraceBundle;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(bundle) = TraceBundle::parse_jsonl(text) {
        assert_eq!(TraceBundle::parse_jsonl(&bundle.to_jsonl()).unwrap(), bundle);
    }
});
