#![no_main]

use bluetrail::csi::TraceStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = TraceStore::parse_jsonl(text, 7) {
        assert_eq!(TraceStore::parse_jsonl(&store.to_jsonl(), 7).unwrap(), store);
    }
});
