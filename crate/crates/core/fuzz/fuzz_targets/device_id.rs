#![no_main]

use bluetrail::model::{format_device_id, parse_device_id};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(id) = parse_device_id(text) {
        assert_eq!(parse_device_id(&format_device_id(id)).unwrap(), id);
    }
});
