#![no_main]

use bluetrail::adversary::PosDatabase;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(db) = PosDatabase::parse_tsv(text) {
        assert_eq!(PosDatabase::parse_tsv(&db.to_tsv()).unwrap(), db);
    }
});
