#![no_main]

use bluetrail::scenario::{parse_scenario, ScenarioFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = parse_scenario(text, ScenarioFormat::Json) {
        let again = parse_scenario(&config.canonical_json(), ScenarioFormat::Json).expect("canonical form reparses");
        assert_eq!(again.digest(), config.digest());
    }
});
