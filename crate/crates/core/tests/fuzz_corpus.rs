//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so a plain test run covers every parser entry point.

use std::fs;
use std::path::PathBuf;

use bluetrail::adversary::PosDatabase;
use bluetrail::csi::TraceStore;
use bluetrail::model::{format_device_id, parse_device_id, OuiTable, ValueTable};
use bluetrail::scenario::{parse_scenario, ScenarioFormat};
use bluetrail::trace::TraceBundle;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = String::from_utf8_lossy(&fs::read(&p).unwrap()).into_owned();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn device_id_seeds() {
    let mut ok = 0;
    for (_, text) in seeds("device_id") {
        if let Ok(id) = parse_device_id(&text) {
            assert_eq!(parse_device_id(&format_device_id(id)).unwrap(), id);
            ok += 1;
        }
    }
    assert!(ok >= 1);
}

#[test]
fn table_seeds() {
    for (_, text) in seeds("oui_table") {
        let _ = OuiTable::parse(&text);
    }
    for (_, text) in seeds("value_table") {
        let _ = ValueTable::parse(&text);
    }
}

#[test]
fn scenario_seeds() {
    for (target, format) in [("scenario_toml", ScenarioFormat::Toml), ("scenario_json", ScenarioFormat::Json)] {
        let mut valid = 0;
        for (path, text) in seeds(target) {
            if let Ok(config) = parse_scenario(&text, format) {
                let again = parse_scenario(&config.canonical_json(), ScenarioFormat::Json)
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(again.digest(), config.digest());
                valid += 1;
            }
        }
        assert!(valid >= 1, "{target} has no valid seed");
    }
}

#[test]
fn trace_seeds() {
    for (_, text) in seeds("trace_jsonl") {
        if let Ok(bundle) = TraceBundle::parse_jsonl(&text) {
            assert_eq!(TraceBundle::parse_jsonl(&bundle.to_jsonl()).unwrap(), bundle);
        }
    }
}

#[test]
fn store_seeds() {
    for (_, text) in seeds("store_jsonl") {
        if let Ok(store) = TraceStore::parse_jsonl(&text, 7) {
            assert_eq!(TraceStore::parse_jsonl(&store.to_jsonl(), 7).unwrap(), store);
        }
    }
}

#[test]
fn pos_seeds() {
    for (_, text) in seeds("pos_db") {
        if let Ok(db) = PosDatabase::parse_tsv(&text) {
            assert_eq!(PosDatabase::parse_tsv(&db.to_tsv()).unwrap(), db);
        }
    }
}
