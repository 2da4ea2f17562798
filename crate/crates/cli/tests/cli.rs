use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn bluetrail<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_bluetrail")).args(args).output().unwrap()
}

fn reports(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn attack_reports_every_threat_and_scores_against_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let out = tmp.path().join("attack");
    assert!(bluetrail(["simulate".as_ref(), "--scenario".as_ref(), scenario("reference").as_os_str(), "--out".as_ref(), sim.as_os_str()])
        .status
        .success());
    assert!(bluetrail(["attack".as_ref(), "--trace".as_ref(), sim.join("trace.jsonl").as_os_str(), "--out".as_ref(), out.as_os_str()])
        .status
        .success());
    let lines = reports(&out.join("reports.jsonl"));
    let threats: Vec<&str> = lines.iter().map(|r| r["threat"].as_str().unwrap()).collect();
    assert_eq!(threats, ["association", "location", "preference", "constellation", "transaction", "breadcrumb"]);
    assert_eq!(lines[0]["status"], "precondition-unmet");
    assert_eq!(lines[1]["status"], "ok");
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn truth_free_trace_gets_no_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    bluetrail(["simulate".as_ref(), "--scenario".as_ref(), scenario("transaction").as_os_str(), "--out".as_ref(), sim.as_os_str()]);
    let text = fs::read_to_string(sim.join("trace.jsonl")).unwrap();
    let bare: String = text.lines().filter(|l| !l.contains(r#""kind":"truth""#)).map(|l| format!("{l}\n")).collect();
    assert!(bare.len() < text.len());
    let trace = tmp.path().join("bare.jsonl");
    fs::write(&trace, bare).unwrap();
    let out = tmp.path().join("attack");
    let run = bluetrail(["attack".as_ref(), "--trace".as_ref(), trace.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("reports.jsonl").exists());
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn bad_input_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let broken = tmp.path().join("broken.toml");
    fs::write(&broken, "horizon = 10\n[[scanners]]\nid = \"S\"\nsite = \"nowhere\"\n").unwrap();
    let out = tmp.path().join("out");
    let run = bluetrail(["simulate".as_ref(), "--scenario".as_ref(), broken.as_os_str(), "--out".as_ref(), out.as_os_str()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(!out.join("trace.jsonl").exists());

    let run = bluetrail(["attack", "--trace", "missing.jsonl", "--threats", "telepathy", "--out", "x"]);
    assert_eq!(run.status.code(), Some(2));
    assert_eq!(bluetrail::<[&str; 0], &str>([]).status.code(), Some(2));
}

#[test]
fn ingested_store_answers_match_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    bluetrail(["simulate".as_ref(), "--scenario".as_ref(), scenario("transaction").as_os_str(), "--out".as_ref(), sim.as_os_str()]);
    let salt = tmp.path().join("salt");
    fs::write(&salt, "0x2a\n").unwrap();
    let store = tmp.path().join("store");
    let run = bluetrail([
        "csi".as_ref(),
        "ingest".as_ref(),
        "--trace".as_ref(),
        sim.join("trace.jsonl").as_os_str(),
        "--salt-file".as_ref(),
        salt.as_os_str(),
        "--out".as_ref(),
        store.as_os_str(),
    ]);
    assert!(run.status.success());
    let hits = tmp.path().join("hits");
    let run = bluetrail([
        "csi".as_ref(),
        "match".as_ref(),
        "--store".as_ref(),
        store.join("store.jsonl").as_os_str(),
        "--salt-file".as_ref(),
        salt.as_os_str(),
        "--id".as_ref(),
        "0A:1B:2D:00:01:02".as_ref(),
        "--out".as_ref(),
        hits.as_os_str(),
    ]);
    assert!(run.status.success());
    let found = &reports(&hits.join("match.jsonl"))[0];
    let rows = found["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["digest"] == found["candidate_digest"]));
    let trace = fs::read_to_string(sim.join("trace.jsonl")).unwrap();
    let seen = trace.lines().filter(|l| l.contains(r#""kind":"sighting""#) && l.contains("0A:1B:2D:00:01:02")).count();
    assert_eq!(rows.len(), seen);
}
