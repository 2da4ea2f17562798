use serde::{Deserialize, Serialize};

use crate::btstack::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportStatus {
    Ok,
    PreconditionUnmet,
}

/// One attack's findings as a `report` line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "report")]
pub struct Report {
    pub tick: Tick,
    pub threat: String,
    pub status: ReportStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub result: serde_json::Value,
}

impl Report {
    pub fn ok(threat: &str, result: serde_json::Value) -> Self {
        Self { tick: 0, threat: threat.into(), status: ReportStatus::Ok, reason: None, result }
    }

    pub fn unmet(threat: &str, reason: impl Into<String>) -> Self {
        Self {
            tick: 0,
            threat: threat.into(),
            status: ReportStatus::PreconditionUnmet,
            reason: Some(reason.into()),
            result: serde_json::Value::Null,
        }
    }
}

pub fn reports_to_jsonl(reports: &[Report]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("reports serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_shape() {
        let r = Report::unmet("association", "no point-of-sale database");
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"kind":"report","tick":0,"threat":"association","status":"precondition-unmet","reason":"no point-of-sale database"}"#
        );
        let ok = Report::ok("location", serde_json::json!({"itineraries": []}));
        let line = reports_to_jsonl(&[ok.clone()]);
        assert_eq!(serde_json::from_str::<Report>(line.trim()).unwrap(), ok);
    }
}
