//! Extract and validate a recommendation from free-form backend text.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ActionName, Recommendation, RiskFlag};

/// Longest duration a recommendation may carry, in seconds.
pub const MAX_DURATION: u64 = 3600;

const FIELDS: [&str; 7] = [
    "accept_candidate_action",
    "recommended_action",
    "recommended_duration",
    "congestion_diagnosis",
    "risk_flag",
    "safety_check",
    "explanation",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaFailureReason {
    Unparseable,
    MissingField,
    WrongType,
    UnknownAction,
    UnknownRiskFlag,
    NonPositiveDuration,
    DurationOutOfRange,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaFailure {
    pub reason: SchemaFailureReason,
    pub detail: String,
}

impl fmt::Display for SchemaFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.reason, self.detail)
    }
}

impl std::error::Error for SchemaFailure {}

fn fail(reason: SchemaFailureReason, detail: impl Into<String>) -> SchemaFailure {
    SchemaFailure { reason, detail: detail.into() }
}

/// End index (exclusive) of the balanced object starting at `start`, skipping braces inside strings.
fn object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First JSON object embedded in `raw` (code fences and surrounding prose are ignored).
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut from = 0;
    while let Some(off) = raw[from..].find('{') {
        let start = from + off;
        if let Some(end) = object_end(bytes, start) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&raw[start..end]) {
                return Some(map);
            }
        }
        from = start + 1;
    }
    None
}

fn string_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, SchemaFailure> {
    obj[key]
        .as_str()
        .ok_or_else(|| fail(SchemaFailureReason::WrongType, format!("{key} must be a string")))
}

pub fn parse_and_validate(raw: &str) -> Result<Recommendation, SchemaFailure> {
    let obj = extract_json_object(raw).ok_or_else(|| {
        let preview: String = raw.chars().take(80).collect();
        fail(SchemaFailureReason::Unparseable, format!("no JSON object in {preview:?}"))
    })?;
    let missing: Vec<&str> = FIELDS.iter().copied().filter(|f| !obj.contains_key(*f)).collect();
    if !missing.is_empty() {
        return Err(fail(SchemaFailureReason::MissingField, missing.join(", ")));
    }

    let accept = obj["accept_candidate_action"]
        .as_bool()
        .ok_or_else(|| fail(SchemaFailureReason::WrongType, "accept_candidate_action must be a boolean"))?;

    let action_text = string_field(&obj, "recommended_action")?;
    let action: ActionName = action_text
        .parse()
        .map_err(|e: String| fail(SchemaFailureReason::UnknownAction, e))?;

    let duration = &obj["recommended_duration"];
    let duration = match (duration.as_u64(), duration.as_i64(), duration.as_f64()) {
        (Some(0), _, _) => return Err(fail(SchemaFailureReason::NonPositiveDuration, "recommended_duration is 0")),
        (Some(d), _, _) if d > MAX_DURATION => {
            return Err(fail(
                SchemaFailureReason::DurationOutOfRange,
                format!("recommended_duration {d} exceeds {MAX_DURATION}"),
            ))
        }
        (Some(d), _, _) => d as u32,
        (None, Some(d), _) => {
            return Err(fail(SchemaFailureReason::NonPositiveDuration, format!("recommended_duration is {d}")))
        }
        _ => {
            return Err(fail(
                SchemaFailureReason::WrongType,
                format!("recommended_duration must be an integer, got {duration}"),
            ))
        }
    };

    let congestion_diagnosis = string_field(&obj, "congestion_diagnosis")?.to_string();
    let risk_text = string_field(&obj, "risk_flag")?;
    let risk_flag = match risk_text.trim().to_lowercase().as_str() {
        "low" => RiskFlag::Low,
        "medium" => RiskFlag::Medium,
        "high" => RiskFlag::High,
        other => return Err(fail(SchemaFailureReason::UnknownRiskFlag, format!("risk_flag {other:?}"))),
    };
    let safety_check = string_field(&obj, "safety_check")?.to_string();
    let explanation = string_field(&obj, "explanation")?.to_string();

    Ok(Recommendation {
        accept_candidate_action: accept,
        recommended_action: action,
        recommended_duration: duration,
        congestion_diagnosis,
        risk_flag,
        safety_check,
        explanation,
    })
}
