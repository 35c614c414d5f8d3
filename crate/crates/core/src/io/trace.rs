//! Line-delimited JSON request traces.
//!
//! ```text
//! {"format_version":1}
//! {"at_s":0,"kind":"load_start","id":"bg","src":"a","dst":"b","demand_cap_gbps":9.2}
//! {"at_s":60,"kind":"request","id":"r1","src":"ucsd","dst":"caltech","volume_gb":750,"priority":9,"requested_rate_gbps":7}
//! {"at_s":1140,"kind":"load_stop","id":"bg"}
//! ```
//!
//! The header line is optional. `at` is accepted as a synonym for `at_s`.
//! Blank lines are skipped but still counted for error line numbers.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::flowsim::{LoadSpec, Stimulus, TimedStimulus};
use crate::scheduler::TransferRequest;
use crate::topology::{NodeId, Topology};
use crate::units::{gbps, gigabytes, Seconds};

use super::{check_version, read_file, IoError, FORMAT_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TracePayload {
    Request {
        id: String,
        src: String,
        dst: String,
        volume_gb: f64,
        #[serde(default)]
        priority: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requested_rate_gbps: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline_s: Option<f64>,
    },
    LoadStart {
        id: String,
        src: String,
        dst: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        demand_cap_gbps: Option<f64>,
        /// Omitted for load that runs until stopped.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        volume_gb: Option<f64>,
    },
    LoadStop {
        id: String,
    },
    Cancel {
        id: String,
    },
}

impl TracePayload {
    pub fn id(&self) -> &str {
        match self {
            TracePayload::Request { id, .. }
            | TracePayload::LoadStart { id, .. }
            | TracePayload::LoadStop { id }
            | TracePayload::Cancel { id } => id,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub at: Seconds,
    pub payload: TracePayload,
    /// 1-based source line, kept for later error messages. Not part of
    /// equality.
    pub line: usize,
}

impl PartialEq for TraceRecord {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.payload == other.payload
    }
}

impl TraceRecord {
    pub fn to_json(&self) -> Value {
        let mut obj = match serde_json::to_value(&self.payload) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("payload serializes to an object"),
        };
        obj.insert("at_s".into(), Value::from(self.at));
        Value::Object(obj)
    }
}

fn malformed(line: usize, message: impl Into<String>) -> IoError {
    IoError::MalformedRecord {
        line,
        message: message.into(),
    }
}

fn record_from_object(mut obj: Map<String, Value>, line: usize) -> Result<TraceRecord, IoError> {
    let at = match (obj.remove("at_s"), obj.remove("at")) {
        (Some(_), Some(_)) => return Err(malformed(line, "both `at_s` and `at` given")),
        (Some(v), None) | (None, Some(v)) => v.as_f64().ok_or_else(|| malformed(line, "`at_s` must be a number"))?,
        (None, None) => return Err(malformed(line, "missing `at_s`")),
    };
    if !(at >= 0.0) {
        return Err(malformed(line, format!("time {at} is negative")));
    }
    let payload: TracePayload =
        serde_json::from_value(Value::Object(obj)).map_err(|e| malformed(line, e.to_string()))?;
    let positive = |v: Option<f64>, name: &str| match v {
        Some(x) if !(x > 0.0) || !x.is_finite() => Err(malformed(line, format!("`{name}` must be positive"))),
        _ => Ok(()),
    };
    match &payload {
        TracePayload::Request {
            id,
            volume_gb,
            requested_rate_gbps,
            deadline_s,
            ..
        } => {
            if id.is_empty() {
                return Err(malformed(line, "empty id"));
            }
            if !(*volume_gb >= 0.0) {
                return Err(malformed(line, "`volume_gb` must be non-negative"));
            }
            positive(*requested_rate_gbps, "requested_rate_gbps")?;
            if deadline_s.is_some_and(|d| !(d >= 0.0)) {
                return Err(malformed(line, "`deadline_s` must be non-negative"));
            }
        }
        TracePayload::LoadStart {
            id,
            demand_cap_gbps,
            volume_gb,
            ..
        } => {
            if id.is_empty() {
                return Err(malformed(line, "empty id"));
            }
            positive(*demand_cap_gbps, "demand_cap_gbps")?;
            if volume_gb.is_some_and(|v| !(v >= 0.0)) {
                return Err(malformed(line, "`volume_gb` must be non-negative"));
            }
        }
        TracePayload::LoadStop { .. } | TracePayload::Cancel { .. } => {}
    }
    Ok(TraceRecord { at, payload, line })
}

/// Parses records that are already split into (line number, JSON value).
fn parse_values(values: impl IntoIterator<Item = (usize, Value)>) -> Result<Vec<TraceRecord>, IoError> {
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut requests = BTreeSet::new();
    let mut loads = BTreeSet::new();
    for (n, (line, value)) in values.into_iter().enumerate() {
        let Value::Object(obj) = value else {
            return Err(malformed(line, "expected a JSON object"));
        };
        if n == 0 && obj.contains_key("format_version") {
            if obj.len() != 1 {
                return Err(malformed(line, "header line holds only `format_version`"));
            }
            let v = obj["format_version"]
                .as_u64()
                .ok_or_else(|| malformed(line, "`format_version` must be an integer"))?;
            check_version("trace", v)?;
            continue;
        }
        let rec = record_from_object(obj, line)?;
        if records.last().is_some_and(|prev| rec.at < prev.at) {
            return Err(IoError::UnsortedTrace { line });
        }
        let id = rec.payload.id().to_owned();
        match &rec.payload {
            TracePayload::Request { .. } | TracePayload::LoadStart { .. } => {
                // requests and loads both become flows, so they share one namespace
                if requests.contains(&id) || loads.contains(&id) {
                    return Err(IoError::DuplicateId { line, id });
                }
                if matches!(rec.payload, TracePayload::Request { .. }) {
                    requests.insert(id);
                } else {
                    loads.insert(id);
                }
            }
            TracePayload::LoadStop { .. } if !loads.contains(&id) => {
                return Err(malformed(line, format!("load_stop for unknown load `{id}`")));
            }
            TracePayload::Cancel { .. } if !requests.contains(&id) => {
                return Err(malformed(line, format!("cancel for unknown request `{id}`")));
            }
            _ => {}
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>, IoError> {
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(raw).map_err(|e| malformed(line, e.to_string()))?;
        values.push((line, v));
    }
    parse_values(values)
}

pub(super) fn parse_trace_values(values: Vec<Value>) -> Result<Vec<TraceRecord>, IoError> {
    parse_values(values.into_iter().enumerate().map(|(i, v)| (i + 1, v)))
}

pub fn parse_trace(path: impl AsRef<FsPath>) -> Result<Vec<TraceRecord>, IoError> {
    parse_trace_str(&read_file(path.as_ref())?)
}

/// Writes a header line and one line per record.
pub fn emit_trace<W: Write>(records: &[TraceRecord], mut sink: W) -> std::io::Result<()> {
    writeln!(sink, "{{\"format_version\":{FORMAT_VERSION}}}")?;
    for r in records {
        writeln!(sink, "{}", r.to_json())?;
    }
    sink.flush()
}

fn resolve(topology: &Topology, name: &str, line: usize) -> Result<NodeId, IoError> {
    topology.resolve(name).cloned().map_err(|_| IoError::UnknownNode {
        name: name.to_owned(),
        context: format!("trace line {line}"),
    })
}

/// Converts file records to engine stimuli, resolving node aliases.
pub fn to_stimuli(records: &[TraceRecord], topology: &Topology) -> Result<Vec<TimedStimulus>, IoError> {
    records
        .iter()
        .map(|r| {
            let stimulus = match &r.payload {
                TracePayload::Request {
                    id,
                    src,
                    dst,
                    volume_gb,
                    priority,
                    requested_rate_gbps,
                    deadline_s,
                } => Stimulus::Request(TransferRequest {
                    id: id.clone(),
                    src: resolve(topology, src, r.line)?,
                    dst: resolve(topology, dst, r.line)?,
                    volume: gigabytes(*volume_gb),
                    priority: *priority,
                    requested_rate: requested_rate_gbps.map(gbps),
                    deadline: *deadline_s,
                    submitted_at: r.at,
                }),
                TracePayload::LoadStart {
                    id,
                    src,
                    dst,
                    demand_cap_gbps,
                    volume_gb,
                } => Stimulus::LoadStart(LoadSpec {
                    id: id.clone(),
                    src: resolve(topology, src, r.line)?,
                    dst: resolve(topology, dst, r.line)?,
                    demand_cap: demand_cap_gbps.map(gbps),
                    volume: volume_gb.map(gigabytes),
                }),
                TracePayload::LoadStop { id } => Stimulus::LoadStop(id.clone()),
                TracePayload::Cancel { id } => Stimulus::Cancel(id.clone()),
            };
            Ok(TimedStimulus { at: r.at, stimulus })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_request_line() {
        let recs = parse_trace_str(
            r#"{"at":0,"kind":"request","id":"r1","src":"ucsd","dst":"caltech","volume_gb":750,"priority":9,"requested_rate_gbps":7}"#,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].at, 0.0);
        assert_eq!(
            recs[0].payload,
            TracePayload::Request {
                id: "r1".into(),
                src: "ucsd".into(),
                dst: "caltech".into(),
                volume_gb: 750.0,
                priority: 9,
                requested_rate_gbps: Some(7.0),
                deadline_s: None,
            }
        );
    }

    #[test]
    fn empty_and_header_only() {
        assert!(parse_trace_str("").unwrap().is_empty());
        assert!(parse_trace_str("{\"format_version\":1}\n\n").unwrap().is_empty());
        assert!(matches!(
            parse_trace_str("{\"format_version\":2}"),
            Err(IoError::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\"at_s\":5,\"kind\":\"cancel\",\"id\":\"x\"}";
        assert!(matches!(
            parse_trace_str(text),
            Err(IoError::MalformedRecord { line: 1, .. })
        ));

        let text = "\n{\"at_s\":5,\"kind\":\"load_stop\",\"id\":\"x\"";
        assert!(matches!(
            parse_trace_str(text),
            Err(IoError::MalformedRecord { line: 2, .. })
        ));

        let text = "{\"at_s\":5,\"kind\":\"load_start\",\"id\":\"a\",\"src\":\"x\",\"dst\":\"y\"}\n\
                    {\"at_s\":1,\"kind\":\"load_start\",\"id\":\"b\",\"src\":\"x\",\"dst\":\"y\"}";
        assert_eq!(parse_trace_str(text), Err(IoError::UnsortedTrace { line: 2 }));

        let text = "{\"at_s\":1,\"kind\":\"load_start\",\"id\":\"a\",\"src\":\"x\",\"dst\":\"y\"}\n\
                    {\"at_s\":1,\"kind\":\"request\",\"id\":\"a\",\"src\":\"x\",\"dst\":\"y\",\"volume_gb\":1}";
        assert_eq!(
            parse_trace_str(text),
            Err(IoError::DuplicateId {
                line: 2,
                id: "a".into()
            })
        );

        let typo = "{\"at_s\":1,\"kind\":\"request\",\"id\":\"a\",\"src\":\"x\",\"dst\":\"y\",\"volume_GB\":1}";
        assert!(matches!(
            parse_trace_str(typo),
            Err(IoError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn emit_then_parse_is_identity() {
        let text = "{\"at_s\":0.1,\"kind\":\"load_start\",\"id\":\"bg\",\"src\":\"a\",\"dst\":\"b\",\"demand_cap_gbps\":9.2}\n\
                    {\"at_s\":60,\"kind\":\"request\",\"id\":\"r\",\"src\":\"a\",\"dst\":\"b\",\"volume_gb\":750,\"deadline_s\":3600}\n\
                    {\"at_s\":70,\"kind\":\"cancel\",\"id\":\"r\"}\n\
                    {\"at_s\":1140,\"kind\":\"load_stop\",\"id\":\"bg\"}";
        let recs = parse_trace_str(text).unwrap();
        let mut buf = Vec::new();
        emit_trace(&recs, &mut buf).unwrap();
        let again = parse_trace_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(recs, again);
    }
}
