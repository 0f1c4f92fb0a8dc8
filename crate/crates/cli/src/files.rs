//! Versioned JSON documents.
//!
//! Every file is one object `{"schema": "<kind>", "version": 1, "data": {...}}`.
//! Readers check the kind and version before the payload, and report
//! problems with the line and column they were found at.

use std::fmt;
use std::path::Path;

use hops_core::body::BodyModel;
use hops_core::object::ObjectModel;
use hops_core::pipeline::{PipelineConfig, Report, Sequence, Solution};
use hops_core::sim::{ErrorSeries, Errors, GroundTruth};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const VERSION: u32 = 1;

/// A problem in an input file, located by line and column (1-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.path, self.line, self.column, self.message)
    }
}

impl Diagnostic {
    pub fn at_offset(path: &str, text: &str, offset: usize, message: String) -> Self {
        let before = &text[..offset.min(text.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        Self {
            path: path.into(),
            line,
            column,
            message,
        }
    }

    /// Points at the first occurrence of `"key"`, or the start of the file.
    fn at_key(path: &str, text: &str, key: &str, message: String) -> Self {
        let offset = text.find(&format!("\"{key}\"")).unwrap_or(0);
        Self::at_offset(path, text, offset, message)
    }
}

/// A payload with a fixed document kind.
pub trait Schema: Serialize + DeserializeOwned {
    const KIND: &'static str;

    /// Semantic checks after parsing, as (offending key, message).
    fn check(&self) -> Result<(), (&'static str, String)> {
        Ok(())
    }
}

#[derive(Serialize)]
struct Document<'a, T> {
    schema: &'a str,
    version: u32,
    data: &'a T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OwnedDocument<T> {
    #[allow(dead_code)]
    schema: String,
    #[allow(dead_code)]
    version: u32,
    data: T,
}

#[derive(Deserialize)]
struct Header {
    schema: Option<String>,
    version: Option<u32>,
}

fn json_diagnostic(path: &str, e: &serde_json::Error) -> Diagnostic {
    // serde_json appends " at line L column C" to its messages
    let msg = e.to_string();
    let msg = msg
        .rsplit_once(" at line ")
        .map_or(msg.as_str(), |(m, _)| m)
        .to_string();
    Diagnostic {
        path: path.into(),
        line: e.line().max(1),
        column: e.column().max(1),
        message: msg,
    }
}

pub fn parse<T: Schema>(text: &str, path: &str) -> Result<T, Diagnostic> {
    let header: Header = serde_json::from_str(text).map_err(|e| json_diagnostic(path, &e))?;
    match header.schema.as_deref() {
        Some(k) if k == T::KIND => {}
        Some(k) => {
            return Err(Diagnostic::at_key(
                path,
                text,
                "schema",
                format!("expected schema \"{}\", found \"{k}\"", T::KIND),
            ))
        }
        None => {
            return Err(Diagnostic::at_offset(
                path,
                text,
                0,
                "missing field `schema`".into(),
            ))
        }
    }
    match header.version {
        Some(VERSION) => {}
        Some(v) => {
            return Err(Diagnostic::at_key(
                path,
                text,
                "version",
                format!("unsupported version {v}, this build reads version {VERSION}"),
            ))
        }
        None => {
            return Err(Diagnostic::at_offset(
                path,
                text,
                0,
                "missing field `version`".into(),
            ))
        }
    }
    let doc: OwnedDocument<T> = serde_json::from_str(text).map_err(|e| json_diagnostic(path, &e))?;
    doc.data
        .check()
        .map_err(|(key, msg)| Diagnostic::at_key(path, text, key, msg))?;
    Ok(doc.data)
}

pub fn to_text<T: Schema>(value: &T) -> String {
    let doc = Document {
        schema: T::KIND,
        version: VERSION,
        data: value,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("documents serialize");
    s.push('\n');
    s
}

pub fn read<T: Schema>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text, &path.display().to_string()).map_err(CliError::Input)
}

pub fn write<T: Schema>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, to_text(value)).map_err(|e| CliError::io(path, e))
}

impl Schema for Sequence {
    const KIND: &'static str = "hops.sequence";

    fn check(&self) -> Result<(), (&'static str, String)> {
        self.validate().map_err(|e| {
            let msg = e.to_string();
            (sequence_key(&msg), msg)
        })
    }
}

/// Best guess of the top-level key a validation message is about.
fn sequence_key(msg: &str) -> &'static str {
    const KEYS: [(&str, &str); 9] = [
        ("frame_rate", "frame_rate"),
        ("imu_params", "imu_params"),
        ("imu_head", "imu_head"),
        ("IMU", "imu_head"),
        ("observations", "object_observations"),
        ("interaction", "interactions"),
        ("localization", "camera"),
        ("object", "objects"),
        ("hinge", "objects"),
    ];
    KEYS.iter()
        .find(|(needle, _)| msg.contains(needle))
        .map_or("data", |(_, key)| key)
}

/// Ground truth written next to a simulated sequence, with the models
/// needed to score a solution against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub body_model: BodyModel,
    pub objects: Vec<ObjectModel>,
    pub truth: GroundTruth,
}

impl Schema for TruthFile {
    const KIND: &'static str = "hops.truth";

    fn check(&self) -> Result<(), (&'static str, String)> {
        let n = self.truth.times.len();
        if self.truth.body.len() != n || self.truth.objects.iter().any(|o| o.poses.len() != n) {
            return Err(("truth", format!("truth streams must all have {n} frames")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub body_model: BodyModel,
    pub solution: Solution,
}

impl Schema for SolutionFile {
    const KIND: &'static str = "hops.solution";

    fn check(&self) -> Result<(), (&'static str, String)> {
        let n = self.solution.times.len();
        if self.solution.body.len() != n || self.solution.objects.iter().any(|o| o.poses.len() != n) {
            return Err(("solution", format!("solution streams must all have {n} frames")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    /// File name of the input sequence.
    pub sequence: String,
    pub frames: usize,
    pub config: PipelineConfig,
    pub stages: Report,
    /// Present when ground truth was available.
    pub errors: Option<Errors>,
    pub error_series: Option<ErrorSeries>,
}

impl Schema for RunReport {
    const KIND: &'static str = "hops.report";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub errors: Errors,
    pub series: ErrorSeries,
}

impl Schema for EvalReport {
    const KIND: &'static str = "hops.eval";
}

#[cfg(test)]
mod tests {
    use super::*;
    use hops_core::sim::{generate, ScenarioConfig};

    fn small_sequence() -> Sequence {
        generate(&ScenarioConfig::table(0)).unwrap().1
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let seq = small_sequence();
        let a = to_text(&seq);
        let back: Sequence = parse(&a, "a.json").unwrap();
        assert_eq!(back, seq);
        assert_eq!(to_text(&back), a);
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let text = "{\n  \"schema\": \"hops.sequence\",\n  \"version\": 1,\n  \"data\": [,]\n}\n";
        let d = parse::<Sequence>(text, "bad.json").unwrap_err();
        assert_eq!((d.line, d.column), (4, 12));
        assert!(d.to_string().starts_with("bad.json:4:12: "));
    }

    #[test]
    fn wrong_kind_and_version_point_at_their_keys() {
        let text = "{\n  \"version\": 1,\n  \"schema\": \"hops.truth\",\n  \"data\": {}\n}";
        let d = parse::<Sequence>(text, "x").unwrap_err();
        assert_eq!((d.line, d.column), (3, 3));
        assert!(d.message.contains("hops.sequence"));

        let text = "{\n  \"schema\": \"hops.sequence\",\n  \"version\": 7,\n  \"data\": {}\n}";
        let d = parse::<Sequence>(text, "x").unwrap_err();
        assert_eq!(d.line, 3);
    }

    #[test]
    fn unknown_top_level_fields_are_rejected() {
        let mut text = to_text(&small_sequence());
        text.insert_str(1, "\n  \"extra\": 0,");
        let d = parse::<Sequence>(&text, "x").unwrap_err();
        assert!(d.message.contains("extra"), "{d}");
    }

    #[test]
    fn validation_errors_point_at_the_stream() {
        let mut seq = small_sequence();
        seq.imu_params.pop();
        let text = to_text(&seq);
        let d = parse::<Sequence>(&text, "x").unwrap_err();
        let want = text.lines().position(|l| l.contains("\"imu_params\"")).unwrap() + 1;
        assert_eq!(d.line, want, "{d}");
    }

    #[test]
    fn decreasing_localizations_fail_while_parsing() {
        let seq = small_sequence();
        let text = to_text(&seq);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let cam = v["data"]["camera"].as_array_mut().unwrap();
        cam.swap(0, 1);
        let text = serde_json::to_string_pretty(&v).unwrap();
        let d = parse::<Sequence>(&text, "x").unwrap_err();
        assert!(d.message.contains("decrease"), "{d}");
        assert!(d.line > 1);
    }
}
