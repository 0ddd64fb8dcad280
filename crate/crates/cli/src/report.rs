use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// JSON has no infinities; those become the strings "inf", "-inf", "nan".
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::from("nan")
    } else if x > 0.0 {
        Value::from("inf")
    } else {
        Value::from("-inf")
    }
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scalar {
    pub value: Value,
    /// "pass" or "fail" when the value is checked by an assertion.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub t: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRef {
    pub name: String,
    pub csv: String,
    pub dat: String,
    pub points: usize,
}

/// What a scenario computed, before it is written out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub scalars: BTreeMap<String, Scalar>,
    pub tables: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    pub series: Vec<Series>,
}

impl Outcome {
    pub fn scalar(&mut self, name: &str, value: Value) {
        self.scalars.insert(name.to_string(), Scalar { value, verdict: None });
    }

    /// A scalar together with the assertion that judges it.
    pub fn checked(&mut self, name: &str, value: Value, pass: bool, detail: impl Into<String>) {
        self.scalars.insert(
            name.to_string(),
            Scalar {
                value,
                verdict: Some(if pass { "pass" } else { "fail" }),
            },
        );
        self.assert(name, pass, detail);
    }

    pub fn assert(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.assertions.push(Assertion {
            name: name.to_string(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn table(&mut self, name: &str, value: Value) {
        self.tables.insert(name.to_string(), value);
    }

    pub fn series(&mut self, name: &str, t: &[f64], value: &[f64]) {
        self.series.push(Series {
            name: name.to_string(),
            t: t.to_vec(),
            value: value.to_vec(),
        });
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub scenario: String,
    pub input: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, Scalar>,
    pub tables: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    pub series: Vec<SeriesRef>,
    /// "pass", "fail" or "error".
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_seconds: f64,
}

impl ReportRecord {
    pub fn new(scenario: &str, input: BTreeMap<String, String>, outcome: &Outcome, wall: f64) -> Self {
        ReportRecord {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.to_string(),
            input,
            scalars: outcome.scalars.clone(),
            tables: outcome.tables.clone(),
            assertions: outcome.assertions.clone(),
            series: outcome
                .series
                .iter()
                .map(|s| SeriesRef {
                    name: s.name.clone(),
                    csv: format!("series/{}.csv", s.name),
                    dat: format!("series/{}.dat", s.name),
                    points: s.t.len(),
                })
                .collect(),
            status: if outcome.passed() { "pass" } else { "fail" },
            error: None,
            wall_time_seconds: wall,
        }
    }

    /// The record of a scenario that stopped with an error.
    pub fn failed(scenario: &str, input: BTreeMap<String, String>, message: String, wall: f64) -> Self {
        let mut r = ReportRecord::new(scenario, input, &Outcome::default(), wall);
        r.status = "error";
        r.error = Some(message);
        r
    }

    /// The scalar's value as plain text, empty when absent.
    pub fn scalar_text(&self, name: &str) -> String {
        match self.scalars.get(name).map(|s| &s.value) {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WriteError {
    #[error("series {0}: abscissae must be strictly increasing")]
    Unordered(String),
    #[error("series {0}: t and value lengths differ")]
    Ragged(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> WriteError + '_ {
    move |source| WriteError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn check_series(s: &Series) -> Result<(), WriteError> {
    if s.t.len() != s.value.len() {
        return Err(WriteError::Ragged(s.name.clone()));
    }
    if s.t.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(WriteError::Unordered(s.name.clone()));
    }
    Ok(())
}

pub fn series_csv(s: &Series) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in s.t.iter().zip(&s.value) {
        let _ = writeln!(out, "{t:e},{v:e}");
    }
    out
}

pub fn series_dat(s: &Series) -> String {
    let mut out = String::new();
    for (t, v) in s.t.iter().zip(&s.value) {
        let _ = writeln!(out, "{t:e} {v:e}");
    }
    out
}

/// report.json plus series/<name>.csv and series/<name>.dat under `dir`.
pub fn write_all(dir: &Path, record: &ReportRecord, outcome: &Outcome) -> Result<(), WriteError> {
    for s in &outcome.series {
        check_series(s)?;
    }
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir).map_err(io(&series_dir))?;
    for s in &outcome.series {
        let csv = series_dir.join(format!("{}.csv", s.name));
        fs::write(&csv, series_csv(s)).map_err(io(&csv))?;
        let dat = series_dir.join(format!("{}.dat", s.name));
        fs::write(&dat, series_dat(s)).map_err(io(&dat))?;
    }
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(record).expect("report serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io(&path))
}
