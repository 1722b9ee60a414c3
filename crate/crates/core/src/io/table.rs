use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{json, Map, Number, Value};

use crate::error::{Error, Result};

use super::write_atomic;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::invalid("format", format!("expected csv or json, got `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Num(v) => Some(v),
            Cell::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(v) => render_number(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Num(v) => render_number(*v)
                .parse::<f64>()
                .ok()
                .and_then(Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }

    fn parse(s: &str) -> Self {
        if s.is_empty() {
            Cell::Empty
        } else if let Ok(v) = s.parse::<f64>() {
            Cell::Num(v)
        } else {
            Cell::Text(s.to_string())
        }
    }

    fn from_json(v: &Value) -> Self {
        match v {
            Value::Null => Cell::Empty,
            Value::Number(n) => n.as_f64().map_or(Cell::Empty, Cell::Num),
            Value::String(s) => Cell::Text(s.clone()),
            other => Cell::Text(other.to_string()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Six significant digits, fixed notation for exponents in `[-5, 6)` and
/// scientific otherwise, trailing zeros removed.
pub fn render_number(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// A rectangular result table with provenance metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: BTreeMap<String, String>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::LengthMismatch {
                expected: self.header.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn validate(&self) -> Result<()> {
        match self.rows.iter().find(|r| r.len() != self.header.len()) {
            Some(bad) => Err(Error::LengthMismatch {
                expected: self.header.len(),
                found: bad.len(),
            }),
            None => Ok(()),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut out = format!("# schema_version: {SCHEMA_VERSION}\n");
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {}\n", v.replace('\n', " ")));
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::invalid("table", e.to_string());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::invalid("table", e.to_string()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv writer emits utf-8"));
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let metadata: Map<String, Value> = self.metadata.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(Cell::to_json).collect()))
            .collect();
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "metadata": metadata,
            "header": self.header,
            "rows": rows,
        });
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    /// Atomic write in the given format.
    pub fn write(&self, path: impl AsRef<Path>, format: Format) -> Result<()> {
        write_atomic(path.as_ref(), self.render(format)?.as_bytes())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').trim().split_once(": ") {
                if k != "schema_version" {
                    metadata.insert(k.to_string(), v.to_string());
                }
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let parse_err = |e: csv::Error| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        };
        let header = rdr.headers().map_err(parse_err)?.iter().map(String::from).collect();
        let mut table = Self {
            header,
            rows: Vec::new(),
            metadata,
        };
        for rec in rdr.records() {
            let rec = rec.map_err(parse_err)?;
            table.push_row(rec.iter().map(Cell::parse).collect())?;
        }
        Ok(table)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text)?;
        let bad = |what: &str| Error::Parse {
            line: 0,
            message: format!("result document: {what}"),
        };
        let header = doc["header"]
            .as_array()
            .ok_or_else(|| bad("missing header"))?
            .iter()
            .map(|h| h.as_str().map(String::from).ok_or_else(|| bad("non-string header")))
            .collect::<Result<Vec<_>>>()?;
        let metadata = doc["metadata"]
            .as_object()
            .ok_or_else(|| bad("missing metadata"))?
            .iter()
            .map(|(k, v)| (k.clone(), v.as_str().map_or_else(|| v.to_string(), String::from)))
            .collect();
        let mut table = Self {
            header,
            rows: Vec::new(),
            metadata,
        };
        for row in doc["rows"].as_array().ok_or_else(|| bad("missing rows"))? {
            let cells = row.as_array().ok_or_else(|| bad("row is not an array"))?;
            table.push_row(cells.iter().map(Cell::from_json).collect())?;
        }
        Ok(table)
    }
}

/// Reads a result file, choosing the parser by extension (`.json` or CSV
/// otherwise).
pub fn read_results(path: impl AsRef<Path>) -> Result<ResultTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("json") => ResultTable::from_json(&text),
        _ => ResultTable::from_csv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut t = ResultTable::new(["mechanism", "efficiency", "count", "pof"])
            .with_meta("master_seed", 42)
            .with_meta("config_digest", "abc");
        t.push_row(vec![
            "proposed".into(),
            23.025850929940457.into(),
            50usize.into(),
            None.into(),
        ])
        .unwrap();
        t.push_row(vec![
            "flat, calibrated".into(),
            (-1.234567e-8).into(),
            3usize.into(),
            Some(1.05).into(),
        ])
        .unwrap();
        t
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(render_number(23.025850929940457), "23.0259");
        assert_eq!(render_number(0.5), "0.5");
        assert_eq!(render_number(100.0), "100");
        assert_eq!(render_number(-1.234567e-8), "-1.23457e-8");
        assert_eq!(render_number(1234567.0), "1.23457e6");
        assert_eq!(render_number(999999.7), "1e6");
        assert_eq!(render_number(0.000123456789), "0.000123457");
        assert_eq!(render_number(0.0), "0");
        assert_eq!(render_number(f64::NAN), "NaN");
    }

    #[test]
    fn empty_table_has_header_and_metadata() {
        let t = ResultTable::new(["a", "b"]).with_meta("k", "v");
        let csv = t.to_csv().unwrap();
        assert_eq!(csv, "# schema_version: 1\n# k: v\na,b\n");
    }

    #[test]
    fn arity_enforced() {
        let mut t = ResultTable::new(["a", "b"]);
        assert!(t.push_row(vec![Cell::Num(1.0)]).is_err());
    }

    #[test]
    fn csv_and_json_read_back_alike() {
        let t = sample();
        let a = ResultTable::from_csv(&t.to_csv().unwrap()).unwrap();
        let b = ResultTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(a.header, t.header);
        assert_eq!(a.metadata, t.metadata);
        assert_eq!(b.metadata, t.metadata);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for (ca, cb) in ra.iter().zip(rb) {
                match (ca.as_f64(), cb.as_f64()) {
                    (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs())),
                    _ => assert_eq!(ca, cb),
                }
            }
        }
        assert_eq!(a.rows[1][0], Cell::Text("flat, calibrated".into()));
        assert!((a.rows[0][1].as_f64().unwrap() - 23.025850929940457).abs() < 1e-4);
        assert_eq!(a.rows[0][3], Cell::Empty);
    }

    #[test]
    fn atomic_write_and_read() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for (name, fmt) in [("out/r.csv", Format::Csv), ("out/r.json", Format::Json)] {
            let path = dir.path().join(name);
            t.write(&path, fmt).unwrap();
            let first = fs::read(&path).unwrap();
            t.write(&path, fmt).unwrap();
            assert_eq!(first, fs::read(&path).unwrap());
            assert_eq!(read_results(&path).unwrap().rows.len(), 2);
        }
    }
}
