//! Deterministic report serialization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dpp_core::regularity::Tagged;
use serde_json::{json, Value};

use crate::LabError;

/// Finite floats as numbers; non-finite ones as the strings `"Infinity"`,
/// `"-Infinity"` and `"NaN"`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
    } else if x.is_nan() {
        Value::String("NaN".into())
    } else if x > 0.0 {
        Value::String("Infinity".into())
    } else {
        Value::String("-Infinity".into())
    }
}

pub fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(num).collect())
}

/// Constant with its logarithms; the value is null once it overflows.
pub fn tagged(t: &Tagged) -> Value {
    json!({
        "value": if t.value.is_finite() { num(t.value) } else { Value::Null },
        "ln": num(t.ln),
        "log10": num(t.log10()),
        "provenance": t.provenance.as_str(),
    })
}

/// A float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    format!("{x:.16e}")
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize, out: &mut String| out.extend(std::iter::repeat_n(' ', 2 * n));
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match (n.as_u64(), n.as_i64(), n.as_f64()) {
            (Some(u), _, _) => write!(out, "{u}").expect("string write"),
            (_, Some(i), _) => write!(out, "{i}").expect("string write"),
            (_, _, Some(f)) => out.push_str(&format_float(f)),
            _ => out.push_str("null"),
        },
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string encodes")),
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                out.push_str(if k == 0 { "\n" } else { ",\n" });
                pad(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                out.push_str(if k == 0 { "\n" } else { ",\n" });
                pad(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key encodes"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            out.push('\n');
            pad(indent, out);
            out.push('}');
        }
    }
}

/// Pretty JSON with sorted keys and every float at 17 significant digits.
pub fn to_json_string(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out.push('\n');
    out
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), LabError> {
    fs::write(path, to_json_string(v)).map_err(|e| LabError::Output(format!("{}: {e}", path.display())))
}

/// A table of plottable series.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Series {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(if x { "true" } else { "false" }.into())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.into())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Text(x)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) if x.is_finite() => format_float(*x),
            Cell::Float(x) if x.is_nan() => "NaN".into(),
            Cell::Float(x) => if *x > 0.0 { "Infinity" } else { "-Infinity" }.into(),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl Series {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC-4180: CRLF line ends, quoting where needed.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, LabError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        let err = |e: csv::Error| LabError::Output(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(err)?;
        }
        w.into_inner().map_err(|e| LabError::Output(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        fs::write(path, self.to_csv_bytes()?).map_err(|e| LabError::Output(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, 6.02214076e23, -7.5] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            let digits = s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count();
            assert_eq!(digits, 17, "{s}");
        }
    }

    #[test]
    fn json_is_parseable_and_sorted() {
        let v = json!({"b": num(0.1), "a": [1, num(f64::INFINITY), Value::Null], "c": {}});
        let s = to_json_string(&v);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
        assert_eq!(back["a"][1], "Infinity");
        assert!(s.find("\"a\"").unwrap() < s.find("\"b\"").unwrap());
    }

    #[test]
    fn csv_quotes_and_crlf() {
        let mut s = Series::new(["name", "x"]);
        s.push(vec!["a,b".into(), 0.5.into()]);
        s.push(vec!["say \"hi\"".into(), Cell::Empty]);
        let text = String::from_utf8(s.to_csv_bytes().unwrap()).unwrap();
        assert_eq!(text, "name,x\r\n\"a,b\",5.0000000000000000e-1\r\n\"say \"\"hi\"\"\",\r\n");
    }
}
