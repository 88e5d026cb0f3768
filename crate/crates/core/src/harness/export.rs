//! Stable table export: sorted JSON keys and floats rounded to 12
//! significant digits, so identical results always give identical bytes.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Config(format!("unknown format {s:?}; expected csv or json"))),
        }
    }
}

/// A flat row type with a fixed column order.
pub trait Record: Serialize + DeserializeOwned {
    const COLUMNS: &'static [&'static str];
}

/// Rounds to 12 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.11e}").parse().expect("formatted float parses")
}

/// Sorts object keys (the map type is ordered) and rounds every float.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

fn to_value<T: Serialize + ?Sized>(value: &T) -> Result<Value> {
    serde_json::to_value(value).map_err(|e| Error::Contract(format!("cannot serialize result: {e}")))
}

/// Pretty canonical JSON with a trailing newline.
pub fn render_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&canonical(to_value(value)?))
        .map_err(|e| Error::Contract(format!("cannot serialize result: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_csv<R: Record>(records: &[R]) -> Result<String> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Contract(format!("writing CSV: {e}"));
    wr.write_record(R::COLUMNS).map_err(err)?;
    for r in records {
        let v = canonical(to_value(r)?);
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Contract("CSV records must serialize to objects".into()))?;
        wr.write_record(R::COLUMNS.iter().map(|c| obj.get(*c).map_or_else(String::new, cell)))
            .map_err(err)?;
    }
    let bytes = wr
        .into_inner()
        .map_err(|e| Error::Contract(format!("writing CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn render<R: Record>(records: &[R], format: Format) -> Result<String> {
    match format {
        Format::Csv => render_csv(records),
        Format::Json => render_json(records),
    }
}

pub fn parse<R: Record>(text: &str, format: Format) -> Result<Vec<R>> {
    match format {
        Format::Json => serde_json::from_str(text).map_err(|e| Error::parse("JSON table", e)),
        Format::Csv => {
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            let header = rd.headers().map_err(|e| Error::parse("CSV header", e))?;
            if header.iter().ne(R::COLUMNS.iter().copied()) {
                return Err(Error::Parse {
                    what: "CSV header".into(),
                    message: format!("expected columns {:?}", R::COLUMNS),
                });
            }
            rd.deserialize()
                .map(|r| r.map_err(|e| Error::parse("CSV row", e)))
                .collect()
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records` to `path` in `format`.
pub fn export<R: Record>(records: &[R], path: &Path, format: Format) -> Result<()> {
    write_text(path, &render(records, format)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        name: String,
        value: Option<f64>,
        count: usize,
    }

    impl Record for Row {
        const COLUMNS: &'static [&'static str] = &["name", "value", "count"];
    }

    fn rows() -> Vec<Row> {
        vec![
            Row { name: "a".into(), value: Some(1.0 / 3.0), count: 2 },
            Row { name: "b,c".into(), value: None, count: 0 },
            Row { name: "d".into(), value: Some(-2.5e-20), count: 7 },
        ]
    }

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(123456789.0123456), 123456789.012);
        assert_eq!(round_sig(0.0), 0.0);
        assert!(round_sig(f64::NAN).is_nan());
    }

    #[test]
    fn empty_tables_have_headers() {
        assert_eq!(render_csv::<Row>(&[]).unwrap(), "name,value,count\n");
        assert_eq!(render_json::<[Row]>(&[]).unwrap(), "[]\n");
        assert!(parse::<Row>("name,value,count\n", Format::Csv).unwrap().is_empty());
    }

    #[test]
    fn round_trip_in_both_formats() {
        for format in [Format::Csv, Format::Json] {
            let text = render(&rows(), format).unwrap();
            let back: Vec<Row> = parse(&text, format).unwrap();
            assert_eq!(back.len(), 3);
            for (a, b) in back.iter().zip(rows()) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.count, b.count);
                assert_eq!(a.value, b.value.map(round_sig));
            }
            assert_eq!(render(&back, format).unwrap(), text);
        }
    }

    #[test]
    fn json_keys_are_sorted() {
        let text = render_json(&rows()[..1]).unwrap();
        let (c, n, v) = (text.find("count").unwrap(), text.find("name").unwrap(), text.find("value").unwrap());
        assert!(c < n && n < v);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(parse::<Row>("name,count\n", Format::Csv).is_err());
    }

    #[test]
    fn export_reports_path_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        let err = export(&rows(), &file.join("sub/out.csv"), Format::Csv).unwrap_err();
        assert!(err.to_string().contains("f"), "{err}");
        let ok = dir.path().join("nested/out.json");
        export(&rows(), &ok, Format::Json).unwrap();
        assert!(ok.exists());
    }
}
