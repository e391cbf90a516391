//! Output helpers: every float leaves the program with 12 significant
//! digits.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::Value;

pub const SIG_DIGITS: usize = 12;

/// `v` rounded to [`SIG_DIGITS`] significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIG_DIGITS - 1, v).parse().unwrap_or(v)
}

/// Shortest text of the rounded value; scientific notation outside
/// `[1e-4, 1e12)`.
pub fn fmt(v: f64) -> String {
    let r = round_sig(v);
    let a = r.abs();
    if r == 0.0 || !r.is_finite() || (1e-4..1e12).contains(&a) {
        r.to_string()
    } else {
        format!("{r:e}")
    }
}

/// Rounds every number inside a JSON value.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(f) if !(n.is_i64() || n.is_u64()) => serde_json::Number::from_f64(round_sig(f)).map_or(Value::Null, Value::Number),
            _ => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

pub fn write_json(path: &Path, value: Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&round_json(value))?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// `run.csv` -> `run.events.json`.
pub fn sibling_events(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.events.json"))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt(3.231945212345678), "3.23194521235");
        assert_eq!(round_sig(1.0e-7 / 3.0), 3.33333333333e-8);
        assert_eq!(fmt(0.0), "0");
        assert_eq!(fmt(3.580904664912345e-20), "3.58090466491e-20");
        assert_eq!(round_json(serde_json::json!({"a": [1, 0.1234567890123456]})), serde_json::json!({"a": [1, 0.123456789012]}));
    }

    #[test]
    fn events_path() {
        assert_eq!(sibling_events(Path::new("/tmp/b.csv")), PathBuf::from("/tmp/b.events.json"));
    }
}
