use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `key=value` lines, nested keys joined with dots.
    Text,
    /// One JSON document.
    Structured,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&key(k), v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&key(&i.to_string()), v, out);
            }
        }
        Value::String(s) => out.push(format!("{prefix}={s}")),
        Value::Null => out.push(format!("{prefix}=")),
        other => out.push(format!("{prefix}={other}")),
    }
}

/// `key=value` lines of any serializable report.
pub fn key_values<T: Serialize>(report: &T) -> Result<Vec<String>> {
    let v = serde_json::to_value(report)?;
    let mut out = Vec::new();
    flatten("", &v, &mut out);
    Ok(out)
}

/// Print `report` to stdout and optionally also write it as JSON to `file`.
pub fn emit<T: Serialize>(report: &T, format: Format, file: Option<&Path>) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match format {
        Format::Text => {
            for line in key_values(report)? {
                writeln!(out, "{line}")?;
            }
        }
        Format::Structured => {
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)?;
        }
    }
    if let Some(path) = file {
        let json = serde_json::to_string_pretty(report)?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_keys_are_dotted() {
        let v = serde_json::json!({"a": 1, "b": {"c": [true, "x"]}, "d": null});
        assert_eq!(key_values(&v).unwrap(), vec!["a=1", "b.c.0=true", "b.c.1=x", "d="]);
    }
}
