//! Fixed-width text rendering of a JSON report.
//!
//! The table is produced from the same `serde_json::Value` that JSON mode
//! prints, with numbers formatted by the same serializer, so text mode never
//! shows a number the JSON lacks.

use serde_json::Value;

const KEY_WIDTH: usize = 44;
const CELL_WIDTH: usize = 24;

pub fn render_text(v: &Value) -> String {
    let mut out = String::new();
    walk(v, "", &mut out);
    out
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn numeric_row(v: &Value) -> Option<&Vec<Value>> {
    v.as_array()
        .filter(|xs| !xs.is_empty() && xs.iter().all(|x| x.is_number() || x.is_null()))
}

fn line(out: &mut String, key: &str, value: &str) {
    out.push_str(&format!("{key:<KEY_WIDTH$} {value}\n"));
}

fn walk(v: &Value, path: &str, out: &mut String) {
    match v {
        Value::Object(map) => {
            if map.is_empty() {
                line(out, path, "{}");
            }
            for (k, child) in map {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                walk(child, &p, out);
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                line(out, path, "[]");
            } else if let Some(row) = numeric_row(v) {
                line(out, path, &cells(row));
            } else if items.iter().all(|r| numeric_row(r).is_some_and(|r| r.len() == numeric_row(&items[0]).map_or(0, Vec::len))) {
                // matrix: one table row per matrix row
                line(out, path, "");
                for (i, row) in items.iter().enumerate() {
                    line(out, &format!("  [{i}]"), &cells(row.as_array().expect("checked")));
                }
            } else if items.iter().all(is_scalar) {
                for (i, item) in items.iter().enumerate() {
                    line(out, &format!("{path}[{i}]"), &scalar(item));
                }
            } else {
                for (i, item) in items.iter().enumerate() {
                    walk(item, &format!("{path}[{i}]"), out);
                }
            }
        }
        other => line(out, path, &scalar(other)),
    }
}

fn cells(row: &[Value]) -> String {
    row.iter()
        .map(|x| format!("{:>CELL_WIDTH$}", scalar(x)))
        .collect::<Vec<_>>()
        .join("")
        .trim_start()
        .to_string()
}
