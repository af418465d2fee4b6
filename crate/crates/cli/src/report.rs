//! Output: a human-readable table on stderr and one JSON object per line on
//! stdout, so sweeps can be scripted with `ike ... | jq`.

use serde_json::{Map, Value};

/// Key/value summary of one command.
pub struct Summary {
    title: String,
    fields: Map<String, Value>,
}

impl Summary {
    pub fn new(command: &str) -> Summary {
        let mut fields = Map::new();
        fields.insert("command".into(), command.into());
        Summary { title: command.to_string(), fields }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn emit(&self) {
        eprintln!("{}", self.title);
        let width = self.fields.keys().map(String::len).max().unwrap_or(0);
        for (k, v) in self.fields.iter().filter(|(k, _)| *k != "command") {
            eprintln!("  {k:<width$}  {}", human(v));
        }
        println!("{}", Value::Object(self.fields.clone()));
    }
}

fn human(v: &Value) -> String {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e7) {
                format!("{x:.4e}")
            } else {
                format!("{x:.4}")
            }
        }
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// A table with one JSON line per row.
pub fn table(headers: &[&str], rows: &[Vec<Value>]) {
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(human).collect()).collect();
    let widths: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| cells.iter().map(|r| r[i].len()).max().unwrap_or(0).max(h.len()))
        .collect();
    let line = |items: Vec<&str>| {
        items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ")
    };
    eprintln!("{}", line(headers.to_vec()));
    for r in &cells {
        eprintln!("{}", line(r.iter().map(String::as_str).collect()));
    }
    for r in rows {
        let obj: Map<String, Value> = headers.iter().map(|h| h.to_string()).zip(r.iter().cloned()).collect();
        println!("{}", Value::Object(obj));
    }
}

/// A serializable report, printed as pretty JSON on stderr and a JSON line on stdout.
pub fn json_report<T: serde::Serialize>(name: &str, report: &T) {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    if let Value::Object(m) = &mut v {
        m.insert("check".into(), name.into());
    }
    eprintln!("{}", serde_json::to_string_pretty(&v).expect("reports serialize"));
    println!("{v}");
}
