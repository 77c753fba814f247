//! JSON Lines event log: one object per line, human summaries go to stdout.

use std::io::Write;
use std::path::Path;

pub struct Logger {
    out: Option<std::io::BufWriter<std::fs::File>>,
}

impl Logger {
    pub fn create(path: Option<&Path>) -> std::io::Result<Self> {
        let out = match path {
            Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => None,
        };
        Ok(Self { out })
    }

    /// Emit one event line: `{"event": name, ...fields}`.
    pub fn event(&mut self, name: &str, fields: serde_json::Value) {
        let Some(out) = &mut self.out else { return };
        let mut obj = serde_json::json!({ "event": name });
        if let (Some(dst), Some(src)) = (obj.as_object_mut(), fields.as_object()) {
            for (k, v) in src {
                dst.insert(k.clone(), v.clone());
            }
        }
        // Logging must never abort a run.
        let _ = writeln!(out, "{obj}");
        let _ = out.flush();
    }

    /// Emit a raw serializable record as one line.
    pub fn record<T: serde::Serialize>(&mut self, value: &T) {
        let Some(out) = &mut self.out else { return };
        if let Ok(line) = serde_json::to_string(value) {
            let _ = writeln!(out, "{line}");
        }
        let _ = out.flush();
    }
}
