use std::fmt::Write as _;

use samg::model::format_float;

#[derive(Debug, Clone)]
pub enum Value {
    Float(f64),
    Int(u128),
    Text(String),
    Bool(bool),
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Int(x as u128)
    }
}

impl From<u64> for Value {
    fn from(x: u64) -> Self {
        Value::Int(x.into())
    }
}

impl From<bool> for Value {
    fn from(x: bool) -> Self {
        Value::Bool(x)
    }
}

impl From<&str> for Value {
    fn from(x: &str) -> Self {
        Value::Text(x.to_string())
    }
}

impl From<String> for Value {
    fn from(x: String) -> Self {
        Value::Text(x)
    }
}

/// Ordered key-value report. The machine form prints floats with 17
/// significant digits; the human form rounds them to 6 decimals.
#[derive(Debug, Default)]
pub struct Report {
    entries: Vec<(String, Value)>,
}

impl Report {
    pub fn push(&mut self, key: impl Into<String>, value: impl Into<Value>) {
        self.entries.push((key.into(), value.into()));
    }

    pub fn machine(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.entries {
            let text = match value {
                Value::Float(x) => format_float(*x),
                Value::Int(n) => n.to_string(),
                Value::Text(t) => t.clone(),
                Value::Bool(b) => b.to_string(),
            };
            let _ = writeln!(out, "{key} = {text}");
        }
        out
    }

    pub fn human(&self) -> String {
        let width = self.entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (key, value) in &self.entries {
            let text = match value {
                Value::Float(x) => format!("{x:.6}"),
                Value::Int(n) => n.to_string(),
                Value::Text(t) => t.clone(),
                Value::Bool(b) => b.to_string(),
            };
            let _ = writeln!(out, "{key:<width$}  {text}");
        }
        out
    }
}

/// CSV rows `iter,objective,residual`; the first row has no residual.
pub fn trace_csv(trace: &[f64], residuals: &[f64]) -> String {
    let mut out = String::from("iter,objective,residual\n");
    for (k, f) in trace.iter().enumerate() {
        let residual = k
            .checked_sub(1)
            .and_then(|r| residuals.get(r))
            .map(|&r| format_float(r))
            .unwrap_or_default();
        let _ = writeln!(out, "{k},{},{residual}", format_float(*f));
    }
    out
}
