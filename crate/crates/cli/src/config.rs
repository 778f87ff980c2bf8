//! Sectioned key=value configuration files: zero-dependency parse with
//! line-numbered diagnostics and per-scenario schema validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct Entry {
    pub value: String,
    pub line: usize,
    pub used: std::cell::Cell<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    /// section -> key -> entry
    pub sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

pub fn parse(text: &str) -> Result<Config, Diagnostic> {
    let mut cfg = Config::default();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Diagnostic { line: line_no, message: "unterminated section header".into() })?;
            section = name.trim().to_string();
            cfg.sections.entry(section.clone()).or_default();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Diagnostic { line: line_no, message: format!("expected key=value, got `{line}`") })?;
        if section.is_empty() {
            return Err(Diagnostic { line: line_no, message: "key outside of any section".into() });
        }
        let key = key.trim().to_string();
        let entry = Entry { value: value.trim().to_string(), line: line_no, used: std::cell::Cell::new(false) };
        if cfg.sections.get_mut(&section).unwrap().insert(key.clone(), entry).is_some() {
            return Err(Diagnostic { line: line_no, message: format!("duplicate key `{key}`") });
        }
    }
    Ok(cfg)
}

impl Config {
    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        let e = self.sections.get(section)?.get(key)?;
        e.used.set(true);
        Some(e)
    }

    pub fn str_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).map(|e| e.value.as_str()).unwrap_or(default)
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64, diags: &mut Vec<Diagnostic>) -> f64 {
        match self.get(section, key) {
            None => default,
            Some(e) => match e.value.parse::<f64>() {
                Ok(v) => v,
                Err(_) => {
                    diags.push(Diagnostic { line: e.line, message: format!("`{}.{key}` is not a number", section) });
                    default
                }
            },
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize, diags: &mut Vec<Diagnostic>) -> usize {
        match self.get(section, key) {
            None => default,
            Some(e) => match e.value.parse::<usize>() {
                Ok(v) => v,
                Err(_) => {
                    diags.push(Diagnostic { line: e.line, message: format!("`{}.{key}` is not a nonnegative integer", section) });
                    default
                }
            },
        }
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool, diags: &mut Vec<Diagnostic>) -> bool {
        match self.get(section, key) {
            None => default,
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => {
                    diags.push(Diagnostic { line: e.line, message: format!("`{}.{key}` is not a boolean", section) });
                    default
                }
            },
        }
    }

    pub fn f64_list(&self, section: &str, key: &str, diags: &mut Vec<Diagnostic>) -> Option<Vec<f64>> {
        let e = self.get(section, key)?;
        let mut out = Vec::new();
        for part in e.value.split(',') {
            match part.trim().parse::<f64>() {
                Ok(v) => out.push(v),
                Err(_) => {
                    diags.push(Diagnostic { line: e.line, message: format!("`{}.{key}` has a non-numeric element `{}`", section, part.trim()) });
                    return None;
                }
            }
        }
        Some(out)
    }

    /// Every entry never touched through `get` is an unknown key.
    pub fn unknown_key_diagnostics(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        for (sec, keys) in &self.sections {
            for (key, e) in keys {
                if !e.used.get() {
                    out.push(Diagnostic { line: e.line, message: format!("unknown key `{key}` in section [{sec}]") });
                }
            }
        }
        out
    }
}

pub fn format_diagnostics(diags: &[Diagnostic]) -> String {
    let mut s = String::new();
    for d in diags {
        let _ = writeln!(s, "{d}");
    }
    s
}
