//! Flat `key = value` documents with dotted keys.
//!
//! ```text
//! # comment
//! beta = 0.5
//! sigma.kind = power_abs
//! p_grid = -2, -1, 0, 1, 2
//! ```

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("{0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    entries: Vec<Entry>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut doc = Document::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(KvError::Parse {
                    line,
                    message: format!("expected `key = value`, found `{content}`"),
                });
            };
            let key = key.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_')
            {
                return Err(KvError::Parse {
                    line,
                    message: format!("malformed key `{key}`"),
                });
            }
            if doc.get(key).is_some() {
                return Err(KvError::Parse {
                    line,
                    message: format!("duplicate key `{key}`"),
                });
            }
            doc.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(doc)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => {
                let line = self.entries.len() + 1;
                self.entries.push(Entry {
                    key: key.to_string(),
                    value,
                    line,
                })
            }
        }
    }

    pub fn set_list(&mut self, key: &str, values: &[f64]) {
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        self.set(key, joined);
    }

    /// Fails on the first key not accepted by `known`.
    pub fn check_keys<F: Fn(&str) -> bool>(&self, known: F) -> Result<(), KvError> {
        match self.entries.iter().find(|e| !known(&e.key)) {
            Some(e) => Err(KvError::UnknownKey {
                key: e.key.clone(),
                line: e.line,
            }),
            None => Ok(()),
        }
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| KvError::Parse {
                line: e.line,
                message: format!("cannot parse `{}` for key `{key}`", e.value),
            }),
        }
    }

    pub fn required<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.parsed(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, KvError> {
        let Some(e) = self.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| KvError::Parse {
                    line: e.line,
                    message: format!("cannot parse list item `{}` for key `{key}`", s.trim()),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} = {}", e.key, e.value)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let doc = Document::parse("# model\nbeta = 0.5 # half\n\np_grid = -1, 0, 1.5\n").unwrap();
        assert_eq!(doc.parsed::<f64>("beta").unwrap(), Some(0.5));
        assert_eq!(doc.list("p_grid").unwrap(), Some(vec![-1.0, 0.0, 1.5]));
        assert_eq!(doc.get("p_grid").unwrap().line, 4);
    }

    #[test]
    fn parse_error_reports_line() {
        let err = Document::parse("m = 1\nnu 2\n").unwrap_err();
        assert_eq!(
            err,
            KvError::Parse {
                line: 2,
                message: "expected `key = value`, found `nu 2`".into()
            }
        );
        let err = Document::parse("m = 1\nm = 2\n").unwrap_err();
        assert!(matches!(err, KvError::Parse { line: 2, .. }));
    }

    #[test]
    fn bad_number_names_key_and_line() {
        let doc = Document::parse("m = 1\nnu = abc\n").unwrap();
        let err = doc.parsed::<f64>("nu").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("nu"));
    }

    #[test]
    fn unknown_key_is_named() {
        let doc = Document::parse("sigm.kind = constant\n").unwrap();
        let err = doc.check_keys(|k| k == "sigma.kind").unwrap_err();
        assert_eq!(err.to_string(), "unknown key `sigm.kind` (line 1)");
    }

    #[test]
    fn display_round_trips() {
        let mut doc = Document::new();
        doc.set("a", 0.1 + 0.2);
        doc.set_list("b", &[1e-300, -2.5]);
        let back = Document::parse(&doc.to_string()).unwrap();
        assert_eq!(back.parsed::<f64>("a").unwrap(), Some(0.1 + 0.2));
        assert_eq!(back.list("b").unwrap(), Some(vec![1e-300, -2.5]));
    }
}
