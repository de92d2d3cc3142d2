//! Helpers for the line-oriented checkpoint formats.

use std::io::BufRead;

use crate::error::{Error, Result};

/// 17 significant digits: enough for any f64 to round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn join_f64(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(",")
}

/// Line source that remembers 1-based line numbers for error messages and
/// skips blank lines and `#` comments.
pub struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
    peeked: Option<String>,
}

impl<R: BufRead> Lines<R> {
    pub fn new(reader: R) -> Self {
        Self {
            inner: reader.lines(),
            line_no: 0,
            peeked: None,
        }
    }

    pub fn line_no(&self) -> usize {
        self.line_no
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            line: self.line_no,
            msg: msg.into(),
        }
    }

    pub fn next_line(&mut self) -> Result<Option<String>> {
        if let Some(line) = self.peeked.take() {
            return Ok(Some(line));
        }
        for line in self.inner.by_ref() {
            let line = line?;
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok(Some(trimmed.to_string()));
        }
        Ok(None)
    }

    pub fn expect_line(&mut self, what: &str) -> Result<String> {
        self.next_line()?
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    pub fn peek(&mut self) -> Result<Option<&str>> {
        if self.peeked.is_none() {
            self.peeked = self.next_line()?;
        }
        Ok(self.peeked.as_deref())
    }

    pub fn parse_f64_list(&self, field: &str) -> Result<Vec<f64>> {
        if field.is_empty() {
            return Ok(Vec::new());
        }
        field
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| self.err(format!("bad number '{s}': {e}")))
            })
            .collect()
    }

    pub fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from '{s}'")))
    }
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}
