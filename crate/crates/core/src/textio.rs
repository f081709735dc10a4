//! Line-oriented text container shared by cohort, observation-set and
//! checkpoint files.
//!
//! A file is a version line, a body of whitespace-separated records, an
//! optional clearly marked section, and a trailing SHA-256 line over that
//! section. Floats are written with Rust's shortest round-trip formatting
//! unless a fixed precision is requested.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn join_f64(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

pub fn join_fixed(out: &mut String, values: &[f64], decimals: usize) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.decimals$}");
    }
}

/// Cursor over the lines of a text file, tracking 1-based line numbers for
/// error messages.
pub struct Lines<'a> {
    path: PathBuf,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    pub fn new(path: &Path, text: &'a str) -> Self {
        Lines {
            path: path.to_path_buf(),
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Line number of the most recently returned line.
    pub fn line_no(&self) -> usize {
        self.pos
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(&self.path, self.pos, msg)
    }

    pub fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::parse(&self.path, self.pos + 1, "unexpected end of file"))?;
        self.pos += 1;
        Ok(line)
    }

    /// Next line split into fields; the first field must equal `tag`.
    pub fn expect_record(&mut self, tag: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first() {
            Some(&t) if t == tag => Ok(fields[1..].to_vec()),
            other => Err(self.err(format!(
                "expected `{tag}` record, found `{}`",
                other.unwrap_or(&"")
            ))),
        }
    }

    pub fn expect_version(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?.trim();
        if line != expected {
            return Err(Error::Version {
                path: self.path.clone(),
                expected: expected.to_string(),
                found: line.to_string(),
            });
        }
        Ok(())
    }

    pub fn parse_f64(&self, s: &str, what: &str) -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| self.err(format!("bad {what} `{s}`")))
    }

    pub fn parse_usize(&self, s: &str, what: &str) -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| self.err(format!("bad {what} `{s}`")))
    }

    pub fn parse_list(&self, s: &str, what: &str) -> Result<Vec<f64>> {
        s.split(',').map(|v| self.parse_f64(v, what)).collect()
    }

    pub fn field<'b>(&self, fields: &'b [&'a str], i: usize, what: &str) -> Result<&'a str> {
        fields
            .get(i)
            .copied()
            .ok_or_else(|| self.err(format!("missing field {what}")))
    }
}
