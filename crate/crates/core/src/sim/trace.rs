//! Event trace: timestamped lines plus a running digest.

use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default)]
pub struct Trace {
    lines: Vec<String>,
}

impl Trace {
    pub fn push(&mut self, time: u64, body: impl Into<String>) {
        self.lines.push(format!("[{time:08}] {}", body.into()));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.text().as_bytes()))
    }
}

/// Strip the `[time] ` prefix.
pub fn body(line: &str) -> &str {
    line.split_once("] ").map_or(line, |(_, rest)| rest)
}

/// `key=value` lookup in a trace line body.
pub fn field<'a>(body: &'a str, key: &str) -> Option<&'a str> {
    body.split_whitespace()
        .find_map(|p| p.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}
