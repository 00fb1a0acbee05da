//! Flat `name=value` text records, used for reports, summaries and config
//! files.
//!
//! Blank lines and lines starting with `#` are ignored on parse. Values run to
//! the end of the line and are not trimmed beyond the surrounding whitespace of
//! the whole entry.

use std::fmt::Display;

/// An ordered list of `name=value` entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvRecord {
    entries: Vec<(String, String)>,
}

impl KvRecord {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, value: impl Display) -> &mut Self {
        self.entries.push((name.to_string(), value.to_string()));
        self
    }

    /// Returns the last value recorded under `name`.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut rec = KvRecord::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected name=value", lineno + 1))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(format!("line {}: empty name", lineno + 1));
            }
            rec.entries
                .push((name.to_string(), value.trim().to_string()));
        }
        Ok(rec)
    }
}

impl std::fmt::Display for KvRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_blanks() {
        let rec = KvRecord::parse("# header\n\nsteps=40\n alpha = 0.5 \n").unwrap();
        assert_eq!(rec.get("steps"), Some("40"));
        assert_eq!(rec.get("alpha"), Some("0.5"));
        assert_eq!(rec.get("missing"), None);
    }

    #[test]
    fn parse_rejects_lines_without_equals() {
        assert!(KvRecord::parse("steps 40").is_err());
        assert!(KvRecord::parse("=40").is_err());
    }

    #[test]
    fn display_then_parse_round_trips() {
        let mut rec = KvRecord::new();
        rec.push("a", 1).push("trace", "0.5,0.25");
        assert_eq!(KvRecord::parse(&rec.to_string()).unwrap(), rec);
    }
}
