use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// Unordered pairs of class labels too semantically close to be mixed
/// (e.g. `bell|cowbell`). Membership is symmetric by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Blocklist {
    pairs: BTreeSet<(String, String)>,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Blocklist {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        self.pairs.insert(ordered(a, b));
    }

    pub fn contains(&self, a: &str, b: &str) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    /// True when `candidate` may be used as interference for `target`.
    pub fn allows(&self, target: &str, candidate: &str) -> bool {
        target != candidate && !self.contains(target, candidate)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Parses `classA|classB` lines; `#` starts a comment, blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Blocklist::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('|').map(str::trim);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => out.insert(a, b),
                _ => {
                    return Err(Error::Format(format!(
                        "blocklist line {}: expected `classA|classB`, got `{raw}`",
                        i + 1
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn to_text(&self) -> String {
        self.pairs().map(|(a, b)| format!("{a}|{b}\n")).collect()
    }
}
