use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Crowd rating of a (clip, class) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rating {
    /// Present and predominant: no other sound types.
    PP,
    /// Present but not predominant.
    PNP,
    /// Not present.
    NP,
    /// Unsure.
    U,
}

impl Rating {
    pub fn as_str(self) -> &'static str {
        match self {
            Rating::PP => "PP",
            Rating::PNP => "PNP",
            Rating::NP => "NP",
            Rating::U => "U",
        }
    }
}

impl FromStr for Rating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PP" => Ok(Rating::PP),
            "PNP" => Ok(Rating::PNP),
            "NP" => Ok(Rating::NP),
            "U" => Ok(Rating::U),
            _ => Err(Error::Format(format!(
                "unknown rating `{}` (expected PP, PNP, NP or U)",
                s.trim()
            ))),
        }
    }
}

impl Serialize for Rating {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub clip_id: String,
    pub class_label: String,
    pub ratings: Vec<Rating>,
}

/// True when at least two annotators rated the class PP.
pub fn pp_accept(vote: &VoteRecord) -> bool {
    vote.ratings.iter().filter(|&&r| r == Rating::PP).count() >= 2
}

pub fn parse_votes(text: &str, origin: &str) -> Result<Vec<VoteRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: VoteRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{origin} line {}: {e}", i + 1)))?;
        if v.ratings.is_empty() {
            return Err(Error::Format(format!("{origin} line {}: empty ratings", i + 1)));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_votes(path: impl AsRef<Path>) -> Result<Vec<VoteRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for line in std::io::BufReader::new(file).lines() {
        text.push_str(&line.map_err(|e| Error::io(path, e))?);
        text.push('\n');
    }
    parse_votes(&text, &path.display().to_string())
}

/// Externally predicted perceptual scores for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub pc: f64,
    pub pq: f64,
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["clip_id", "pc", "pq"] {
        return Err(Error::Format(format!(
            "{}: expected header clip_id,pc,pq",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<ScoreRecord>().enumerate() {
        let line = i + 2;
        let s = row.map_err(|e| Error::Format(format!("{} line {line}: {e}", path.display())))?;
        if !(1.0..=10.0).contains(&s.pc) || !(1.0..=10.0).contains(&s.pq) {
            return Err(Error::Format(format!(
                "{} line {line}: scores must lie in [1, 10]",
                path.display()
            )));
        }
        out.push(s);
    }
    Ok(out)
}
