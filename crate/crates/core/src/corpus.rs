//! Labeled corpora, image banks and the JSONL files that carry them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::RawVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "non-visual")]
    NonVisual,
    #[serde(rename = "visual")]
    Visual,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::NonVisual, Label::Visual];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Visual => "visual",
            Label::NonVisual => "non-visual",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "visual" => Ok(Label::Visual),
            "non-visual" => Ok(Label::NonVisual),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// A sentence with its class and, for visual sentences, the paired image.
/// Non-visual sentences carry no image id; they are matched with the NULL
/// image during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
    pub image_id: Option<String>,
}

impl LabeledExample {
    pub fn visual(text: impl Into<String>, image_id: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: Label::Visual,
            image_id: Some(image_id.into()),
        }
    }

    pub fn non_visual(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label: Label::NonVisual,
            image_id: None,
        }
    }

    /// `label = visual` iff an image id is present.
    pub fn is_consistent(&self) -> bool {
        (self.label == Label::Visual) == self.image_id.is_some()
    }
}

/// Image id to feature vector.
pub type ImageBank = BTreeMap<String, RawVector>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub features: RawVector,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::parse(path.display().to_string(), 0, e))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead, name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::parse(name, i + 1, e))?;
        out.push(value);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledExample>> {
    let corpus: Vec<LabeledExample> = read_jsonl(path)?;
    for (i, ex) in corpus.iter().enumerate() {
        if !ex.is_consistent() {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                "visual examples need an image_id, non-visual examples must have null",
            ));
        }
    }
    Ok(corpus)
}

pub fn read_bank(path: &Path) -> Result<ImageBank> {
    let records: Vec<ImageRecord> = read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| (r.image_id, r.features))
        .collect())
}

pub fn bank_to_jsonl(bank: &ImageBank) -> Result<String> {
    let records: Vec<ImageRecord> = bank
        .iter()
        .map(|(id, f)| ImageRecord {
            image_id: id.clone(),
            features: f.clone(),
        })
        .collect();
    to_jsonl(&records)
}
