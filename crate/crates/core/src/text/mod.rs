//! Vocabulary, subword tokenization, and packing of a (document, question,
//! option) triple into `[CLS] A [SEP] B [SEP]` form.

mod pack;
mod vocab;

pub use pack::{pack, PackedSequence, SideAlignment};
pub use vocab::{train_bpe, Token, Vocab, CLS, CONTINUATION, PAD, SEP, UNK};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("option index {index} out of range for {count} options")]
    OptionIndex { index: usize, count: usize },
    #[error("option needs {tokens} tokens but only {budget} fit in max_seq_len")]
    OptionTooLong { tokens: usize, budget: usize },
    #[error("invalid example {id}: {reason}")]
    InvalidExample { id: String, reason: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab file: {0}")]
    BadVocab(String),
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One multi-choice item: a document, an optional question and `N >= 2`
/// candidate options, one of which (`label`) is correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub document: String,
    pub question: Option<String>,
    pub options: Vec<String>,
    pub label: usize,
}

impl Example {
    pub fn validate(&self) -> Result<(), TextError> {
        let fail = |reason: &str| TextError::InvalidExample { id: self.id.clone(), reason: reason.into() };
        if self.options.len() < 2 {
            return Err(fail("needs at least two options"));
        }
        if self.label >= self.options.len() {
            return Err(fail("label out of range"));
        }
        Ok(())
    }

    /// Sentence A before normalization: the document, with the question
    /// appended when present.
    pub fn side_a_text(&self) -> String {
        match &self.question {
            Some(q) => format!("{} {}", self.document, q),
            None => self.document.clone(),
        }
    }
}

/// Reads a dataset with one JSON object per line; blank lines are skipped.
pub fn read_dataset(path: &Path) -> Result<Vec<Example>, TextError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|source| TextError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<(), TextError> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Splits normalized text into words: whitespace-separated runs, with each
/// ASCII punctuation character standing alone. Returns byte ranges.
pub fn pretokenize(normalized: &str) -> Vec<(usize, usize)> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in normalized.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
        } else if ch.is_ascii_punctuation() {
            if let Some(s) = start.take() {
                words.push((s, i));
            }
            words.push((i, i + ch.len_utf8()));
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push((s, normalized.len()));
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_lowercases_and_collapses() {
        assert_eq!(normalize("  The  Light\tBulb\n"), "the light bulb");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn pretokenize_splits_punctuation() {
        let s = "hot, isn't it.";
        let words: Vec<&str> = pretokenize(s).into_iter().map(|(a, b)| &s[a..b]).collect();
        assert_eq!(words, ["hot", ",", "isn", "'", "t", "it", "."]);
    }

    #[test]
    fn example_validation() {
        let mut ex = Example {
            id: "x".into(),
            document: "d".into(),
            question: None,
            options: vec!["a".into()],
            label: 0,
        };
        assert!(ex.validate().is_err());
        ex.options.push("b".into());
        assert!(ex.validate().is_ok());
        ex.label = 2;
        assert!(ex.validate().is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let exs = vec![
            Example { id: "1".into(), document: "a b".into(), question: Some("q?".into()), options: vec!["x".into(), "y".into()], label: 1 },
            Example { id: "2".into(), document: "c".into(), question: None, options: vec!["u".into(), "v".into(), "w".into()], label: 0 },
        ];
        write_dataset(&path, &exs).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), exs);
    }

    #[test]
    fn dataset_rejects_bad_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, r#"{"id":"1","document":"a","question":null,"options":["x","y"],"label":5}"#).unwrap();
        assert!(matches!(read_dataset(&path), Err(TextError::InvalidExample { .. })));
    }
}
