//! Labeled token sequences and the line-delimited on-disk format:
//! `label<TAB>space-separated token ids`, one example per line, with a
//! sidecar vocabulary file holding one token string per line.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub vocab: usize,
    pub classes: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.tokens.is_empty() {
                return Err(Error::invalid("Dataset", format!("example {i} has no tokens")));
            }
            if ex.label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: ex.label,
                    classes: self.classes,
                });
            }
            if let Some(pos) = ex.tokens.iter().position(|&t| t >= self.vocab) {
                return Err(Error::OutOfVocab {
                    position: pos,
                    token: ex.tokens[pos],
                    vocab: self.vocab,
                });
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let _ = write!(out, "{}\t", ex.label);
            for (i, t) in ex.tokens.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{t}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, vocab: usize, classes: usize, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, tokens) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 1, "expected `label<TAB>tokens`".into()))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad label: {e}")))?;
            let tokens = tokens
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(i + 1, format!("bad token id: {e}")))?;
            examples.push(Example { tokens, label });
        }
        let ds = Dataset {
            vocab,
            classes,
            examples,
        };
        ds.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(ds)
    }
}

/// Train / validation / test partition of one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "valid.tsv", "test.tsv"];

impl Splits {
    pub fn vocab(&self) -> usize {
        self.train.vocab
    }

    pub fn classes(&self) -> usize {
        self.train.classes
    }

    /// Writes the three split files and a placeholder vocabulary
    /// (`tok0`, `tok1`, …) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vocab: String = (0..self.vocab()).map(|i| format!("tok{i}\n")).collect();
        crate::harness::write_atomic(&dir.join(VOCAB_FILE), vocab.as_bytes())?;
        for (name, ds) in SPLIT_FILES.iter().zip([&self.train, &self.validation, &self.test]) {
            crate::harness::write_atomic(&dir.join(name), ds.to_tsv().as_bytes())?;
        }
        Ok(())
    }

    /// Loads a dataset directory. The vocabulary size is the line count of
    /// the sidecar file; the class count is `classes` if given, else one more
    /// than the largest label seen.
    pub fn load(dir: &Path, classes: Option<usize>) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let vocab = read(VOCAB_FILE)?.lines().filter(|l| !l.is_empty()).count();
        let texts = SPLIT_FILES.iter().map(|n| read(n)).collect::<Result<Vec<_>>>()?;
        let classes = match classes {
            Some(c) => c,
            None => {
                let max = texts
                    .iter()
                    .flat_map(|t| t.lines())
                    .filter_map(|l| l.split_once('\t'))
                    .filter_map(|(l, _)| l.trim().parse::<usize>().ok())
                    .max()
                    .unwrap_or(0);
                max + 1
            }
        };
        let mut sets = SPLIT_FILES
            .iter()
            .zip(&texts)
            .map(|(name, text)| Dataset::from_tsv(text, vocab, classes, &dir.join(name)));
        let (train, validation, test) = (
            sets.next().expect("three splits")?,
            sets.next().expect("three splits")?,
            sets.next().expect("three splits")?,
        );
        if train.is_empty() {
            return Err(Error::invalid("Splits::load", "training split is empty"));
        }
        Ok(Splits {
            train,
            validation,
            test,
        })
    }
}
