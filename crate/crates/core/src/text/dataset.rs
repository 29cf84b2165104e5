use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, Vocab};
use crate::error::{Error, Result};

/// One tokenized, labelled sample from a source domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
    pub domain: usize,
}

/// Raw labelled text, the unit of the JSONL format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct DomainDataset {
    domain: usize,
    num_classes: usize,
    examples: Vec<Example>,
    by_class: Vec<Vec<usize>>,
}

impl DomainDataset {
    pub fn new(domain: usize, num_classes: usize, examples: Vec<Example>) -> Result<Self> {
        let mut by_class = vec![Vec::new(); num_classes];
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(Error::Data(format!(
                    "domain {domain}: label {} out of range for {num_classes} classes",
                    ex.label
                )));
            }
            if ex.domain != domain {
                return Err(Error::Data(format!(
                    "example {i} tagged with domain {} inside domain {domain}",
                    ex.domain
                )));
            }
            if ex.tokens.is_empty() {
                return Err(Error::Data(format!("domain {domain}: example {i} has no tokens")));
            }
            by_class[ex.label].push(i);
        }
        Ok(DomainDataset {
            domain,
            num_classes,
            examples,
            by_class,
        })
    }

    /// Tokenizes raw records into a dataset.
    pub fn from_records(
        domain: usize,
        num_classes: usize,
        records: &[Record],
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Self> {
        let examples = records
            .iter()
            .map(|r| Example {
                tokens: tokenize(&r.text, vocab, max_len),
                label: r.label,
                domain,
            })
            .collect();
        DomainDataset::new(domain, num_classes, examples)
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_indices(&self, class: usize) -> &[usize] {
        &self.by_class[class]
    }

    /// Full rescan of the per-class index lists.
    pub fn index_consistent(&self) -> bool {
        let mut covered = vec![false; self.examples.len()];
        for (c, idx) in self.by_class.iter().enumerate() {
            for &i in idx {
                if self.examples.get(i).map(|e| e.label) != Some(c) || covered[i] {
                    return false;
                }
                covered[i] = true;
            }
        }
        covered.into_iter().all(|c| c)
    }
}

/// Draws `batch` examples uniformly, without replacement unless the dataset
/// is smaller than the batch.
pub fn sample_batch<R: Rng + ?Sized>(dataset: &DomainDataset, batch: usize, rng: &mut R) -> Result<Vec<Example>> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::Data(format!("cannot sample from empty domain {}", dataset.domain)));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let picks: Vec<usize> = if batch <= n {
        index::sample(rng, n, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.gen_range(0..n)).collect()
    };
    Ok(picks.into_iter().map(|i| dataset.examples[i].clone()).collect())
}

/// Result of reading a JSONL file: valid records in file order plus the
/// number of lines that were skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JsonlRead {
    pub records: Vec<Record>,
    pub malformed: usize,
}

/// Reads `{"text": ..., "label": ...}` lines. Lines that fail to parse, or
/// whose label is not below `num_classes`, are skipped with a warning.
pub fn read_jsonl(path: &Path, num_classes: usize) -> Result<JsonlRead> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = JsonlRead::default();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(line) {
            Ok(r) if r.label < num_classes => out.records.push(r),
            Ok(r) => {
                log::warn!("{}:{}: label {} out of range", path.display(), lineno + 1, r.label);
                out.malformed += 1;
            }
            Err(e) => {
                log::warn!("{}:{}: skipping malformed line: {e}", path.display(), lineno + 1);
                out.malformed += 1;
            }
        }
    }
    if out.records.is_empty() {
        log::warn!("{}: no usable records", path.display());
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[Record]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads and tokenizes one domain file. Returns the dataset and the count of
/// malformed lines.
pub fn load_jsonl(
    path: &Path,
    vocab: &Vocab,
    domain: usize,
    num_classes: usize,
    max_len: usize,
) -> Result<(DomainDataset, usize)> {
    let read = read_jsonl(path, num_classes)?;
    let ds = DomainDataset::from_records(domain, num_classes, &read.records, vocab, max_len)?;
    Ok((ds, read.malformed))
}
