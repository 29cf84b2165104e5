use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{generate_synthetic_corpus, read_jsonl, write_jsonl, CorpusSpec, DomainDataset, Record, Vocab};

use super::config::{DataConfig, RunConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub spec: CorpusSpec,
    pub num_classes: usize,
    /// File names relative to the manifest's directory, in domain order.
    pub files: Vec<String>,
    pub counts: Vec<usize>,
}

pub fn domain_file_name(domain: usize) -> String {
    format!("domain_{domain}.jsonl")
}

/// Writes one JSONL file per synthetic domain plus the manifest into
/// `data.dir`. Refuses to replace existing files unless `data.overwrite`.
pub fn cmd_generate_data(cfg: &RunConfig) -> Result<Manifest> {
    let corpus = generate_synthetic_corpus(&cfg.corpus, cfg.data.corpus_seed)?;
    let dir = &cfg.data.dir;
    let files: Vec<String> = (0..corpus.domains.len()).map(domain_file_name).collect();
    if !cfg.data.overwrite {
        for name in files.iter().map(String::as_str).chain([MANIFEST]) {
            let p = dir.join(name);
            if p.exists() {
                return Err(Error::Config(format!(
                    "{} already exists; set data.overwrite = true to replace it",
                    p.display()
                )));
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, records) in files.iter().zip(&corpus.domains) {
        write_jsonl(&dir.join(name), records)?;
    }
    let manifest = Manifest {
        seed: corpus.seed,
        spec: corpus.spec.clone(),
        num_classes: corpus.spec.classes,
        files,
        counts: corpus.domains.iter().map(Vec::len).collect(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {} domains to {}", manifest.files.len(), dir.display());
    Ok(manifest)
}

/// Domain files and class count, from explicit config or the manifest.
pub fn resolve_files(data: &DataConfig) -> Result<(Vec<PathBuf>, usize)> {
    if !data.files.is_empty() {
        let nc = data
            .num_classes
            .ok_or_else(|| Error::Config("data.num_classes is required with explicit data.files".into()))?;
        return Ok((data.files.clone(), nc));
    }
    let path = data.dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if let Some(nc) = data.num_classes {
        if nc != m.num_classes {
            return Err(Error::Config(format!(
                "data.num_classes = {nc} but the manifest says {}",
                m.num_classes
            )));
        }
    }
    Ok((m.files.iter().map(|f| data.dir.join(f)).collect(), m.num_classes))
}

/// Raw records of every configured domain.
pub fn read_domains(data: &DataConfig) -> Result<(Vec<Vec<Record>>, usize)> {
    let (files, nc) = resolve_files(data)?;
    let mut out = Vec::with_capacity(files.len());
    for f in &files {
        let read = read_jsonl(f, nc)?;
        if read.malformed > 0 {
            log::warn!("{}: skipped {} malformed lines", f.display(), read.malformed);
        }
        if read.records.is_empty() {
            return Err(Error::Data(format!("{} has no usable records", f.display())));
        }
        out.push(read.records);
    }
    Ok((out, nc))
}

/// A train/held-out partition of the source domains, tokenized with a
/// vocabulary built from the training domains only.
#[derive(Clone, Debug)]
pub struct Split {
    pub vocab: Vocab,
    /// Original indices of the training domains.
    pub train_ids: Vec<usize>,
    /// Training datasets, re-indexed `0..train_ids.len()`.
    pub train: Vec<DomainDataset>,
    pub holdout: Option<(usize, DomainDataset)>,
}

pub fn build_split(
    records: &[Vec<Record>],
    num_classes: usize,
    holdout: Option<usize>,
    max_len: usize,
) -> Result<Split> {
    if let Some(h) = holdout {
        if h >= records.len() {
            return Err(Error::Config(format!(
                "holdout domain {h} out of range for {} domains",
                records.len()
            )));
        }
    }
    let train_ids: Vec<usize> = (0..records.len()).filter(|&d| Some(d) != holdout).collect();
    let vocab = Vocab::build(train_ids.iter().flat_map(|&d| records[d].iter().map(|r| r.text.as_str())));
    let train = train_ids
        .iter()
        .enumerate()
        .map(|(i, &d)| DomainDataset::from_records(i, num_classes, &records[d], &vocab, max_len))
        .collect::<Result<Vec<_>>>()?;
    let holdout = match holdout {
        Some(h) => Some((h, DomainDataset::from_records(h, num_classes, &records[h], &vocab, max_len)?)),
        None => None,
    };
    Ok(Split {
        vocab,
        train_ids,
        train,
        holdout,
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
