use rand::Rng;

use crate::error::{Error, Result};
use crate::text::{sample_batch, word_repetition, DomainDataset};

/// Picks one held-out domain uniformly; the rest, in index order, are the
/// meta-train domains.
pub fn split_domains<R: Rng + ?Sized>(num_domains: usize, rng: &mut R) -> Result<(Vec<usize>, usize)> {
    if num_domains < 2 {
        return Err(Error::Config(format!(
            "meta-learning needs at least 2 source domains, got {num_domains}"
        )));
    }
    let test = rng.gen_range(0..num_domains);
    let train = (0..num_domains).filter(|&d| d != test).collect();
    Ok((train, test))
}

/// One sampled batch of a domain, with augmented twins when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainBatch {
    pub domain: usize,
    pub tokens: Vec<Vec<usize>>,
    /// Word-repetition twins, aligned with `tokens`; empty when the jury is off.
    pub twins: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl DomainBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn sample_domain_batch<R: Rng + ?Sized>(
    dataset: &DomainDataset,
    domain: usize,
    batch_size: usize,
    repetition_rate: Option<f64>,
    rng: &mut R,
) -> Result<DomainBatch> {
    let examples = sample_batch(dataset, batch_size, rng)?;
    let tokens: Vec<Vec<usize>> = examples.iter().map(|e| e.tokens.clone()).collect();
    let twins = match repetition_rate {
        Some(r) => tokens.iter().map(|t| word_repetition(t, r, rng)).collect(),
        None => Vec::new(),
    };
    Ok(DomainBatch {
        domain,
        tokens,
        twins,
        labels: examples.iter().map(|e| e.label).collect(),
    })
}

/// One batch per source domain, sampled in domain order.
pub fn sample_all<R: Rng + ?Sized>(
    datasets: &[DomainDataset],
    batch_size: usize,
    repetition_rate: Option<f64>,
    rng: &mut R,
) -> Result<Vec<DomainBatch>> {
    datasets
        .iter()
        .enumerate()
        .map(|(d, ds)| sample_domain_batch(ds, d, batch_size, repetition_rate, rng))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub meta_train_domains: Vec<usize>,
    pub meta_test_domain: usize,
    /// Indexed by domain.
    pub batches: Vec<DomainBatch>,
}

impl Episode {
    pub fn sample<R: Rng + ?Sized>(
        datasets: &[DomainDataset],
        batch_size: usize,
        repetition_rate: Option<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let (meta_train_domains, meta_test_domain) = split_domains(datasets.len(), rng)?;
        let batches = sample_all(datasets, batch_size, repetition_rate, rng)?;
        Ok(Episode {
            meta_train_domains,
            meta_test_domain,
            batches,
        })
    }

    pub fn train_batches(&self) -> Vec<&DomainBatch> {
        self.meta_train_domains.iter().map(|&d| &self.batches[d]).collect()
    }

    pub fn test_batch(&self) -> &DomainBatch {
        &self.batches[self.meta_test_domain]
    }
}
