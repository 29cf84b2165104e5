#![allow(dead_code)]

pub mod oracles;
pub mod reference;

use metadg::engine::TrainConfig;
use metadg::text::{generate_synthetic_corpus, CorpusSpec, DomainDataset, SyntheticCorpus, Vocab};

pub fn corpus(seed: u64) -> SyntheticCorpus {
    generate_synthetic_corpus(&CorpusSpec::default(), seed).unwrap()
}

/// Datasets of `domains`, re-indexed from 0, with a vocabulary over them.
pub fn train_domains(c: &SyntheticCorpus, domains: &[usize], max_len: usize) -> (Vocab, Vec<DomainDataset>) {
    let vocab = c.vocab_for(domains);
    let ds = domains
        .iter()
        .enumerate()
        .map(|(i, &d)| DomainDataset::from_records(i, c.spec.classes, &c.domains[d], &vocab, max_len).unwrap())
        .collect();
    (vocab, ds)
}

/// Small, fast training setup with learning rates that actually move.
pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 2,
        inner_lr: 0.2,
        outer_lr: 0.01,
        warmup_start_lr: 0.001,
        emb_dim: 16,
        hidden_dim: 16,
        feature_dim: 8,
        queue_size: 16,
        seed,
        ..TrainConfig::default()
    }
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for i in k..=n {
        let mut c = 1.0;
        for j in 0..i {
            c = c * (n - j) as f64 / (j + 1) as f64;
        }
        p += c;
    }
    p / 2f64.powi(n as i32)
}
