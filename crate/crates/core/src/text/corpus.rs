//! Synthetic multi-domain corpus with domain-dependent word polarity.
//!
//! Every sentence mixes three kinds of tokens:
//! * shared tokens `c{class}s{k}`, indicative of the class in every domain
//!   (with `shared_noise` probability of being drawn from a random class);
//! * domain tokens `d{domain}t{k}`, independent of the class;
//! * flip tokens `f{k}`, which indicate a class in every domain but whose
//!   polarity is inverted in exactly one domain (`k mod domains`).
//!
//! A model that leans on flip tokens learns a polarity that is right for most
//! source domains and wrong for the domain where the token flips, which is
//! what makes held-out domains harder than in-domain data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DomainDataset, Record};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub domains: usize,
    pub classes: usize,
    /// Examples per (domain, class) cell.
    pub per_class: usize,
    /// Shared tokens per class.
    pub shared_vocab: usize,
    /// Class-neutral tokens per domain.
    pub domain_vocab: usize,
    pub flip_vocab: usize,
    pub sentence_len: usize,
    /// Probability that a position holds a shared token.
    pub shared_rate: f64,
    /// Probability that a position holds a flip token.
    pub flip_rate: f64,
    /// Probability that a shared token is drawn from a uniformly random class.
    pub shared_noise: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            domains: 4,
            classes: 2,
            per_class: 200,
            shared_vocab: 8,
            domain_vocab: 20,
            flip_vocab: 16,
            sentence_len: 12,
            shared_rate: 0.25,
            flip_rate: 0.5,
            shared_noise: 0.3,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corpus: {m}")));
        if self.domains < 2 {
            return bad("need at least 2 domains");
        }
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.per_class == 0 || self.sentence_len == 0 {
            return bad("per_class and sentence_len must be positive");
        }
        if self.shared_vocab == 0 {
            return bad("shared_vocab must be positive");
        }
        let rates = [self.shared_rate, self.flip_rate, self.shared_noise];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.shared_rate + self.flip_rate > 1.0 {
            return bad("rates must lie in [0, 1] and shared_rate + flip_rate <= 1");
        }
        if self.shared_rate + self.flip_rate < 1.0 && self.domain_vocab == 0 {
            return bad("domain_vocab must be positive when domain tokens can be drawn");
        }
        if self.flip_rate > 0.0 && self.flip_vocab < self.classes * self.domains {
            return bad("flip_vocab must cover every (class, domain) polarity group");
        }
        Ok(())
    }

    /// Class indicated by flip token `k` inside `domain`. Token `k` flips in
    /// domain `k mod domains`; its usual class is `(k div domains) mod classes`.
    pub fn flip_polarity(&self, k: usize, domain: usize) -> usize {
        let base = (k / self.domains) % self.classes;
        if k % self.domains == domain {
            (base + 1) % self.classes
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: CorpusSpec,
    pub seed: u64,
    /// Records per domain, grouped by class in class order.
    pub domains: Vec<Vec<Record>>,
}

pub fn generate_synthetic_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut domains = Vec::with_capacity(spec.domains);
    for d in 0..spec.domains {
        // flip tokens grouped by the class they indicate in this domain
        let mut flips_for = vec![Vec::new(); spec.classes];
        for k in 0..spec.flip_vocab {
            flips_for[spec.flip_polarity(k, d)].push(k);
        }
        let mut records = Vec::with_capacity(spec.classes * spec.per_class);
        for (c, pool) in flips_for.iter().enumerate() {
            for _ in 0..spec.per_class {
                let words: Vec<String> = (0..spec.sentence_len)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        if u < spec.shared_rate {
                            let cls = if rng.gen::<f64>() < spec.shared_noise {
                                rng.gen_range(0..spec.classes)
                            } else {
                                c
                            };
                            format!("c{cls}s{}", rng.gen_range(0..spec.shared_vocab))
                        } else if u < spec.shared_rate + spec.flip_rate {
                            format!("f{}", pool[rng.gen_range(0..pool.len())])
                        } else {
                            format!("d{d}t{}", rng.gen_range(0..spec.domain_vocab))
                        }
                    })
                    .collect();
                records.push(Record {
                    text: words.join(" "),
                    label: c,
                });
            }
        }
        domains.push(records);
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        seed,
        domains,
    })
}

impl SyntheticCorpus {
    /// Vocabulary over the given domains only.
    pub fn vocab_for(&self, domains: &[usize]) -> Vocab {
        Vocab::build(domains.iter().flat_map(|&d| self.domains[d].iter().map(|r| r.text.as_str())))
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab_for(&(0..self.domains.len()).collect::<Vec<_>>())
    }

    pub fn datasets(&self, vocab: &Vocab, max_len: usize) -> Result<Vec<DomainDataset>> {
        self.domains
            .iter()
            .enumerate()
            .map(|(d, recs)| DomainDataset::from_records(d, self.spec.classes, recs, vocab, max_len))
            .collect()
    }
}
