//! Per-domain class-prototype memory.
//!
//! Each source domain keeps one slot per class. Slots start at the mean
//! feature of their (domain, class) cell, move towards the mean feature of
//! the class in each batch by momentum, and act as fixed class anchors in a
//! temperature-scaled softmax loss. Slots never receive gradient.

use crate::autodiff::{l2_norm, log_sum_exp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{encode, EncoderParams};
use crate::par::{self, Exec};
use crate::text::DomainDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    /// One `num_classes × feature_dim` matrix per domain.
    slots: Vec<Tensor>,
    pub momentum: f64,
    pub temperature: f64,
    /// Rescale updated slots to unit norm.
    pub renormalize: bool,
}

impl MemoryBank {
    pub fn from_slots(slots: Vec<Tensor>, momentum: f64, temperature: f64, renormalize: bool) -> Result<Self> {
        let first = slots
            .first()
            .ok_or_else(|| Error::Config("memory bank needs at least one domain".into()))?;
        if slots.iter().any(|s| s.rank() != 2 || s.shape() != first.shape()) {
            return Err(Error::Config("memory slots must share one (classes × dim) shape".into()));
        }
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Config(format!("memory momentum must lie in [0, 1], got {momentum}")));
        }
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        if slots.iter().any(|s| !s.all_finite()) {
            return Err(Error::NonFinite("memory slot".into()));
        }
        Ok(MemoryBank {
            slots,
            momentum,
            temperature,
            renormalize,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.slots.len()
    }

    pub fn num_classes(&self) -> usize {
        self.slots[0].rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.slots[0].cols()
    }

    pub fn slot(&self, domain: usize, class: usize) -> &[f64] {
        self.slots[domain].row(class)
    }

    pub fn domain_slots(&self, domain: usize) -> &Tensor {
        &self.slots[domain]
    }

    pub fn all_slots(&self) -> &[Tensor] {
        &self.slots
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        if domain >= self.slots.len() {
            return Err(Error::IndexOutOfRange {
                op: "memory domain",
                index: domain,
                bound: self.slots.len(),
            });
        }
        Ok(())
    }

    /// Momentum update of `domain`'s slots from one batch:
    /// `M[c] ← m·M[c] + (1−m)·mean(features of class c)`. Classes absent from
    /// the batch keep their slot.
    pub fn update(&mut self, features: &Tensor, labels: &[usize], domain: usize) -> Result<()> {
        self.check_domain(domain)?;
        let (nc, dim) = (self.num_classes(), self.feature_dim());
        if features.rows() != labels.len() || features.cols() != dim {
            return Err(Error::ShapeMismatch {
                op: "memory update",
                left: features.shape().to_vec(),
                right: vec![labels.len(), dim],
            });
        }
        let mut sums = vec![vec![0.0; dim]; nc];
        let mut counts = vec![0usize; nc];
        for (i, &y) in labels.iter().enumerate() {
            if y >= nc {
                return Err(Error::IndexOutOfRange {
                    op: "memory label",
                    index: y,
                    bound: nc,
                });
            }
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        let m = self.momentum;
        let bank = &mut self.slots[domain];
        for c in 0..nc {
            if counts[c] == 0 {
                continue;
            }
            let n = counts[c] as f64;
            let slot = bank.row_mut(c);
            for (s, sum) in slot.iter_mut().zip(&sums[c]) {
                *s = m * *s + (1.0 - m) * (sum / n);
            }
            if self.renormalize {
                let norm = l2_norm(slot);
                if norm > crate::autodiff::NORM_EPS {
                    slot.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Ok(())
    }

    /// Records the prototype loss for a batch from `domain`: softmax over
    /// `slotᵀ·feature / τ` across classes, cross-entropy against the label.
    pub fn loss_on(&self, tape: &mut Tape, features: Var, labels: &[usize], domain: usize) -> Result<Var> {
        self.check_domain(domain)?;
        let slots_t = tape.constant(self.slots[domain].transpose());
        let sims = tape.matmul(features, slots_t)?;
        let logits = tape.scale(sims, 1.0 / self.temperature);
        tape.cross_entropy(logits, labels)
    }

    /// Value of [`MemoryBank::loss_on`] without a tape.
    pub fn similarity_loss(&self, features: &Tensor, labels: &[usize], domain: usize) -> Result<f64> {
        self.check_domain(domain)?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let logits: Vec<f64> = (0..self.num_classes())
                .map(|c| crate::autodiff::dot(self.slot(domain, c), features.row(i)) / self.temperature)
                .collect();
            total += log_sum_exp(&logits) - logits[y];
        }
        Ok(total / labels.len() as f64)
    }

    pub fn domain_checksum(&self, domain: usize) -> u64 {
        self.slots[domain].checksum()
    }
}

/// Mean encoder feature of every (domain, class) cell, computed in chunks of
/// `chunk` examples. Datasets must be given in domain order.
pub fn init_slots(
    encoder: &EncoderParams,
    datasets: &[DomainDataset],
    num_classes: usize,
    chunk: usize,
    exec: Exec,
) -> Result<Vec<Tensor>> {
    let dim = encoder.feature_dim();
    let mut out = Vec::with_capacity(datasets.len());
    for ds in datasets {
        for c in 0..num_classes {
            if ds.class_indices(c).is_empty() {
                return Err(Error::Config(format!(
                    "memory init: domain {} has no examples of class {c}",
                    ds.domain()
                )));
            }
        }
        let chunks: Vec<&[crate::text::Example]> = ds.examples().chunks(chunk.max(1)).collect();
        let encoded = par::try_map(exec, &chunks, |ch| {
            let toks: Vec<Vec<usize>> = ch.iter().map(|e| e.tokens.clone()).collect();
            encode(encoder, &toks)
        })?;
        let mut sums = Tensor::zeros(&[num_classes, dim]);
        let mut counts = vec![0usize; num_classes];
        for (ch, feats) in chunks.iter().zip(&encoded) {
            for (i, ex) in ch.iter().enumerate() {
                counts[ex.label] += 1;
                for (s, v) in sums.row_mut(ex.label).iter_mut().zip(feats.row(i)) {
                    *s += v;
                }
            }
        }
        for (c, &n) in counts.iter().enumerate() {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
        out.push(sums);
    }
    Ok(out)
}
