//! Per-class FIFO feature queues and the augmentation-consistency loss.
//!
//! Each class owns a ring buffer of key-encoder features, independent of the
//! domain they came from. A query feature and the key feature of its
//! augmented twin are both scored against the queue of the sample's class;
//! the loss is the cross-entropy from the key-side distribution (a constant
//! target) to the query-side distribution.

use rand::Rng;

use crate::autodiff::{dot, l2_norm, softmax, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct JuryQueues {
    /// One `capacity × dim` ring buffer per class.
    queues: Vec<Tensor>,
    /// Per class, the slot holding the oldest entry (the next one overwritten).
    cursors: Vec<usize>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl JuryQueues {
    /// Fills every queue with independent random unit vectors.
    pub fn init<R: Rng + ?Sized>(num_classes: usize, capacity: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if capacity == 0 || num_classes == 0 || dim == 0 {
            return Err(Error::Config("queue size, class count and dimension must be positive".into()));
        }
        let mut queues = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let mut q = Tensor::zeros(&[capacity, dim]);
            for j in 0..capacity {
                let row = q.row_mut(j);
                loop {
                    row.iter_mut().for_each(|v| *v = gaussian(rng));
                    let n = l2_norm(row);
                    if n > 1e-6 {
                        row.iter_mut().for_each(|v| *v /= n);
                        break;
                    }
                }
            }
            queues.push(q);
        }
        Ok(JuryQueues {
            queues,
            cursors: vec![0; num_classes],
        })
    }

    pub fn from_parts(queues: Vec<Tensor>, cursors: Vec<usize>) -> Result<Self> {
        let first = queues
            .first()
            .ok_or_else(|| Error::Checkpoint("no jury queues".into()))?;
        if queues.len() != cursors.len()
            || queues.iter().any(|q| q.rank() != 2 || q.shape() != first.shape())
            || cursors.iter().any(|&c| c >= first.rows())
        {
            return Err(Error::Checkpoint("inconsistent jury queue layout".into()));
        }
        Ok(JuryQueues { queues, cursors })
    }

    pub fn num_classes(&self) -> usize {
        self.queues.len()
    }

    pub fn capacity(&self) -> usize {
        self.queues[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.queues[0].cols()
    }

    /// Ring-buffer storage of one class (rows in slot order, not age order).
    pub fn storage(&self, class: usize) -> &Tensor {
        &self.queues[class]
    }

    pub fn cursors(&self) -> &[usize] {
        &self.cursors
    }

    /// Entries of one class from oldest to newest.
    pub fn ordered(&self, class: usize) -> Vec<&[f64]> {
        let q = &self.queues[class];
        let n = q.rows();
        (0..n).map(|j| q.row((self.cursors[class] + j) % n)).collect()
    }

    /// Appends each feature row to its label's queue in batch order,
    /// evicting the oldest entry. Labels are validated before any write.
    pub fn enqueue(&mut self, features: &Tensor, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Ok(());
        }
        if features.rows() != labels.len() || features.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "enqueue",
                left: features.shape().to_vec(),
                right: vec![labels.len(), self.dim()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.queues.len()) {
            return Err(Error::IndexOutOfRange {
                op: "enqueue label",
                index: bad,
                bound: self.queues.len(),
            });
        }
        let n = self.capacity();
        for (i, &y) in labels.iter().enumerate() {
            let slot = self.cursors[y];
            self.queues[y].row_mut(slot).copy_from_slice(features.row(i));
            self.cursors[y] = (slot + 1) % n;
        }
        Ok(())
    }

    fn logits(&self, feature: &[f64], class: usize, temperature: f64) -> Vec<f64> {
        let q = &self.queues[class];
        (0..q.rows()).map(|j| dot(q.row(j), feature) / temperature).collect()
    }

    /// Similarity distribution of a query feature over its class queue.
    pub fn score_query(&self, feature: &[f64], class: usize, temperature: f64) -> Vec<f64> {
        softmax(&self.logits(feature, class, temperature))
    }

    /// Same distribution for a key-encoder feature; always a constant.
    pub fn score_key(&self, feature: &[f64], class: usize, temperature: f64) -> Vec<f64> {
        softmax(&self.logits(feature, class, temperature))
    }

    fn check_batch(&self, rows: usize, keys: &Tensor, labels: &[usize], temperature: f64) -> Result<()> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        if keys.rows() != rows || labels.len() != rows || keys.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "jury batch",
                left: vec![rows, self.dim()],
                right: keys.shape().to_vec(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.queues.len()) {
            return Err(Error::IndexOutOfRange {
                op: "jury label",
                index: bad,
                bound: self.queues.len(),
            });
        }
        Ok(())
    }

    /// Records `(1/N) Σ_i −Σ_j s⁺_j(key_i) · log s_j(query_i)` on the tape.
    /// Gradient reaches `query` only.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        query: Var,
        keys: &Tensor,
        labels: &[usize],
        temperature: f64,
    ) -> Result<Var> {
        let b = tape.value(query).rows();
        self.check_batch(b, keys, labels, temperature)?;
        let nq = self.capacity();

        // query logits against every class queue, then pick each row's own class
        let mut per_class = Vec::with_capacity(self.queues.len());
        for q in &self.queues {
            let qt = tape.constant(q.transpose());
            let sims = tape.matmul(query, qt)?;
            per_class.push(tape.scale(sims, 1.0 / temperature));
        }
        let stacked = tape.concat_rows(&per_class)?;
        let pick: Vec<usize> = labels.iter().enumerate().map(|(i, &y)| y * b + i).collect();
        let logits = tape.gather(stacked, &pick)?;
        let log_s = tape.log_softmax_rows(logits);

        let mut target = Vec::with_capacity(b * nq);
        for (i, &y) in labels.iter().enumerate() {
            target.extend(self.score_key(keys.row(i), y, temperature));
        }
        let target = tape.constant(Tensor::matrix(b, nq, target)?);
        let weighted = tape.mul(target, log_s)?;
        let total = tape.sum(weighted);
        Ok(tape.scale(total, -1.0 / b as f64))
    }

    /// Value of [`JuryQueues::loss_on`] computed directly.
    pub fn loss(&self, query: &Tensor, keys: &Tensor, labels: &[usize], temperature: f64) -> Result<f64> {
        self.check_batch(query.rows(), keys, labels, temperature)?;
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let s = self.score_query(query.row(i), y, temperature);
            let t = self.score_key(keys.row(i), y, temperature);
            total -= t.iter().zip(&s).map(|(tj, sj)| tj * sj.ln()).sum::<f64>();
        }
        Ok(total / labels.len() as f64)
    }
}
