//! Per-stage objectives: classification, prototype-memory and jury terms over
//! one or more domain batches.

use std::ops::{Add, Mul};

use crate::autodiff::{OpKind, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::jury::JuryQueues;
use crate::memory::MemoryBank;
use crate::model::{classify_on, encode, encode_on, EncoderParams, QueryModel};
use crate::par::{self, Exec};

use super::episode::DomainBatch;

/// Read-only state the losses consult. A missing bank or queue set switches
/// the corresponding term off.
#[derive(Clone, Copy, Debug)]
pub struct LossContext<'a> {
    pub bank: Option<&'a MemoryBank>,
    pub queues: Option<&'a JuryQueues>,
    pub temperature: f64,
    /// Corrupts one backward rule; used to prove the gradient checker bites.
    pub fault: Option<OpKind>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub class: f64,
    pub memory: f64,
    pub jury: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.class + self.memory + self.jury
    }

    pub fn is_finite(&self) -> bool {
        self.class.is_finite() && self.memory.is_finite() && self.jury.is_finite()
    }

    /// Name of the first non-finite term.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [("classification", self.class), ("memory", self.memory), ("jury", self.jury)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

impl Add for Terms {
    type Output = Terms;
    fn add(self, o: Terms) -> Terms {
        Terms {
            class: self.class + o.class,
            memory: self.memory + o.memory,
            jury: self.jury + o.jury,
        }
    }
}

impl Mul<f64> for Terms {
    type Output = Terms;
    fn mul(self, s: f64) -> Terms {
        Terms {
            class: self.class * s,
            memory: self.memory * s,
            jury: self.jury * s,
        }
    }
}

/// Value, gradient and detached features of a stage objective.
#[derive(Clone, Debug)]
pub struct StageEval {
    pub terms: Terms,
    pub value: f64,
    /// In [`QueryModel`] parameter order.
    pub grads: Vec<Tensor>,
    /// Query features per batch, in the order the batches were given.
    pub features: Vec<Tensor>,
}

/// Key-encoder features of a batch's augmented twins.
pub fn key_features(key: &EncoderParams, batch: &DomainBatch) -> Result<Tensor> {
    if batch.twins.len() != batch.len() {
        return Err(Error::Data(format!(
            "batch of domain {} has {} twins for {} examples",
            batch.domain,
            batch.twins.len(),
            batch.len()
        )));
    }
    encode(key, &batch.twins)
}

fn new_tape(ctx: &LossContext) -> Tape {
    let mut tape = Tape::new();
    if let Some(kind) = ctx.fault {
        tape.inject_backward_fault(kind);
    }
    tape
}

fn read(tape: &Tape, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| tape.value(v).item())
}

fn batch_loss(model: &QueryModel, batch: &DomainBatch, keys: Option<&Tensor>, ctx: &LossContext) -> Result<StageEval> {
    let mut tape = new_tape(ctx);
    let vars = model.bind(&mut tape);
    let f = encode_on(&mut tape, &vars.encoder, &batch.tokens)?;
    let logits = classify_on(&mut tape, &vars.classifier, f)?;
    let class = tape.cross_entropy(logits, &batch.labels)?;
    let mut total = class;
    let memory = match ctx.bank {
        Some(bank) => {
            let l = bank.loss_on(&mut tape, f, &batch.labels, batch.domain)?;
            total = tape.add(total, l)?;
            Some(l)
        }
        None => None,
    };
    let jury = match ctx.queues {
        Some(q) => {
            let keys = keys.ok_or_else(|| Error::Data("jury term needs key features".into()))?;
            let l = q.loss_on(&mut tape, f, keys, &batch.labels, ctx.temperature)?;
            total = tape.add(total, l)?;
            Some(l)
        }
        None => None,
    };
    let g = tape.backward(total)?;
    Ok(StageEval {
        terms: Terms {
            class: tape.value(class).item(),
            memory: read(&tape, memory),
            jury: read(&tape, jury),
        },
        value: tape.value(total).item(),
        grads: vars.grads(&g),
        features: vec![tape.value(f).clone()],
    })
}

/// Mean over batches of the per-domain objective `L_C + L_Mem + L_Jury`.
/// Each batch runs on its own tape (in parallel under `exec`); values and
/// gradients are reduced in batch order.
pub fn stage_loss(
    model: &QueryModel,
    batches: &[&DomainBatch],
    keys: &[Tensor],
    ctx: &LossContext,
    exec: Exec,
) -> Result<StageEval> {
    if batches.is_empty() {
        return Err(Error::Data("stage has no domain batches".into()));
    }
    if ctx.queues.is_some() && keys.len() != batches.len() {
        return Err(Error::Data("one key-feature matrix per batch is required".into()));
    }
    let evals = par::try_map_range(exec, batches.len(), |i| batch_loss(model, batches[i], keys.get(i), ctx))?;
    let n = evals.len() as f64;
    let mut iter = evals.into_iter();
    let first = iter.next().expect("non-empty");
    let (mut terms, mut value, mut grads, mut features) = (first.terms, first.value, first.grads, first.features);
    for e in iter {
        terms = terms + e.terms;
        value += e.value;
        for (acc, g) in grads.iter_mut().zip(&e.grads) {
            acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
        features.extend(e.features);
    }
    if n > 1.0 {
        let s = 1.0 / n;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        terms = terms * s;
        value *= s;
    }
    Ok(StageEval { terms, value, grads, features })
}

/// Single-stage objective over the union of all batches: pooled
/// cross-entropy, the per-domain memory losses averaged over domains, and a
/// pooled jury loss.
pub fn pooled_loss(model: &QueryModel, batches: &[DomainBatch], keys: &[Tensor], ctx: &LossContext) -> Result<StageEval> {
    if batches.is_empty() {
        return Err(Error::Data("no domain batches".into()));
    }
    let tokens: Vec<Vec<usize>> = batches.iter().flat_map(|b| b.tokens.iter().cloned()).collect();
    let labels: Vec<usize> = batches.iter().flat_map(|b| b.labels.iter().copied()).collect();

    let mut tape = new_tape(ctx);
    let vars = model.bind(&mut tape);
    let f = encode_on(&mut tape, &vars.encoder, &tokens)?;
    let logits = classify_on(&mut tape, &vars.classifier, f)?;
    let class = tape.cross_entropy(logits, &labels)?;
    let mut total = class;

    let mut offsets = Vec::with_capacity(batches.len());
    let mut start = 0;
    for b in batches {
        offsets.push(start..start + b.len());
        start += b.len();
    }

    let memory = match ctx.bank {
        Some(bank) => {
            let mut parts = Vec::with_capacity(batches.len());
            for (b, range) in batches.iter().zip(&offsets) {
                let rows: Vec<usize> = range.clone().collect();
                let fd = tape.gather(f, &rows)?;
                parts.push(bank.loss_on(&mut tape, fd, &b.labels, b.domain)?);
            }
            let mut sum = parts[0];
            for &p in &parts[1..] {
                sum = tape.add(sum, p)?;
            }
            let l = tape.scale(sum, 1.0 / parts.len() as f64);
            total = tape.add(total, l)?;
            Some(l)
        }
        None => None,
    };
    let jury = match ctx.queues {
        Some(q) => {
            if keys.len() != batches.len() {
                return Err(Error::Data("one key-feature matrix per batch is required".into()));
            }
            let rows: Vec<Vec<f64>> = keys.iter().flat_map(|k| (0..k.rows()).map(|i| k.row(i).to_vec())).collect();
            let all_keys = Tensor::from_rows(&rows)?;
            let l = q.loss_on(&mut tape, f, &all_keys, &labels, ctx.temperature)?;
            total = tape.add(total, l)?;
            Some(l)
        }
        None => None,
    };
    let g = tape.backward(total)?;
    let feats = tape.value(f);
    let features = offsets
        .iter()
        .map(|r| Tensor::from_rows(&r.clone().map(|i| feats.row(i).to_vec()).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(StageEval {
        terms: Terms {
            class: tape.value(class).item(),
            memory: read(&tape, memory),
            jury: read(&tape, jury),
        },
        value: tape.value(total).item(),
        grads: vars.grads(&g),
        features,
    })
}
