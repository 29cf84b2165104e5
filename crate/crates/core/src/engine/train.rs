use std::cell::{Cell, RefCell};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use crate::autodiff::{AdamState, Parameters, Tensor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::jury::JuryQueues;
use crate::memory::{init_slots, MemoryBank};
use crate::model::{momentum_update, EncoderParams, QueryModel};
use crate::par::Exec;
use crate::text::DomainDataset;

use super::config::{QueueUpdate, TrainConfig};
use super::episode::{sample_all, split_domains, DomainBatch};
use super::losses::{key_features, pooled_loss, stage_loss, LossContext, Terms};
use super::meta::{meta_gradient, Evaluated, InnerStep};

/// State mutations and stage computations of one iteration, in the order
/// they ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Split,
    Sample,
    MetaTrainLoss,
    InnerUpdate,
    AdaptedKeyEma,
    MetaTestLoss,
    PooledLoss,
    Enqueue,
    KeyEma,
    MemoryUpdate,
    OuterStep,
}

/// The phase sequence an iteration must follow under `config`.
pub fn expected_phases(config: &TrainConfig) -> Vec<Phase> {
    use Phase::*;
    let mut p = Vec::new();
    if config.use_meta {
        p.extend([Split, Sample, MetaTrainLoss, InnerUpdate]);
        if config.use_jury {
            p.push(AdaptedKeyEma);
        }
        p.push(MetaTestLoss);
    } else {
        p.extend([Sample, PooledLoss]);
    }
    if config.use_jury {
        p.extend([Enqueue, KeyEma]);
    }
    if config.use_memory {
        p.push(MemoryUpdate);
    }
    p.push(OuterStep);
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Zero-based global iteration index.
    pub iteration: u64,
    /// One-based epoch.
    pub epoch: usize,
    pub meta_test_domain: Option<usize>,
    /// Meta-train terms, or the pooled terms when meta-learning is off.
    pub train: Terms,
    pub train_total: f64,
    pub test: Option<Terms>,
    pub test_total: Option<f64>,
    pub lr: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "iter,epoch,meta_test_domain,L_C_mtr,L_Mem_mtr,L_Jury_mtr,L_mtr,L_C_mte,L_Mem_mte,L_Jury_mte,L_mte,lr";

    /// Combined objective of the iteration.
    pub fn total(&self) -> f64 {
        self.train_total + self.test_total.unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.epoch,
            self.meta_test_domain.map(|d| d.to_string()).unwrap_or_default(),
            self.train.class,
            self.train.memory,
            self.train.jury,
            self.train_total,
            opt(self.test.map(|t| t.class)),
            opt(self.test.map(|t| t.memory)),
            opt(self.test.map(|t| t.jury)),
            opt(self.test_total),
            self.lr
        )
    }
}

/// Train terms, test terms, held-out domain and outer gradient of one phase.
type PhaseOut = (Terms, Option<Terms>, Option<usize>, Vec<Tensor>);

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

fn save_rng(rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn load_rng(s: &RngState) -> Result<ChaCha8Rng> {
    let bad = || Error::Checkpoint("malformed rng state".into());
    if s.seed.len() != 64 {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&s.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(s.stream);
    rng.set_word_pos(s.word_pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

/// The whole mutable training state plus the source domains it samples from.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    datasets: Vec<DomainDataset>,
    num_classes: usize,
    vocab_size: usize,
    iterations_per_epoch: usize,
    pub model: QueryModel,
    pub key: EncoderParams,
    bank: Option<MemoryBank>,
    queues: JuryQueues,
    outer: AdamState,
    iteration: u64,
    rng: ChaCha8Rng,
    exec: Exec,
    trace: Vec<Phase>,
    last_batches: Vec<DomainBatch>,
}

fn check_datasets(datasets: &[DomainDataset]) -> Result<usize> {
    if datasets.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 source domains, got {}",
            datasets.len()
        )));
    }
    let nc = datasets[0].num_classes();
    for (d, ds) in datasets.iter().enumerate() {
        if ds.num_classes() != nc {
            return Err(Error::Data("source domains disagree on the number of classes".into()));
        }
        if ds.domain() != d {
            return Err(Error::Data(format!("dataset at position {d} is tagged domain {}", ds.domain())));
        }
        for c in 0..nc {
            if ds.class_indices(c).is_empty() {
                return Err(Error::Data(format!("domain {d} has no examples of class {c}")));
            }
        }
    }
    Ok(nc)
}

impl Trainer {
    /// Initializes parameters, runs the optional warm start, fills the
    /// memory from the (warm-started) encoder and fills the queues with
    /// random unit vectors.
    pub fn new(config: TrainConfig, datasets: Vec<DomainDataset>, vocab_size: usize, exec: Exec) -> Result<Self> {
        config.validate()?;
        let num_classes = check_datasets(&datasets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let shape = config.encoder_shape(vocab_size);
        let mut model = QueryModel::init(shape, config.activation, num_classes, &mut rng);

        if config.warm_start_steps > 0 {
            let mut adam = AdamState::new(&model, config.adam);
            let ctx = LossContext {
                bank: None,
                queues: None,
                temperature: config.temperature,
                fault: None,
            };
            for _ in 0..config.warm_start_steps {
                let batches = sample_all(&datasets, config.batch_size, None, &mut rng)?;
                let e = pooled_loss(&model, &batches, &[], &ctx)?;
                adam.step(&mut model, &e.grads, config.outer_lr, config.weight_decay)?;
            }
        }

        let key = model.encoder.clone();
        let bank = if config.use_memory {
            let slots = init_slots(&model.encoder, &datasets, num_classes, config.chunk_size, exec)?;
            Some(MemoryBank::from_slots(
                slots,
                config.memory_momentum,
                config.temperature,
                config.renormalize_memory,
            )?)
        } else {
            None
        };
        let queues = JuryQueues::init(num_classes, config.queue_size, config.feature_dim, &mut rng)?;
        let outer = AdamState::new(&model, config.adam);
        let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
        let iterations_per_epoch = config.iterations_for(&sizes);
        Ok(Trainer {
            config,
            datasets,
            num_classes,
            vocab_size,
            iterations_per_epoch,
            model,
            key,
            bank,
            queues,
            outer,
            iteration: 0,
            rng,
            exec,
            trace: Vec::new(),
            last_batches: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn datasets(&self) -> &[DomainDataset] {
        &self.datasets
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.iterations_per_epoch
    }

    pub fn total_iterations(&self) -> u64 {
        (self.iterations_per_epoch * self.config.epochs) as u64
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.total_iterations()
    }

    pub fn bank(&self) -> Option<&MemoryBank> {
        self.bank.as_ref()
    }

    pub fn queues(&self) -> &JuryQueues {
        &self.queues
    }

    pub fn outer_state(&self) -> &AdamState {
        &self.outer
    }

    /// Phases recorded by the most recent [`Trainer::step`].
    pub fn trace(&self) -> &[Phase] {
        &self.trace
    }

    /// Batches sampled by the most recent step, in domain order.
    pub fn last_batches(&self) -> &[DomainBatch] {
        &self.last_batches
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    fn warmup_steps(&self) -> u64 {
        self.iterations_per_epoch as u64
    }

    /// Runs one iteration and returns its metrics row.
    pub fn step(&mut self) -> Result<MetricsRow> {
        self.trace.clear();
        let it = self.iteration;
        let lr = self.config.outer_schedule(self.warmup_steps()).lr_at(it);
        let (train, test, test_domain, grads) = if self.config.use_meta {
            self.meta_phase()?
        } else {
            self.pooled_phase()?
        };
        let stage = |t: &Terms, name: &str| match t.first_non_finite() {
            Some(term) => Err(Error::NonFinite(format!(
                "iteration {it}: {name} {term} loss is not finite"
            ))),
            None => Ok(()),
        };
        stage(&train, if self.config.use_meta { "meta-train" } else { "pooled" })?;
        if let Some(t) = &test {
            stage(t, "meta-test")?;
        }
        self.outer
            .step(&mut self.model, &grads, lr, self.config.weight_decay)
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("iteration {it}: {m}")),
                e => e,
            })?;
        self.trace.push(Phase::OuterStep);

        let expected = expected_phases(&self.config);
        if self.trace != expected {
            return Err(Error::Config(format!(
                "iteration {it}: phase order {:?} deviates from {expected:?}",
                self.trace
            )));
        }
        self.iteration += 1;
        Ok(MetricsRow {
            iteration: it,
            epoch: (it / self.iterations_per_epoch as u64) as usize + 1,
            meta_test_domain: test_domain,
            train,
            train_total: train.total(),
            test,
            test_total: test.map(|t| t.total()),
            lr,
        })
    }

    /// Split, both stages, and the state updates that precede the outer step.
    /// Returns the stage terms, the held-out domain and the outer gradient.
    fn meta_phase(&mut self) -> Result<PhaseOut> {
        let cfg = self.config.clone();
        let it = self.iteration;
        let (train_domains, test_domain) = split_domains(self.datasets.len(), &mut self.rng)?;
        self.trace.push(Phase::Split);
        let rate = cfg.use_jury.then_some(cfg.repetition_rate);
        let batches = sample_all(&self.datasets, cfg.batch_size, rate, &mut self.rng)?;
        self.trace.push(Phase::Sample);

        let train_batches: Vec<&DomainBatch> = train_domains.iter().map(|&d| &batches[d]).collect();
        let test_batch = &batches[test_domain];
        let train_keys = if cfg.use_jury {
            train_batches
                .iter()
                .map(|b| key_features(&self.key, b))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mid_queues = if cfg.use_jury && cfg.queue_update == QueueUpdate::PerStage {
            let mut q = self.queues.clone();
            for (b, k) in train_batches.iter().zip(&train_keys) {
                q.enqueue(k, &b.labels)?;
            }
            Some(q)
        } else {
            None
        };
        let train_ctx = LossContext {
            bank: self.bank.as_ref(),
            queues: cfg.use_jury.then_some(&self.queues),
            temperature: cfg.temperature,
            fault: None,
        };
        let test_ctx = LossContext {
            queues: cfg.use_jury.then(|| mid_queues.as_ref().unwrap_or(&self.queues)),
            ..train_ctx
        };
        let inner = InnerStep {
            optimizer: cfg.inner_optimizer,
            lr: cfg.inner_schedule(self.warmup_steps()).lr_at(it),
            weight_decay: cfg.weight_decay,
            adam: cfg.adam,
        };

        let trace = RefCell::new(Vec::new());
        let first = Cell::new(true);
        let before = self.model.checksum();
        let exec = self.exec;
        let key = &self.key;
        let outcome = meta_gradient(
            &self.model,
            &inner,
            cfg.meta_grad,
            cfg.hvp_step,
            |m: &QueryModel| {
                let e = stage_loss(m, &train_batches, &train_keys, &train_ctx, exec)?;
                if first.replace(false) {
                    trace.borrow_mut().push(Phase::MetaTrainLoss);
                }
                Ok(Evaluated {
                    value: e.value,
                    grads: e.grads,
                    extra: (e.terms, e.features),
                })
            },
            |adapted: &QueryModel| {
                trace.borrow_mut().push(Phase::InnerUpdate);
                let keys = if cfg.use_jury {
                    let mut adapted_key = key.clone();
                    momentum_update(&mut adapted_key, &adapted.encoder, cfg.key_momentum)?;
                    trace.borrow_mut().push(Phase::AdaptedKeyEma);
                    vec![key_features(&adapted_key, test_batch)?]
                } else {
                    Vec::new()
                };
                let e = stage_loss(adapted, &[test_batch], &keys, &test_ctx, exec)?;
                trace.borrow_mut().push(Phase::MetaTestLoss);
                Ok(Evaluated {
                    value: e.value,
                    grads: e.grads,
                    extra: (e.terms, e.features, keys),
                })
            },
        )?;
        self.trace.extend(trace.into_inner());
        if self.model.checksum() != before {
            return Err(Error::Config(format!("iteration {it}: meta stages mutated the original parameters")));
        }

        let (train_terms, train_features) = outcome.train.extra;
        let (test_terms, test_features, test_keys) = outcome.test.extra;
        if cfg.use_jury {
            if let Some(q) = mid_queues {
                self.queues = q;
            }
            self.queues.enqueue(&test_keys[0], &test_batch.labels)?;
            self.trace.push(Phase::Enqueue);
            momentum_update(&mut self.key, &self.model.encoder, cfg.key_momentum)?;
            self.trace.push(Phase::KeyEma);
        }
        if let Some(bank) = self.bank.as_mut() {
            for (d, b) in batches.iter().enumerate() {
                let f = match train_domains.iter().position(|&t| t == d) {
                    Some(pos) => &train_features[pos],
                    None => &test_features[0],
                };
                bank.update(f, &b.labels, d)?;
            }
            self.trace.push(Phase::MemoryUpdate);
        }
        self.last_batches = batches;
        Ok((train_terms, Some(test_terms), Some(test_domain), outcome.grads))
    }

    fn pooled_phase(&mut self) -> Result<PhaseOut> {
        let cfg = &self.config;
        let rate = cfg.use_jury.then_some(cfg.repetition_rate);
        let batches = sample_all(&self.datasets, cfg.batch_size, rate, &mut self.rng)?;
        self.trace.push(Phase::Sample);
        let keys = if cfg.use_jury {
            batches
                .iter()
                .map(|b| key_features(&self.key, b))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let ctx = LossContext {
            bank: self.bank.as_ref(),
            queues: cfg.use_jury.then_some(&self.queues),
            temperature: cfg.temperature,
            fault: None,
        };
        let e = pooled_loss(&self.model, &batches, &keys, &ctx)?;
        self.trace.push(Phase::PooledLoss);
        if cfg.use_jury {
            for (b, k) in batches.iter().zip(&keys) {
                self.queues.enqueue(k, &b.labels)?;
            }
            self.trace.push(Phase::Enqueue);
            momentum_update(&mut self.key, &self.model.encoder, cfg.key_momentum)?;
            self.trace.push(Phase::KeyEma);
        }
        if let Some(bank) = self.bank.as_mut() {
            for (d, (b, f)) in batches.iter().zip(&e.features).enumerate() {
                bank.update(f, &b.labels, d)?;
            }
            self.trace.push(Phase::MemoryUpdate);
        }
        self.last_batches = batches;
        Ok((e.terms, None, None, e.grads))
    }

    /// Steps until the configured number of epochs is reached, handing each
    /// row to `on_row`.
    pub fn run<F>(&mut self, mut on_row: F) -> Result<()>
    where
        F: FnMut(&Trainer, &MetricsRow) -> Result<()>,
    {
        while !self.is_done() {
            let row = self.step()?;
            on_row(self, &row)?;
        }
        Ok(())
    }

    /// Everything needed to continue training bit-identically.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = Map::new();
        meta.insert("kind".into(), json!("trainer"));
        meta.insert("config".into(), serde_json::to_value(&self.config)?);
        meta.insert("num_classes".into(), json!(self.num_classes));
        meta.insert("num_domains".into(), json!(self.datasets.len()));
        meta.insert("vocab_size".into(), json!(self.vocab_size));
        meta.insert("iteration".into(), json!(self.iteration));
        meta.insert("rng".into(), serde_json::to_value(save_rng(&self.rng))?);
        meta.insert("queue_cursors".into(), json!(self.queues.cursors()));
        meta.insert("adam_step".into(), json!(self.outer.step_count()));

        let mut ck = Checkpoint::new(meta);
        for (n, t) in self.model.param_names().into_iter().zip(self.model.tensors()) {
            ck.push(format!("model.{n}"), t.clone())?;
        }
        for (n, t) in self.key.param_names().into_iter().zip(self.key.tensors()) {
            ck.push(format!("key.{n}"), t.clone())?;
        }
        if let Some(bank) = &self.bank {
            for d in 0..bank.num_domains() {
                for c in 0..bank.num_classes() {
                    ck.push(format!("memory.d{d}.c{c}"), Tensor::vector(bank.slot(d, c).to_vec()))?;
                }
            }
        }
        for c in 0..self.num_classes {
            ck.push(format!("queue.c{c}"), self.queues.storage(c).clone())?;
        }
        let names = self.model.param_names();
        for (n, (m, v)) in names.iter().zip(self.outer.first_moments().iter().zip(self.outer.second_moments())) {
            ck.push(format!("adam.m.{n}"), m.clone())?;
            ck.push(format!("adam.v.{n}"), v.clone())?;
        }
        Ok(ck)
    }

    /// Rebuilds a trainer from [`Trainer::to_checkpoint`] output and the
    /// same source datasets.
    pub fn from_checkpoint(ck: &Checkpoint, datasets: Vec<DomainDataset>, exec: Exec) -> Result<Self> {
        let kind: String = ck.meta_field("kind")?;
        if kind != "trainer" {
            return Err(Error::Checkpoint(format!("expected a trainer checkpoint, found `{kind}`")));
        }
        let config: TrainConfig = ck.meta_field("config")?;
        config.validate()?;
        let num_classes = check_datasets(&datasets)?;
        if num_classes != ck.meta_field::<usize>("num_classes")? || datasets.len() != ck.meta_field::<usize>("num_domains")? {
            return Err(Error::Checkpoint("datasets do not match the checkpointed domains/classes".into()));
        }
        let vocab_size: usize = ck.meta_field("vocab_size")?;
        let shape = config.encoder_shape(vocab_size);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = QueryModel::init(shape, config.activation, num_classes, &mut rng);
        let names = model.param_names();
        for (n, t) in names.iter().zip(model.tensors_mut()) {
            *t = ck.expect(&format!("model.{n}"), t.shape())?;
        }
        let mut key = model.encoder.clone();
        let key_names = key.param_names();
        for (n, t) in key_names.iter().zip(key.tensors_mut()) {
            *t = ck.expect(&format!("key.{n}"), t.shape())?;
        }
        let bank = if config.use_memory {
            let slots = (0..datasets.len())
                .map(|d| {
                    let rows = (0..num_classes)
                        .map(|c| Ok(ck.expect(&format!("memory.d{d}.c{c}"), &[config.feature_dim])?.into_data()))
                        .collect::<Result<Vec<_>>>()?;
                    Tensor::from_rows(&rows)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(MemoryBank::from_slots(
                slots,
                config.memory_momentum,
                config.temperature,
                config.renormalize_memory,
            )?)
        } else {
            None
        };
        let queues = JuryQueues::from_parts(
            (0..num_classes)
                .map(|c| ck.expect(&format!("queue.c{c}"), &[config.queue_size, config.feature_dim]))
                .collect::<Result<Vec<_>>>()?,
            ck.meta_field("queue_cursors")?,
        )?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (n, t) in names.iter().zip(model.tensors()) {
            m.push(ck.expect(&format!("adam.m.{n}"), t.shape())?);
            v.push(ck.expect(&format!("adam.v.{n}"), t.shape())?);
        }
        let outer = AdamState::from_parts(config.adam, m, v, ck.meta_field("adam_step")?)?;
        let rng = load_rng(&ck.meta_field("rng")?)?;
        let sizes: Vec<usize> = datasets.iter().map(|d| d.len()).collect();
        let iterations_per_epoch = config.iterations_for(&sizes);
        Ok(Trainer {
            config,
            datasets,
            num_classes,
            vocab_size,
            iterations_per_epoch,
            model,
            key,
            bank,
            queues,
            outer,
            iteration: ck.meta_field("iteration")?,
            rng,
            exec,
            trace: Vec::new(),
            last_batches: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{generate_synthetic_corpus, CorpusSpec};

    fn tiny() -> (TrainConfig, Vec<DomainDataset>, usize) {
        let spec = CorpusSpec {
            domains: 3,
            per_class: 12,
            ..CorpusSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 3).unwrap();
        let vocab = corpus.vocab();
        let data = corpus.datasets(&vocab, 64).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 2,
            iterations_per_epoch: Some(3),
            emb_dim: 8,
            hidden_dim: 8,
            feature_dim: 4,
            queue_size: 8,
            inner_lr: 1e-2,
            outer_lr: 1e-2,
            ..TrainConfig::default()
        };
        (cfg, data, vocab.len())
    }

    #[test]
    fn phase_order_full_and_erm() {
        let (cfg, data, v) = tiny();
        let mut t = Trainer::new(cfg.clone(), data.clone(), v, Exec::Sequential).unwrap();
        t.step().unwrap();
        use Phase::*;
        assert_eq!(
            t.trace(),
            &[
                Split, Sample, MetaTrainLoss, InnerUpdate, AdaptedKeyEma, MetaTestLoss, Enqueue, KeyEma, MemoryUpdate,
                OuterStep
            ]
        );
        let mut t = Trainer::new(cfg.erm(), data, v, Exec::Sequential).unwrap();
        t.step().unwrap();
        assert_eq!(t.trace(), &[Sample, PooledLoss, OuterStep]);
    }

    #[test]
    fn csv_rows_have_header_arity() {
        let (cfg, data, v) = tiny();
        let cols = MetricsRow::CSV_HEADER.split(',').count();
        for c in [cfg.clone(), cfg.erm()] {
            let mut t = Trainer::new(c, data.clone(), v, Exec::Sequential).unwrap();
            let row = t.step().unwrap();
            assert_eq!(row.to_csv().split(',').count(), cols);
        }
    }

    #[test]
    fn rng_state_round_trips() {
        use rand::RngCore;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.next_u64();
        rng.next_u32();
        let mut back = load_rng(&save_rng(&rng)).unwrap();
        assert_eq!(rng.next_u64(), back.next_u64());
    }

    #[test]
    fn single_domain_rejected() {
        let (cfg, mut data, v) = tiny();
        data.truncate(1);
        assert!(matches!(Trainer::new(cfg, data, v, Exec::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn iteration_and_epoch_counters() {
        let (cfg, data, v) = tiny();
        let mut t = Trainer::new(cfg, data, v, Exec::Sequential).unwrap();
        let mut rows = Vec::new();
        t.run(|_, r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![1, 1, 1, 2, 2, 2]);
        assert_eq!(t.outer_state().step_count(), 6);
        assert!(rows.iter().all(|r| r.meta_test_domain.is_some() && r.test.is_some()));
    }
}
