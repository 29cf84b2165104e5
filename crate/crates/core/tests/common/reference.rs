use metadg::autodiff::{Parameters, Tape, Tensor};
use metadg::engine::{Phase, TrainConfig, Trainer};
use metadg::model::{classify_on, encode_on, QueryModel};
use metadg::par::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Single-loop Adam on pooled cross-entropy, written against the tape only.
pub struct Reference {
    model: QueryModel,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Reference {
    pub fn new(model: QueryModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Reference {
            model,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, tokens: &[Vec<usize>], labels: &[usize], lr: f64, cfg: &TrainConfig) -> f64 {
        let mut tape = Tape::new();
        let vars = self.model.bind(&mut tape);
        let f = encode_on(&mut tape, &vars.encoder, tokens).unwrap();
        let z = classify_on(&mut tape, &vars.classifier, f).unwrap();
        let loss = tape.cross_entropy(z, labels).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = vars.grads(&g);

        self.t += 1;
        let (b1, b2, eps) = (cfg.adam.beta1, cfg.adam.beta2, cfg.adam.eps);
        let (bc1, bc2) = (1.0 - b1.powi(self.t), 1.0 - b2.powi(self.t));
        for (k, p) in self.model.tensors_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k].data());
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                if cfg.weight_decay != 0.0 {
                    *x -= lr * cfg.weight_decay * *x;
                }
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            }
        }
        tape.value(loss).item()
    }
}

pub fn bits(m: &QueryModel) -> Vec<u64> {
    m.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

/// Runs an all-flags-off trainer next to [`Reference`] on the same batches
/// and reports the first mismatch, if any.
pub fn erm_mismatch(iterations: u64, seed: u64) -> Option<String> {
    let corpus = super::corpus(0);
    let (vocab, datasets) = super::train_domains(&corpus, &[0, 1, 2], 64);
    let cfg = super::small_config(seed).erm();
    let mut trainer = Trainer::new(cfg.clone(), datasets, vocab.len(), Exec::Parallel).unwrap();

    let shape = cfg.encoder_shape(vocab.len());
    let init = QueryModel::init(shape, cfg.activation, 2, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    if bits(&trainer.model) != bits(&init) {
        return Some("initial parameters differ".into());
    }
    let mut reference = Reference::new(init);
    let warmup = trainer.iterations_per_epoch() as f64;

    for it in 0..iterations {
        let row = trainer.step().unwrap();
        if trainer.trace() != [Phase::Sample, Phase::PooledLoss, Phase::OuterStep] {
            return Some(format!("iteration {it}: phases {:?}", trainer.trace()));
        }
        let batches = trainer.last_batches();
        let tokens: Vec<Vec<usize>> = batches.iter().flat_map(|b| b.tokens.clone()).collect();
        let labels: Vec<usize> = batches.iter().flat_map(|b| b.labels.clone()).collect();
        let lr = if (it as f64) < warmup {
            cfg.warmup_start_lr + (cfg.outer_lr - cfg.warmup_start_lr) * (it as f64 / warmup)
        } else {
            cfg.outer_lr
        };
        let loss = reference.step(&tokens, &labels, lr, &cfg);
        if row.lr.to_bits() != lr.to_bits() {
            return Some(format!("iteration {it}: learning rate {} vs {lr}", row.lr));
        }
        if row.train.class.to_bits() != loss.to_bits() || row.train.memory != 0.0 || row.train.jury != 0.0 {
            return Some(format!("iteration {it}: loss {:?} vs {loss}", row.train));
        }
        if bits(&trainer.model) != bits(&reference.model) {
            return Some(format!("iteration {it}: parameters differ"));
        }
    }
    None
}
