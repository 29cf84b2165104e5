//! Hand-written reference computations. Each returns the largest absolute
//! deviation of the library from its oracle.

use std::collections::VecDeque;

use metadg::autodiff::{AdamConfig, ParamSet, Parameters, Tensor};
use metadg::engine::{meta_gradient, Evaluated, InnerOptimizer, InnerStep, MetaGradMode};
use metadg::jury::JuryQueues;
use metadg::memory::MemoryBank;
use metadg::model::{momentum_update, Activation, EncoderParams, EncoderShape};
use metadg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn memory_step(slots: &mut [Vec<f64>], feats: &[Vec<f64>], labels: &[usize], m: f64, renorm: bool) {
    for (c, slot) in slots.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = feats.iter().zip(labels).filter(|(_, &y)| y == c).map(|(f, _)| f).collect();
        if members.is_empty() {
            continue;
        }
        for k in 0..slot.len() {
            let mean = members.iter().map(|f| f[k]).sum::<f64>() / members.len() as f64;
            slot[k] = m * slot[k] + (1.0 - m) * mean;
        }
        if renorm {
            let n = slot.iter().map(|v| v * v).sum::<f64>().sqrt();
            slot.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Twenty momentum updates over two domains, one class absent every other step.
pub fn memory_error(m: f64, renorm: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nc, dim, domains) = (3, 5, 2);
    let init: Vec<Vec<Vec<f64>>> = (0..domains).map(|_| random(&mut rng, nc, dim)).collect();
    let slots = init.iter().map(|s| Tensor::from_rows(s).unwrap()).collect();
    let mut bank = MemoryBank::from_slots(slots, m, 0.05, renorm).unwrap();
    let mut oracle = init;
    let mut worst: f64 = 0.0;
    for step in 0..20 {
        let d = step % domains;
        let feats = random(&mut rng, 6, dim);
        let labels: Vec<usize> = (0..6).map(|i| if step % 2 == 1 { i % 2 } else { i % nc }).collect();
        bank.update(&Tensor::from_rows(&feats).unwrap(), &labels, d).unwrap();
        memory_step(&mut oracle[d], &feats, &labels, m, renorm);
        for (dd, slots) in oracle.iter().enumerate() {
            for (c, want) in slots.iter().enumerate() {
                for (a, b) in bank.slot(dd, c).iter().zip(want) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    worst
}

pub fn tiny_encoder(seed: u64) -> EncoderParams {
    let shape = EncoderShape {
        vocab_size: 11,
        emb_dim: 4,
        hidden_dim: 3,
        feature_dim: 2,
    };
    EncoderParams::init(shape, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Twenty-five key-encoder momentum steps towards fresh query encoders.
pub fn ema_error(lambda: f64) -> f64 {
    let mut key = tiny_encoder(1);
    let mut oracle: Vec<Vec<f64>> = key.tensors().iter().map(|t| t.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for step in 0..25 {
        let query = tiny_encoder(100 + step);
        momentum_update(&mut key, &query, lambda).unwrap();
        for (o, q) in oracle.iter_mut().zip(query.tensors()) {
            for (ov, qv) in o.iter_mut().zip(q.data()) {
                *ov = lambda * *ov + (1.0 - lambda) * qv;
            }
        }
        for (k, o) in key.tensors().iter().zip(&oracle) {
            for (a, b) in k.data().iter().zip(o) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Per-class queues against `VecDeque`s under random batch sizes and labels.
pub fn fifo_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nc, cap, dim) = (3, 4, 2);
    let mut q = JuryQueues::init(nc, cap, dim, &mut rng).unwrap();
    let mut oracle: Vec<VecDeque<Vec<f64>>> = (0..nc)
        .map(|c| q.ordered(c).into_iter().map(<[f64]>::to_vec).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for step in 0..15 {
        let n = 1 + step % 5;
        let feats = random(&mut rng, n, dim);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..nc)).collect();
        q.enqueue(&Tensor::from_rows(&feats).unwrap(), &labels).unwrap();
        for (f, &y) in feats.iter().zip(&labels) {
            oracle[y].pop_front();
            oracle[y].push_back(f.clone());
        }
        for (c, want) in oracle.iter().enumerate() {
            let got = q.ordered(c);
            if got.len() != cap {
                return f64::INFINITY;
            }
            for (a, b) in got.iter().zip(want) {
                for (x, y) in a.iter().zip(b) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    worst
}

fn params(v: &[f64]) -> ParamSet {
    ParamSet::new(vec![("theta".into(), Tensor::vector(v.to_vec()))])
}

fn theta(p: &ParamSet) -> Vec<f64> {
    p.get("theta").unwrap().data().to_vec()
}

fn eval(value: f64, grad: Vec<f64>) -> Result<Evaluated<()>> {
    Ok(Evaluated {
        value,
        grads: vec![Tensor::vector(grad)],
        extra: (),
    })
}

// L_mtr(a, b) = (a - 1)^2 + a*b + 0.5 b^2
pub fn toy_mtr(p: &ParamSet) -> Result<Evaluated<()>> {
    let t = theta(p);
    let (a, b) = (t[0], t[1]);
    eval((a - 1.0).powi(2) + a * b + 0.5 * b * b, vec![2.0 * (a - 1.0) + b, a + b])
}

// L_mte(a, b) = sin(a) + (b + 2)^2 a
pub fn toy_mte(p: &ParamSet) -> Result<Evaluated<()>> {
    let t = theta(p);
    let (a, b) = (t[0], t[1]);
    eval(a.sin() + (b + 2.0).powi(2) * a, vec![a.cos() + (b + 2.0).powi(2), 2.0 * (b + 2.0) * a])
}

pub fn step(optimizer: InnerOptimizer, lr: f64, weight_decay: f64) -> InnerStep {
    InnerStep {
        optimizer,
        lr,
        weight_decay,
        adam: AdamConfig::default(),
    }
}

/// First-order meta-gradient of the 2-parameter toy against the scripted
/// `∇L_mtr(θ) + ∇L_mte(θ′)`, for SGD and Adam inner steps.
pub fn first_order_error() -> f64 {
    let (a, b) = (0.3, -0.7);
    let g_tr = [2.0 * (a - 1.0) + b, a + b];
    let mut worst: f64 = 0.0;
    for (opt, lr, wd) in [(InnerOptimizer::Sgd, 0.1, 0.01), (InnerOptimizer::Sgd, 0.5, 0.0), (InnerOptimizer::Adam, 0.05, 0.0)] {
        let out = meta_gradient(&params(&[a, b]), &step(opt, lr, wd), MetaGradMode::FirstOrder, 1e-4, toy_mtr, toy_mte).unwrap();
        let (a2, b2) = match opt {
            InnerOptimizer::Sgd => ((1.0 - lr * wd) * a - lr * g_tr[0], (1.0 - lr * wd) * b - lr * g_tr[1]),
            // a fresh Adam step has m̂ = g and v̂ = g², so it moves by lr·g/(|g| + ε)
            InnerOptimizer::Adam => (a - lr * g_tr[0] / (g_tr[0].abs() + 1e-8), b - lr * g_tr[1] / (g_tr[1].abs() + 1e-8)),
        };
        let want = [g_tr[0] + a2.cos() + (b2 + 2.0).powi(2), g_tr[1] + 2.0 * (b2 + 2.0) * a2];
        for (g, w) in out.grads[0].data().iter().zip(want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

// quadratic stages: L_mtr = ½θᵀAθ + pᵀθ, L_mte = ½θᵀCθ + qᵀθ
const A: [[f64; 3]; 3] = [[3.0, 0.5, -0.2], [0.5, 2.0, 0.3], [-0.2, 0.3, 1.5]];
const C: [[f64; 3]; 3] = [[1.0, -0.4, 0.0], [-0.4, 2.5, 0.6], [0.0, 0.6, 0.8]];
const P: [f64; 3] = [0.1, -0.3, 0.2];
const Q: [f64; 3] = [-0.5, 0.4, 0.05];

fn affine(m: &[[f64; 3]; 3], x: &[f64], c: &[f64; 3]) -> Vec<f64> {
    (0..3).map(|i| (0..3).map(|j| m[i][j] * x[j]).sum::<f64>() + c[i]).collect()
}

fn quad(m: &'static [[f64; 3]; 3], c: &'static [f64; 3]) -> impl FnMut(&ParamSet) -> Result<Evaluated<()>> {
    move |p| {
        let t = theta(p);
        let g = affine(m, &t, c);
        let value = (0..3).map(|i| 0.5 * t[i] * (g[i] + c[i])).sum();
        eval(value, g)
    }
}

/// Exact-mode meta-gradient on the quadratic against
/// `Aθ + p + ((1 − α·wd)I − αA)(Cθ′ + q)` with `θ′ = (1 − α·wd)θ − α(Aθ + p)`.
pub fn exact_quadratic_error() -> f64 {
    let t = [0.4, -1.2, 0.9];
    let mut worst: f64 = 0.0;
    for (lr, wd) in [(0.1, 0.0), (0.05, 0.02), (0.3, 0.0)] {
        let out = meta_gradient(
            &params(&t),
            &step(InnerOptimizer::Sgd, lr, wd),
            MetaGradMode::Exact,
            1e-4,
            quad(&A, &P),
            quad(&C, &Q),
        )
        .unwrap();
        let g_tr = affine(&A, &t, &P);
        let t2: Vec<f64> = (0..3).map(|i| (1.0 - lr * wd) * t[i] - lr * g_tr[i]).collect();
        let g_te = affine(&C, &t2, &Q);
        for i in 0..3 {
            let a_g: f64 = (0..3).map(|j| A[i][j] * g_te[j]).sum();
            let want = g_tr[i] + (1.0 - lr * wd) * g_te[i] - lr * a_g;
            worst = worst.max((out.grads[0].data()[i] - want).abs());
        }
    }
    worst
}

/// Exact mode on the non-quadratic toy against a central difference of the
/// composed objective `L_mtr(θ) + L_mte(θ − α∇L_mtr(θ))`.
pub fn exact_composed_error() -> f64 {
    let (lr, h) = (0.1, 1e-5);
    let t = [0.3, -0.7];
    let composed = |x: &[f64]| {
        let tr = toy_mtr(&params(x)).unwrap();
        let g = tr.grads[0].data();
        tr.value + toy_mte(&params(&[x[0] - lr * g[0], x[1] - lr * g[1]])).unwrap().value
    };
    let out = meta_gradient(&params(&t), &step(InnerOptimizer::Sgd, lr, 0.0), MetaGradMode::Exact, 1e-4, toy_mtr, toy_mte).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let (mut up, mut down) = (t, t);
        up[i] += h;
        down[i] -= h;
        let numeric = (composed(&up) - composed(&down)) / (2.0 * h);
        worst = worst.max((out.grads[0].data()[i] - numeric).abs());
    }
    worst
}
