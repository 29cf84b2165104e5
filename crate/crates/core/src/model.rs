//! Query encoder, classifier, and the momentum key encoder.
//!
//! The encoder mean-pools token embeddings, applies two affine layers with an
//! activation in between, and L2-normalizes the result, so every feature it
//! emits is a unit vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Parameters, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embedding: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// The jointly optimized query encoder and classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryModel {
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], limit)
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, activation: Activation, rng: &mut R) -> Self {
        EncoderParams {
            embedding: uniform(rng, &[shape.vocab_size, shape.emb_dim], 1.0),
            w1: xavier(rng, shape.emb_dim, shape.hidden_dim),
            b1: Tensor::zeros(&[shape.hidden_dim]),
            w2: xavier(rng, shape.hidden_dim, shape.feature_dim),
            b2: Tensor::zeros(&[shape.feature_dim]),
            activation,
        }
    }

    pub fn shape(&self) -> EncoderShape {
        EncoderShape {
            vocab_size: self.embedding.rows(),
            emb_dim: self.embedding.cols(),
            hidden_dim: self.w1.cols(),
            feature_dim: self.w2.cols(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EncoderVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        EncoderVars {
            embedding: leaf(&self.embedding),
            w1: leaf(&self.w1),
            b1: leaf(&self.b1),
            w2: leaf(&self.w2),
            b2: leaf(&self.b2),
            activation: self.activation,
        }
    }
}

impl Parameters for EncoderParams {
    fn param_names(&self) -> Vec<String> {
        ["embedding", "w1", "b1", "w2", "b2"].map(String::from).to_vec()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.embedding, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.embedding, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl ClassifierParams {
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        ClassifierParams {
            w: xavier(rng, feature_dim, num_classes),
            b: Tensor::zeros(&[num_classes]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ClassifierVars {
        if trainable {
            ClassifierVars {
                w: tape.param(self.w.clone()),
                b: tape.param(self.b.clone()),
            }
        } else {
            ClassifierVars {
                w: tape.constant(self.w.clone()),
                b: tape.constant(self.b.clone()),
            }
        }
    }
}

impl Parameters for ClassifierParams {
    fn param_names(&self) -> Vec<String> {
        vec!["w".into(), "b".into()]
    }

    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }
}

impl QueryModel {
    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, activation: Activation, num_classes: usize, rng: &mut R) -> Self {
        let encoder = EncoderParams::init(shape, activation, rng);
        let classifier = ClassifierParams::init(shape.feature_dim, num_classes, rng);
        QueryModel { encoder, classifier }
    }

    pub fn bind(&self, tape: &mut Tape) -> QueryVars {
        QueryVars {
            encoder: self.encoder.bind(tape, true),
            classifier: self.classifier.bind(tape, true),
        }
    }
}

impl Parameters for QueryModel {
    fn param_names(&self) -> Vec<String> {
        let enc = self.encoder.param_names().into_iter().map(|n| format!("encoder.{n}"));
        let cls = self.classifier.param_names().into_iter().map(|n| format!("classifier.{n}"));
        enc.chain(cls).collect()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.classifier.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.classifier.tensors_mut());
        v
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub activation: Activation,
}

impl EncoderVars {
    pub fn vars(&self) -> [Var; 5] {
        [self.embedding, self.w1, self.b1, self.w2, self.b2]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClassifierVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct QueryVars {
    pub encoder: EncoderVars,
    pub classifier: ClassifierVars,
}

impl QueryVars {
    /// Gradients in [`QueryModel`] parameter order.
    pub fn grads(&self, g: &Gradients) -> Vec<Tensor> {
        self.vars().iter().map(|v| g.get(*v)).collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars().to_vec();
        v.extend([self.classifier.w, self.classifier.b]);
        v
    }
}

/// Records the encoder forward pass; returns a `batch × feature_dim` matrix
/// of unit-norm rows.
pub fn encode_on(tape: &mut Tape, enc: &EncoderVars, batch: &[Vec<usize>]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Data("cannot encode an empty batch".into()));
    }
    let pooled = tape.gather_mean(enc.embedding, batch)?;
    let h = tape.matmul(pooled, enc.w1)?;
    let h = tape.add_row(h, enc.b1)?;
    let h = match enc.activation {
        Activation::Tanh => tape.tanh(h),
        Activation::Identity => h,
    };
    let f = tape.matmul(h, enc.w2)?;
    let f = tape.add_row(f, enc.b2)?;
    Ok(tape.l2_normalize_rows(f))
}

pub fn classify_on(tape: &mut Tape, cls: &ClassifierVars, features: Var) -> Result<Var> {
    let z = tape.matmul(features, cls.w)?;
    tape.add_row(z, cls.b)
}

/// Mean softmax cross-entropy over the batch.
pub fn classification_loss_on(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

/// Gradient-free encoding.
pub fn encode(params: &EncoderParams, batch: &[Vec<usize>]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let f = encode_on(&mut tape, &vars, batch)?;
    Ok(tape.value(f).clone())
}

/// Gradient-free logits.
pub fn classify(params: &ClassifierParams, features: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let f = tape.constant(features.clone());
    let z = classify_on(&mut tape, &vars, f)?;
    Ok(tape.value(z).clone())
}

pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = tape.cross_entropy(z, labels)?;
    Ok(tape.value(l).item())
}

/// Exponential moving average `key ← λ·key + (1−λ)·query`, elementwise over
/// every tensor. Never touches a tape.
pub fn momentum_update(key: &mut EncoderParams, query: &EncoderParams, lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("momentum must lie in [0, 1], got {lambda}")));
    }
    if key.shapes() != query.shapes() {
        return Err(Error::ShapeMismatch {
            op: "momentum_update",
            left: key.embedding.shape().to_vec(),
            right: query.embedding.shape().to_vec(),
        });
    }
    for (k, q) in key.tensors_mut().into_iter().zip(query.tensors()) {
        for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = lambda * *kv + (1.0 - lambda) * qv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, DEFAULT_STEP};
    use crate::autodiff::l2_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_shape() -> EncoderShape {
        EncoderShape {
            vocab_size: 20,
            emb_dim: 6,
            hidden_dim: 5,
            feature_dim: 4,
        }
    }

    fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn single_token_identity_net_returns_normalized_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = EncoderParams::init(
            EncoderShape { vocab_size: 5, emb_dim: 3, hidden_dim: 3, feature_dim: 3 },
            Activation::Identity,
            &mut rng,
        );
        enc.w1 = eye(3);
        enc.w2 = eye(3);
        let f = encode(&enc, &[vec![4]]).unwrap();
        let row = enc.embedding.row(4);
        let n = l2_norm(row);
        for (a, b) in f.row(0).iter().zip(row) {
            assert!((a - b / n).abs() < 1e-15);
        }
    }

    #[test]
    fn features_are_unit_norm_and_duplicates_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderParams::init(tiny_shape(), Activation::Tanh, &mut rng);
        let batch = vec![vec![2, 3, 4], vec![5, 0, 6], vec![2, 3, 4], vec![19]];
        let f = encode(&enc, &batch).unwrap();
        for i in 0..4 {
            assert!((l2_norm(f.row(i)) - 1.0).abs() < 1e-6);
        }
        assert_eq!(f.row(0), f.row(2));
    }

    #[test]
    fn padding_is_ignored_in_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderParams::init(tiny_shape(), Activation::Tanh, &mut rng);
        let f = encode(&enc, &[vec![3, 7], vec![3, 0, 7, 0]]).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert!(encode(&enc, &[vec![0, 0]]).is_err());
        assert!(encode(&enc, &[vec![20]]).is_err());
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let cls = ClassifierParams {
            w: Tensor::zeros(&[4, 3]),
            b: Tensor::zeros(&[3]),
        };
        let z = classify(&cls, &Tensor::matrix(2, 4, vec![0.5; 8]).unwrap()).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_feature_selects_weight_row() {
        let w = Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let cls = ClassifierParams { w, b: Tensor::zeros(&[2]) };
        let z = classify(&cls, &Tensor::matrix(1, 3, vec![0., 1., 0.]).unwrap()).unwrap();
        assert_eq!(z.data(), &[3., 4.]);
    }

    #[test]
    fn classification_loss_reference_values() {
        let uniform = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!((classification_loss(&uniform, &[0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let confident = Tensor::matrix(1, 2, vec![20.0, 0.0]).unwrap();
        assert!(classification_loss(&confident, &[0]).unwrap() < 1e-8);
    }

    #[test]
    fn classification_loss_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let logits = Tensor::matrix(4, 3, data.clone()).unwrap();
        let labels = [2, 0, 1, 1];
        let mut expected = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &data[i * 3..i * 3 + 3];
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expected += -(row[y].exp() / denom).ln();
        }
        expected /= 4.0;
        assert!((classification_loss(&logits, &labels).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn classify_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = QueryModel::init(tiny_shape(), Activation::Tanh, 3, &mut rng);
        let batch = vec![vec![2, 3, 4], vec![5, 6], vec![7, 8, 9, 10]];
        let labels = [0, 2, 1];
        let eval = |m: &QueryModel| -> Result<(f64, Vec<Tensor>)> {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape);
            let f = encode_on(&mut tape, &vars.encoder, &batch)?;
            let z = classify_on(&mut tape, &vars.classifier, f)?;
            let l = classification_loss_on(&mut tape, z, &labels)?;
            let g = tape.backward(l)?;
            Ok((tape.value(l).item(), vars.grads(&g)))
        };
        let (_, grads) = eval(&model).unwrap();
        let r = check_gradients(&model, &grads, |m| Ok(eval(m)?.0), DEFAULT_STEP).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn momentum_fixed_points_and_default_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = EncoderParams::init(tiny_shape(), Activation::Tanh, &mut rng);
        let k0 = EncoderParams::init(tiny_shape(), Activation::Tanh, &mut rng);

        let mut k = k0.clone();
        momentum_update(&mut k, &q, 1.0).unwrap();
        assert_eq!(k, k0);

        momentum_update(&mut k, &q, 0.0).unwrap();
        assert_eq!(k, q);

        let mut zeros = q.clone();
        zeros.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        let mut ones = q.clone();
        ones.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(1.0));
        momentum_update(&mut zeros, &ones, 0.999).unwrap();
        assert!(zeros.tensors().iter().all(|t| t.data().iter().all(|&v| (v - 0.001).abs() < 1e-15)));
    }

    #[test]
    fn momentum_rejects_structural_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = EncoderParams::init(tiny_shape(), Activation::Tanh, &mut rng);
        let mut k = EncoderParams::init(EncoderShape { feature_dim: 3, ..tiny_shape() }, Activation::Tanh, &mut rng);
        assert!(momentum_update(&mut k, &q, 0.5).is_err());
    }

    #[test]
    fn clone_is_isolated() {
        use crate::autodiff::{AdamConfig, AdamState};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let original = QueryModel::init(tiny_shape(), Activation::Tanh, 2, &mut rng);
        let sum = original.checksum();
        let mut copy = original.clone();
        let mut copy2 = copy.clone();
        let grads: Vec<Tensor> = copy.tensors().iter().map(|t| Tensor::full(t.shape(), 0.3)).collect();
        AdamState::new(&copy, AdamConfig::default()).step(&mut copy, &grads, 0.1, 0.0).unwrap();
        AdamState::new(&copy2, AdamConfig::default()).step(&mut copy2, &grads, 0.2, 0.0).unwrap();
        assert_eq!(original.checksum(), sum);
        assert_ne!(copy.checksum(), sum);
        assert_ne!(copy.checksum(), copy2.checksum());
    }
}
