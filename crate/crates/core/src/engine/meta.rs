//! Two-stage meta-gradient over any [`Parameters`] implementation.

use crate::autodiff::{add_grads, check_aligned, AdamConfig, AdamState, Parameters, Tensor};
use crate::error::{Error, Result};

use super::config::{InnerOptimizer, MetaGradMode};

/// How the adapted parameters θ′ are produced from the meta-train gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerStep {
    pub optimizer: InnerOptimizer,
    pub lr: f64,
    pub weight_decay: f64,
    pub adam: AdamConfig,
}

/// A loss value, its gradient in parameter order, and whatever else the
/// caller wants to carry out of the evaluation.
#[derive(Clone, Debug)]
pub struct Evaluated<T> {
    pub value: f64,
    pub grads: Vec<Tensor>,
    pub extra: T,
}

#[derive(Clone, Debug)]
pub struct MetaOutcome<P, A, B> {
    /// Gradient for the outer step, in parameter order.
    pub grads: Vec<Tensor>,
    /// θ′ after the inner step.
    pub adapted: P,
    pub train: Evaluated<A>,
    pub test: Evaluated<B>,
}

/// Clones `params` and advances the clone by one inner step. A fresh Adam
/// state is used every call; the original is never touched.
pub fn inner_update<P: Parameters + Clone>(params: &P, grads: &[Tensor], step: &InnerStep) -> Result<P> {
    check_aligned(params, grads)?;
    let mut adapted = params.clone();
    match step.optimizer {
        InnerOptimizer::Adam => {
            let mut state = AdamState::new(&adapted, step.adam);
            state.step(&mut adapted, grads, step.lr, step.weight_decay)?;
        }
        InnerOptimizer::Sgd => {
            for (p, g) in adapted.tensors_mut().into_iter().zip(grads) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    if step.weight_decay != 0.0 {
                        *pv -= step.lr * step.weight_decay * *pv;
                    }
                    *pv -= step.lr * gv;
                }
            }
        }
    }
    Ok(adapted)
}

fn axpy<P: Parameters + Clone>(params: &P, dir: &[Tensor], h: f64) -> P {
    let mut out = params.clone();
    for (p, d) in out.tensors_mut().into_iter().zip(dir) {
        p.data_mut().iter_mut().zip(d.data()).for_each(|(x, v)| *x += h * v);
    }
    out
}

/// `H·v` for the Hessian of the function whose gradient is `grad`, by a
/// central difference of gradients with step `rel_step / ‖v‖`.
pub fn hessian_vector<P, F>(params: &P, v: &[Tensor], rel_step: f64, mut grad: F) -> Result<Vec<Tensor>>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<Vec<Tensor>>,
{
    check_aligned(params, v)?;
    let norm = v.iter().flat_map(|t| t.data()).map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(v.iter().map(|t| Tensor::zeros(t.shape())).collect());
    }
    let h = rel_step / norm;
    let plus = grad(&axpy(params, v, h))?;
    let minus = grad(&axpy(params, v, -h))?;
    plus.iter()
        .zip(&minus)
        .map(|(a, b)| {
            let data = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) / (2.0 * h)).collect();
            Tensor::new(a.shape().to_vec(), data)
        })
        .collect()
}

/// Evaluates the meta-train objective at θ, takes the inner step to θ′,
/// evaluates the meta-test objective at θ′ and combines the gradients.
///
/// First-order: `∇L_mtr(θ) + ∇L_mte(θ′)`.
/// Exact (SGD inner step only): `∇L_mtr(θ) + ((1 − α·wd)·I − α·H_mtr(θ))·∇L_mte(θ′)`.
pub fn meta_gradient<P, A, B, F, G>(
    params: &P,
    step: &InnerStep,
    mode: MetaGradMode,
    hvp_step: f64,
    mut meta_train: F,
    mut meta_test: G,
) -> Result<MetaOutcome<P, A, B>>
where
    P: Parameters + Clone,
    F: FnMut(&P) -> Result<Evaluated<A>>,
    G: FnMut(&P) -> Result<Evaluated<B>>,
{
    if mode == MetaGradMode::Exact && step.optimizer != InnerOptimizer::Sgd {
        return Err(Error::Config("exact meta-gradients need a plain gradient-descent inner step".into()));
    }
    let train = meta_train(params)?;
    let adapted = inner_update(params, &train.grads, step)?;
    let test = meta_test(&adapted)?;
    check_aligned(params, &test.grads)?;
    let grads = match mode {
        MetaGradMode::FirstOrder => add_grads(&train.grads, &test.grads)?,
        MetaGradMode::Exact => {
            let hv = hessian_vector(params, &test.grads, hvp_step, |p| Ok(meta_train(p)?.grads))?;
            let shrink = 1.0 - step.lr * step.weight_decay;
            let back: Vec<Tensor> = test
                .grads
                .iter()
                .zip(&hv)
                .map(|(v, hv)| {
                    let data = v.data().iter().zip(hv.data()).map(|(a, b)| shrink * a - step.lr * b).collect();
                    Tensor::new(v.shape().to_vec(), data)
                })
                .collect::<Result<_>>()?;
            add_grads(&train.grads, &back)?
        }
    };
    Ok(MetaOutcome {
        grads,
        adapted,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    fn set(v: Vec<f64>) -> ParamSet {
        ParamSet::new(vec![("w".into(), Tensor::vector(v))])
    }

    fn adam_step(lr: f64, wd: f64) -> InnerStep {
        InnerStep {
            optimizer: InnerOptimizer::Adam,
            lr,
            weight_decay: wd,
            adam: AdamConfig::default(),
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let p = set(vec![0.5, -2.0]);
        let g = vec![Tensor::vector(vec![3.0, -1.0])];
        assert_eq!(inner_update(&p, &g, &adam_step(0.0, 5e-4)).unwrap(), p);
        let sgd = InnerStep { optimizer: InnerOptimizer::Sgd, ..adam_step(0.0, 0.0) };
        assert_eq!(inner_update(&p, &g, &sgd).unwrap(), p);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let p = set(vec![0.5, -2.0]);
        let g = vec![Tensor::zeros(&[2])];
        assert_eq!(inner_update(&p, &g, &adam_step(0.1, 0.0)).unwrap(), p);
        let moved = inner_update(&p, &g, &adam_step(0.1, 0.5)).unwrap();
        assert_eq!(moved.get("w").unwrap().data(), &[0.5 * 0.95, -2.0 * 0.95]);
    }

    #[test]
    fn original_untouched_and_state_fresh() {
        let p = set(vec![1.0, 1.0]);
        let sum = p.checksum();
        let g = vec![Tensor::vector(vec![1.0, -1.0])];
        let a = inner_update(&p, &g, &adam_step(0.01, 0.0)).unwrap();
        let b = inner_update(&p, &g, &adam_step(0.01, 0.0)).unwrap();
        assert_eq!(p.checksum(), sum);
        // a fresh state each call: identical results, first step of size lr
        assert_eq!(a, b);
        let w = a.get("w").unwrap().data();
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn exact_mode_rejects_adam() {
        let p = set(vec![1.0]);
        let f = |_: &ParamSet| Ok(Evaluated { value: 0.0, grads: vec![Tensor::zeros(&[1])], extra: () });
        let r = meta_gradient(&p, &adam_step(0.1, 0.0), MetaGradMode::Exact, 1e-4, f, f);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn zero_test_loss_reduces_to_train_gradient() {
        let p = set(vec![1.0, -3.0]);
        let mtr = |q: &ParamSet| {
            let w = q.get("w").unwrap().data();
            Ok(Evaluated {
                value: w.iter().map(|x| x * x).sum(),
                grads: vec![Tensor::vector(w.iter().map(|x| 2.0 * x).collect())],
                extra: (),
            })
        };
        let mte = |_: &ParamSet| Ok(Evaluated { value: 0.0, grads: vec![Tensor::zeros(&[2])], extra: () });
        let out = meta_gradient(&p, &adam_step(0.1, 0.0), MetaGradMode::FirstOrder, 1e-4, mtr, mte).unwrap();
        assert_eq!(out.grads[0].data(), &[2.0, -6.0]);
    }
}
