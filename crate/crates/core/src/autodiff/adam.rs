use serde::{Deserialize, Serialize};

use super::params::{check_aligned, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set, with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub(crate) m: Vec<Tensor>,
    pub(crate) v: Vec<Tensor>,
    pub(crate) step: u64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn from_parts(config: AdamConfig, m: Vec<Tensor>, v: Vec<Tensor>, step: u64) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| !a.same_shape(b)) {
            return Err(Error::Checkpoint("adam moment buffers disagree".into()));
        }
        Ok(AdamState { config, m, v, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// One AdamW update: `p -= lr*wd*p`, then the bias-corrected moment step.
    pub fn step<P: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &[Tensor],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if lr.is_nan() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        check_aligned(params, grads)?;
        if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| !m.same_shape(g)) {
            return Err(Error::ShapeMismatch {
                op: "adam state",
                left: self.m.first().map(|t| t.shape().to_vec()).unwrap_or_default(),
                right: grads.first().map(|t| t.shape().to_vec()).unwrap_or_default(),
            });
        }
        let names = params.param_names();
        for (name, g) in names.iter().zip(grads) {
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}` contains {bad}")));
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                if weight_decay != 0.0 {
                    pd[i] -= lr * weight_decay * pd[i];
                }
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent: `p -= lr * g`.
pub fn sgd_step<P: Parameters + ?Sized>(params: &mut P, grads: &[Tensor], lr: f64) -> Result<()> {
    check_aligned(params, grads)?;
    for (p, g) in params.tensors_mut().into_iter().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamSet;

    fn scalar_param(x: f64) -> ParamSet {
        ParamSet::new(vec![("x".into(), Tensor::vector(vec![x]))])
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = ParamSet::new(vec![("w".into(), Tensor::vector(vec![0.3, -1.2, 4.0]))]);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &[Tensor::zeros(&[3])], 0.1, 0.0).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.m[0], Tensor::zeros(&[3]));
        assert_eq!(st.v[0], Tensor::zeros(&[3]));
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut p = ParamSet::new(vec![("w".into(), Tensor::vector(vec![1.0, 1.0, 1.0, 1.0]))]);
        let g = Tensor::vector(vec![0.5, -3.0, 1e-3, -1e-4]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, std::slice::from_ref(&g), 0.01, 0.0).unwrap();
        for (after, gv) in p.get("w").unwrap().data().iter().zip(g.data()) {
            let delta = after - 1.0;
            assert!(delta * gv < 0.0);
            // first bias-corrected step is lr * g/|g| up to epsilon
            assert!((delta.abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..100 {
            let x = p.get("x").unwrap().data()[0];
            st.step(&mut p, &[Tensor::vector(vec![2.0 * x])], 0.1, 0.0).unwrap();
        }
        assert!(p.get("x").unwrap().data()[0].abs() < 0.1);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = scalar_param(2.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        st.step(&mut p, &[Tensor::vector(vec![0.0])], 0.1, 0.5).unwrap();
        // moments stay zero, only the decay term acts
        assert!((p.get("x").unwrap().data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = ParamSet::new(vec![
            ("ok".into(), Tensor::vector(vec![0.0])),
            ("bad".into(), Tensor::vector(vec![0.0])),
        ]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let err = st
            .step(&mut p, &[Tensor::vector(vec![1.0]), Tensor::vector(vec![f64::NAN])], 0.1, 0.0)
            .unwrap_err();
        assert!(err.to_string().contains("`bad`"), "{err}");
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut p = scalar_param(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        for k in 1..=5 {
            st.step(&mut p, &[Tensor::vector(vec![1.0])], 0.01, 0.0).unwrap();
            assert_eq!(st.step_count(), k);
        }
    }
}
