use super::tensor::{checksum_all, Tensor};
use crate::error::{Error, Result};

/// A fixed, ordered collection of named parameter tensors.
pub trait Parameters {
    fn param_names(&self) -> Vec<String>;
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn checksum(&self) -> u64 {
        checksum_all(self.tensors())
    }

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }
}

/// Plain named parameter list, handy for toy models.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        ParamSet { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl Parameters for ParamSet {
    fn param_names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }
}

/// Checks that `grads` lines up with the parameters of `params` one-to-one.
pub fn check_aligned<P: Parameters + ?Sized>(params: &P, grads: &[Tensor]) -> Result<()> {
    let tensors = params.tensors();
    if tensors.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            op: "gradient list",
            left: vec![tensors.len()],
            right: vec![grads.len()],
        });
    }
    for (p, g) in tensors.iter().zip(grads) {
        if !p.same_shape(g) {
            return Err(Error::ShapeMismatch {
                op: "gradient",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Elementwise `a + b` over two aligned gradient lists.
pub fn add_grads(a: &[Tensor], b: &[Tensor]) -> Result<Vec<Tensor>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if !x.same_shape(y) {
                return Err(Error::ShapeMismatch {
                    op: "add_grads",
                    left: x.shape().to_vec(),
                    right: y.shape().to_vec(),
                });
            }
            let data = x.data().iter().zip(y.data()).map(|(u, v)| u + v).collect();
            Tensor::new(x.shape().to_vec(), data)
        })
        .collect()
}
