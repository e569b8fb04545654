use crate::error::{arg, Result};

use super::model::ParameterSet;
use super::tensor::{Real, Tensor};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>, lr: f64) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One update of `params` along `grads`.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != self.m.len() || params.tensors().len() != self.m.len() {
            return arg(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.tensors().len(),
                grads.len()
            ));
        }
        for (i, (p, g)) in params.tensors().iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return arg(format!(
                    "tensor {i}: optimizer shape {:?}, parameter {:?}, gradient {:?}",
                    self.m[i].shape(),
                    p.shape(),
                    g.shape()
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let c1 = T::lit(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = T::lit(1.0 / (1.0 - self.beta2.powi(t)));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for ((p, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let mhat = *mv * c1;
                let vhat = *vv * c2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
