//! Adam and plain SGD over a fixed list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::model::{PickNet, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown optimizer `{other}` (expected `adam` or `sgd`)"
            ))),
        }
    }
}

/// First/second-moment state lives here; parameters stay in the network.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, param_shapes: &[Vec<usize>]) -> Self {
        let zeros: Vec<Tensor<T>> = param_shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn for_network(kind: OptimizerKind, lr: f64, net: &PickNet<T>) -> Self {
        let shapes: Vec<Vec<usize>> = net
            .trainable_params()
            .iter()
            .map(|t| t.shape.clone())
            .collect();
        Self::new(kind, lr, &shapes)
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// One update over parameter/gradient pairs in the fixed order used at
    /// construction.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64_lossy(self.lr);
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data.iter_mut().zip(&g.data) {
                        *pv -= lr * *gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::from_f64_lossy(self.beta1);
                let b2 = T::from_f64_lossy(self.beta2);
                let one = T::one();
                let eps = T::from_f64_lossy(self.eps);
                let c1 = T::from_f64_lossy(1.0 / (1.0 - self.beta1.powi(self.step as i32)));
                let c2 = T::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(self.step as i32)));
                let lr = T::from_f64_lossy(self.lr);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for ((pv, gv), (mv, vv)) in p
                        .data
                        .iter_mut()
                        .zip(&g.data)
                        .zip(m.data.iter_mut().zip(v.data.iter_mut()))
                    {
                        *mv = b1 * *mv + (one - b1) * *gv;
                        *vv = b2 * *vv + (one - b2) * *gv * *gv;
                        let mhat = *mv * c1;
                        let vhat = *vv * c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quadratic toy objective with a closed-form minimizer.
    fn toy_loss_grad(w: &Tensor<f64>) -> (f64, Tensor<f64>) {
        let (a, b) = (w.data[0], w.data[1]);
        let loss = (a - 3.0).powi(2) + 10.0 * (b + 2.0).powi(2);
        let grad = Tensor::from_vec(&[2], vec![2.0 * (a - 3.0), 20.0 * (b + 2.0)]);
        (loss, grad)
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut w = Tensor::<f64>::zeros(&[2]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, &[vec![2]]);
        for _ in 0..5000 {
            let (_, g) = toy_loss_grad(&w);
            opt.step(&mut [&mut w], std::slice::from_ref(&g));
        }
        assert!(
            (w.data[0] - 3.0).abs() < 1e-6 && (w.data[1] + 2.0).abs() < 1e-6,
            "converged to {:?}",
            w.data
        );
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        let mut w = Tensor::<f64>::zeros(&[2]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.02, &[vec![2]]);
        for _ in 0..5000 {
            let (_, g) = toy_loss_grad(&w);
            opt.step(&mut [&mut w], std::slice::from_ref(&g));
        }
        assert!((w.data[0] - 3.0).abs() < 1e-6 && (w.data[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut w = Tensor::<f64>::from_vec(&[2], vec![1.5, -0.5]);
        let before = w.clone();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &[vec![2]]);
        let zero = Tensor::<f64>::zeros(&[2]);
        for _ in 0..10 {
            opt.step(&mut [&mut w], std::slice::from_ref(&zero));
        }
        assert_eq!(w, before);
    }
}
