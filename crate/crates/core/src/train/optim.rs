//! Loss, optimizer and learning-rate schedule.

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Mean squared error over the rows flagged in `mask` and all columns,
/// with its gradient with respect to `pred`.
pub fn masked_mse(pred: &Matrix, target: &Matrix, mask: &[bool]) -> Result<(f64, Matrix)> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() || mask.len() != pred.rows() {
        return Err(Error::Dimension("prediction, target and mask disagree".into()));
    }
    let count = mask.iter().filter(|&&m| m).count() * pred.cols();
    if count == 0 {
        return Err(Error::Validation(vec!["loss mask selects no outputs".into()]));
    }
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut sum = 0.0;
    for i in (0..pred.rows()).filter(|&i| mask[i]) {
        let (p, t) = (pred.row(i), target.row(i));
        let g = grad.row_mut(i);
        for c in 0..p.len() {
            let d = p[c] - t[c];
            sum += d * d;
            g[c] = 2.0 * d / count as f64;
        }
    }
    Ok((sum / count as f64, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    /// State for tensors of the given sizes.
    pub fn new(sizes: &[usize]) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "tensor count");
        assert_eq!(grads.len(), self.m.len(), "tensor count");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            assert_eq!(p.len(), g.len(), "tensor shape");
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Exponential decay from `start` to `end` over `decay_steps`, then flat.
pub fn lr_schedule(step: usize, decay_steps: usize, start: f64, end: f64) -> f64 {
    if decay_steps == 0 {
        return end;
    }
    let f = step.min(decay_steps) as f64 / decay_steps as f64;
    start * (end / start).powf(f)
}
