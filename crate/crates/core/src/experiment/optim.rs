//! Adaptive moment estimation with a fixed step size.

use crate::autograd::{Mat, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
        }
    }

    /// One bias-corrected update; parameters without a gradient only decay
    /// their moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Mat>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_ref();
            for j in 0..p.data().len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                let mj = self.beta1 * m.data()[j] + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * v.data()[j] + (1.0 - self.beta2) * gj * gj;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                p.data_mut()[j] -= self.learning_rate * (mj / c1) / ((vj / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Global L2 norm over all gradients.
pub fn grad_norm(grads: &[Option<Mat>]) -> f64 {
    grads.iter().flatten().map(Mat::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm = 0` leaves them untouched.
pub fn clip_grad_norm(grads: &mut [Option<Mat>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
    norm
}
