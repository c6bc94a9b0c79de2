use crate::autodiff::Tensor;
use crate::scalar::lit;
use crate::Scalar;

/// Adam with bias correction and a constant step size.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, params: &[Tensor<T>]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            v: params.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>]) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2): (T, T) = (lit(self.beta1), lit(self.beta2));
        let c1: T = lit(1.0 - self.beta1.powi(t));
        let c2: T = lit(1.0 - self.beta2.powi(t));
        let (lr, eps): (T, T) = (lit(self.learning_rate), lit(self.eps));
        let one = T::one();
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *x = *x - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`
/// (no-op for `max_norm <= 0`). Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale: T = lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g = *g * scale);
    }
    norm
}
