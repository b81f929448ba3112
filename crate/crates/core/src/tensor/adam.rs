//! Adam with bias correction, no weight decay.

use super::Scalar;

/// Optimizer state over an indexed parameter list; slot `i` tracks the
/// parameter registered with length `lens[i]`.
pub struct AdamState<S: Scalar> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(lens: &[usize], lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: lens.iter().map(|&l| vec![S::zero(); l]).collect(),
            v: lens.iter().map(|&l| vec![S::zero(); l]).collect(),
        }
    }

    /// One update over all slots. `grads[i] = None` is treated as a zero
    /// gradient (moments still decay).
    pub fn apply(&mut self, params: &mut [&mut [S]], grads: &[Option<Vec<S>>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let one = S::one();
        let corr1 = S::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = S::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = S::from_f64(self.lr);
        let eps = S::from_f64(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            debug_assert_eq!(p.len(), m.len());
            for (j, pj) in p.iter_mut().enumerate() {
                let g = grads[i].as_ref().map(|g| g[j]).unwrap_or_else(S::zero);
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                *pj = *pj - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
