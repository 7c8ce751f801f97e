use super::{ParamStore, Real};

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and only trainable parameters are updated.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        if self.m.is_empty() {
            for p in store.iter_mut() {
                self.m.push(vec![T::zero(); p.data.len()]);
                self.v.push(vec![T::zero(); p.data.len()]);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let one = T::one();
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
