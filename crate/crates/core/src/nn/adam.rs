use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One descent step on `params` along `grads`. A non-finite gradient
    /// leaves everything untouched and reports `path(index)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], path: impl Fn(usize) -> String) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch { context: "adam step", expected: self.m.len(), got: grads.len() });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { path: path(i) });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}
