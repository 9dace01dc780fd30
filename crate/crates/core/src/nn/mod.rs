//! Small dense networks with hand-written reverse mode, Adam, and the policy
//! heads used by the agents.
//!
//! Batches are matrices with one sample per column.

mod adam;
mod heads;
mod norm;

pub use adam::AdamState;
pub use heads::{
    categorical_entropy, categorical_logprob_sample, gaussian_entropy, gaussian_log_prob, gaussian_logprob_sample,
    GaussianActor, LOG_STD_INIT, LOG_STD_MAX, LOG_STD_MIN,
};
pub use norm::RunningNorm;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Softmax => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Fully connected network: tanh on hidden layers, `output` on the last.
#[derive(Clone, Debug)]
pub struct DenseNet {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    output: Activation,
    version: u64,
}

// The version counter only guards caches; it is not part of the network.
impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.output == other.output && self.weights == other.weights && self.biases == other.biases
    }
}

/// Activations recorded by [`DenseNet::forward`].
#[derive(Clone, Debug)]
pub struct Cache {
    version: u64,
    /// Input followed by every hidden layer's output.
    acts: Vec<DMatrix<f64>>,
    /// Final output (after the output activation).
    pub output: DMatrix<f64>,
}

/// Column-wise softmax with max subtraction.
pub fn softmax_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|x| *x = (*x - max).exp());
        let s = col.sum();
        col /= s;
    }
    out
}

impl DenseNet {
    /// All-zero network with layer sizes `sizes = [input, hidden..., output]`.
    pub fn zeros(sizes: &[usize], output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let weights = sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = sizes[1..].iter().map(|&n| DVector::zeros(n)).collect();
        Ok(Self { weights, biases, output, version: 0 })
    }

    /// Orthogonal weights (gain `√2` on hidden layers, `output_gain` on the
    /// last), zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        output: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let last = net.weights.len() - 1;
        for (i, w) in net.weights.iter_mut().enumerate() {
            let gain = if i == last { output_gain } else { std::f64::consts::SQRT_2 };
            *w = orthogonal_matrix(w.nrows(), w.ncols(), rng) * gain;
        }
        Ok(net)
    }

    /// Gaussian weights with standard deviation `1/√fan_in`, zero biases.
    pub fn gaussian<R: Rng + ?Sized>(sizes: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        for w in net.weights.iter_mut() {
            let s = 1.0 / (w.ncols() as f64).sqrt();
            w.apply(|x| *x = s * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.nrows())
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    /// Bumped on every parameter change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().zip(&self.biases).map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Flat parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::ShapeMismatch { context: "network parameters", expected: self.num_params(), got: p.len() });
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = p[i];
                    i += 1;
                }
            }
            for x in b.iter_mut() {
                *x = p[i];
                i += 1;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Human-readable location of flat parameter `idx`.
    pub fn param_path(&self, mut idx: usize) -> String {
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if idx < w.len() {
                return format!("layer{l}.weight[{},{}]", idx / w.ncols(), idx % w.ncols());
            }
            idx -= w.len();
            if idx < b.len() {
                return format!("layer{l}.bias[{idx}]");
            }
            idx -= b.len();
        }
        format!("out-of-range[{idx}]")
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Cache> {
        if x.nrows() != self.input_dim() {
            return Err(Error::ShapeMismatch { context: "network input", expected: self.input_dim(), got: x.nrows() });
        }
        let last = self.weights.len() - 1;
        let mut acts = vec![x.clone()];
        let mut output = DMatrix::zeros(0, 0);
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if i < last {
                z.apply(|v| *v = v.tanh());
                acts.push(z);
            } else {
                output = match self.output {
                    Activation::Linear => z,
                    Activation::Softmax => softmax_columns(&z),
                };
            }
        }
        Ok(Cache { version: self.version, acts, output })
    }

    /// Single-sample forward pass.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(cache.output.column(0).iter().copied().collect())
    }

    /// Parameter gradients for a gradient on the network output.
    pub fn backward(&self, cache: &Cache, grad_out: &DMatrix<f64>) -> Result<Vec<f64>> {
        let dz = match self.output {
            Activation::Linear => grad_out.clone(),
            Activation::Softmax => {
                let p = &cache.output;
                let mut dz = grad_out.component_mul(p);
                for c in 0..dz.ncols() {
                    let s: f64 = dz.column(c).sum();
                    for r in 0..dz.nrows() {
                        dz[(r, c)] -= p[(r, c)] * s;
                    }
                }
                dz
            }
        };
        self.backward_logits(cache, &dz)
    }

    /// Parameter gradients for a gradient on the last layer's pre-activation.
    pub fn backward_logits(&self, cache: &Cache, grad_logits: &DMatrix<f64>) -> Result<Vec<f64>> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        let batch = cache.acts[0].ncols();
        if grad_logits.nrows() != self.output_dim() || grad_logits.ncols() != batch {
            return Err(Error::ShapeMismatch {
                context: "output gradient",
                expected: self.output_dim() * batch,
                got: grad_logits.len(),
            });
        }
        let n = self.weights.len();
        let mut per_layer: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(n);
        let mut dz = grad_logits.clone();
        for i in (0..n).rev() {
            let a = &cache.acts[i];
            let dw = &dz * a.transpose();
            let db = dz.column_sum();
            if i > 0 {
                let mut da = self.weights[i].transpose() * &dz;
                da.zip_apply(a, |d, act| *d *= 1.0 - act * act);
                dz = da;
            }
            per_layer.push((dw, db));
        }
        per_layer.reverse();
        let mut out = Vec::with_capacity(self.num_params());
        for (dw, db) in &per_layer {
            for r in 0..dw.nrows() {
                out.extend(dw.row(r).iter());
            }
            out.extend(db.iter());
        }
        Ok(out)
    }
}

/// `rows × cols` matrix with orthonormal rows or columns (whichever is fewer).
pub fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn zero_net_gives_zero() {
        let net = DenseNet::zeros(&[3, 5, 2], Activation::Linear).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn equal_logits_give_uniform() {
        let net = DenseNet::zeros(&[3, 4, 6], Activation::Softmax).unwrap();
        let p = net.predict(&[0.3, 0.1, -1.0]).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn forward_matches_hand_evaluation() {
        let mut r = rng();
        let net = DenseNet::gaussian(&[2, 3, 2], Activation::Softmax, &mut r).unwrap();
        let x = [0.7, -1.3];
        let (w0, b0, w1, b1) = (&net.weights[0], &net.biases[0], &net.weights[1], &net.biases[1]);
        let mut h = [0.0; 3];
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = (w0[(i, 0)] * x[0] + w0[(i, 1)] * x[1] + b0[i]).tanh();
        }
        let mut z = [0.0; 2];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = b1[o] + (0..3).map(|i| w1[(o, i)] * h[i]).sum::<f64>();
        }
        let e = [z[0].exp(), z[1].exp()];
        let p = net.predict(&x).unwrap();
        assert!((p[0] - e[0] / (e[0] + e[1])).abs() < 1e-14);
        assert!((p[1] - e[1] / (e[0] + e[1])).abs() < 1e-14);
    }

    #[test]
    fn params_round_trip_and_paths() {
        let mut r = rng();
        let net = DenseNet::gaussian(&[4, 8, 3], Activation::Linear, &mut r).unwrap();
        let p = net.params();
        assert_eq!(p.len(), 4 * 8 + 8 + 8 * 3 + 3);
        let mut other = DenseNet::zeros(&[4, 8, 3], Activation::Linear).unwrap();
        other.set_params(&p).unwrap();
        assert_eq!(other.params(), p);
        assert_eq!(net.param_path(0), "layer0.weight[0,0]");
        assert_eq!(net.param_path(5), "layer0.weight[1,1]");
        assert_eq!(net.param_path(32), "layer0.bias[0]");
        assert_eq!(net.param_path(40), "layer1.weight[0,0]");
        assert_eq!(net.param_path(66), "layer1.bias[2]");
    }

    #[test]
    fn stale_cache_rejected() {
        let mut r = rng();
        let mut net = DenseNet::gaussian(&[2, 3, 1], Activation::Linear, &mut r).unwrap();
        let cache = net.forward(&DMatrix::from_element(2, 1, 0.5)).unwrap();
        let p = net.params();
        net.set_params(&p).unwrap();
        assert!(matches!(net.backward(&cache, &DMatrix::from_element(1, 1, 1.0)), Err(Error::StaleCache)));
    }

    #[test]
    fn backward_is_linear_and_zero_preserving() {
        let mut r = rng();
        let net = DenseNet::gaussian(&[4, 8, 3], Activation::Softmax, &mut r).unwrap();
        let x = DMatrix::from_fn(4, 5, |_, _| r.sample(StandardNormal));
        let cache = net.forward(&x).unwrap();
        let g1 = DMatrix::from_fn(3, 5, |_, _| r.sample(StandardNormal));
        let g2 = DMatrix::from_fn(3, 5, |_, _| r.sample(StandardNormal));
        let a = net.backward(&cache, &g1).unwrap();
        let b = net.backward(&cache, &g2).unwrap();
        let c = net.backward(&cache, &(&g1 + &g2)).unwrap();
        for i in 0..a.len() {
            assert!((a[i] + b[i] - c[i]).abs() < 1e-12);
        }
        let z = net.backward(&cache, &DMatrix::zeros(3, 5)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_init_is_semi_orthogonal() {
        let mut r = rng();
        let net = DenseNet::orthogonal(&[10, 64, 28, 6], Activation::Softmax, 0.01, &mut r).unwrap();
        let gains = [2.0, 2.0, 1e-4];
        for (w, g2) in net.weights.iter().zip(gains) {
            let gram = if w.nrows() >= w.ncols() { w.transpose() * w } else { w * w.transpose() };
            let eye = DMatrix::<f64>::identity(gram.nrows(), gram.ncols()) * g2;
            assert!((gram - eye).amax() < 1e-6 * g2.max(1.0));
        }
        assert!(net.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }
}
