/// Per-coordinate running mean and variance (Welford).
///
/// The standard deviation used for scaling is floored at `1e-8` times the
/// coordinate's root mean square, so inputs of any physical scale map to
/// unit variance. Normalized values are clipped to `±CLIP`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub frozen: bool,
}

impl RunningNorm {
    pub const FLOOR: f64 = 1e-8;
    pub const CLIP: f64 = 10.0;

    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], frozen: false }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for (i, &v) in x.iter().enumerate() {
            let d = v - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (v - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        let var = if self.count > 0 { self.m2[i] / self.count as f64 } else { 0.0 };
        let rms = (var + self.mean[i] * self.mean[i]).sqrt();
        var.sqrt().max(Self::FLOOR * rms)
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let s = self.std(i);
                if s > 0.0 {
                    ((v - self.mean[i]) / s).clamp(-Self::CLIP, Self::CLIP)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Update (unless frozen) and normalize.
    pub fn observe(&mut self, x: &[f64]) -> Vec<f64> {
        self.update(x);
        self.normalize(x)
    }
}
