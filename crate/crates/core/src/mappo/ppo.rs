//! Advantage estimation and the clipped-surrogate / value updates.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::nn::{categorical_entropy, gaussian_entropy, AdamState, DenseNet, GaussianActor};

/// `A_t = Σ_{l≥0} (γλ)^l δ_{t+l}` with `δ_t = r_t + γ V_{t+1} − V_t`.
/// `values` carries the bootstrap value as its last entry.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::ShapeMismatch { context: "gae values", expected: rewards.len() + 1, got: values.len() });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Shift and scale to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return Vec::new();
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 {
        adv.iter().map(|a| (a - mean) / std).collect()
    } else {
        vec![0.0; adv.len()]
    }
}

/// Stored actions of one minibatch.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionBatch {
    Discrete(Vec<usize>),
    /// One action per column.
    Continuous(DMatrix<f64>),
}

/// Samples for one actor update; observations are one column per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub obs: DMatrix<f64>,
    pub actions: ActionBatch,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ActorStats {
    /// Minimized loss: `−(surrogate + c·entropy)`.
    pub loss: f64,
    /// Mean clipped surrogate.
    pub surrogate: f64,
    pub entropy: f64,
    /// Fraction of samples on the clipped branch.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

/// Derivative of `min(ρA, clip(ρ)A)` with respect to `log π` and the term itself.
fn clipped_term(ratio: f64, adv: f64, clip: f64) -> (f64, f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped, false)
    } else {
        (clipped, 0.0, true)
    }
}

/// A policy that can be trained with the clipped surrogate.
pub trait PpoActor {
    /// Loss statistics and the gradient of the loss with respect to `params()`.
    fn surrogate(&self, mb: &Minibatch, clip: f64, entropy_coef: f64) -> Result<(ActorStats, Vec<f64>)>;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]) -> Result<()>;
    fn param_path(&self, idx: usize) -> String;
}

impl PpoActor for DenseNet {
    fn surrogate(&self, mb: &Minibatch, clip: f64, entropy_coef: f64) -> Result<(ActorStats, Vec<f64>)> {
        let ActionBatch::Discrete(actions) = &mb.actions else {
            return Err(invalid("categorical actor needs discrete actions"));
        };
        let cache = self.forward(&mb.obs)?;
        let p = &cache.output;
        let b = actions.len();
        let bf = b as f64;
        let mut grad = DMatrix::zeros(p.nrows(), b);
        let mut st = ActorStats::default();
        for j in 0..b {
            let col: Vec<f64> = p.column(j).iter().copied().collect();
            let a = actions[j];
            let ratio = (col[a].ln() - mb.old_logp[j]).exp();
            let (term, dlogp, clipped) = clipped_term(ratio, mb.advantages[j], clip);
            let h = categorical_entropy(&col);
            st.surrogate += term / bf;
            st.entropy += h / bf;
            st.mean_ratio += ratio / bf;
            st.clip_fraction += f64::from(u8::from(clipped)) / bf;
            for i in 0..col.len() {
                let onehot = if i == a { 1.0 } else { 0.0 };
                let lp = if col[i] > 0.0 { col[i].ln() } else { 0.0 };
                let dh = -col[i] * (lp + h);
                grad[(i, j)] = -(dlogp * (onehot - col[i]) + entropy_coef * dh) / bf;
            }
        }
        st.loss = -(st.surrogate + entropy_coef * st.entropy);
        if !st.loss.is_finite() {
            return Err(Error::NonFinite { path: "scheduler loss".into() });
        }
        Ok((st, self.backward_logits(&cache, &grad)?))
    }

    fn params(&self) -> Vec<f64> {
        DenseNet::params(self)
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        DenseNet::set_params(self, p)
    }

    fn param_path(&self, idx: usize) -> String {
        DenseNet::param_path(self, idx)
    }
}

impl PpoActor for GaussianActor {
    fn surrogate(&self, mb: &Minibatch, clip: f64, entropy_coef: f64) -> Result<(ActorStats, Vec<f64>)> {
        let ActionBatch::Continuous(actions) = &mb.actions else {
            return Err(invalid("gaussian actor needs continuous actions"));
        };
        let cache = self.net.forward(&mb.obs)?;
        let mean = &cache.output;
        let (d, b) = (mean.nrows(), mean.ncols());
        if actions.nrows() != d || actions.ncols() != b {
            return Err(Error::ShapeMismatch { context: "gaussian actions", expected: d * b, got: actions.len() });
        }
        let bf = b as f64;
        let inv_var: Vec<f64> = self.log_std.iter().map(|s| (-2.0 * s).exp()).collect();
        let mut grad_mean = DMatrix::zeros(d, b);
        let mut grad_log_std = vec![0.0; d];
        let mut st = ActorStats::default();
        let h = gaussian_entropy(&self.log_std);
        for j in 0..b {
            let mut logp = 0.0;
            for i in 0..d {
                let z2 = (actions[(i, j)] - mean[(i, j)]).powi(2) * inv_var[i];
                logp += -0.5 * z2 - self.log_std[i] - 0.918_938_533_204_672_7;
            }
            let ratio = (logp - mb.old_logp[j]).exp();
            let (term, dlogp, clipped) = clipped_term(ratio, mb.advantages[j], clip);
            st.surrogate += term / bf;
            st.mean_ratio += ratio / bf;
            st.clip_fraction += f64::from(u8::from(clipped)) / bf;
            for i in 0..d {
                let diff = actions[(i, j)] - mean[(i, j)];
                grad_mean[(i, j)] = -dlogp * diff * inv_var[i] / bf;
                grad_log_std[i] -= dlogp * (diff * diff * inv_var[i] - 1.0) / bf;
            }
        }
        st.entropy = h;
        st.loss = -(st.surrogate + entropy_coef * h);
        if !st.loss.is_finite() {
            return Err(Error::NonFinite { path: "gaussian actor loss".into() });
        }
        let mut grads = self.net.backward(&cache, &grad_mean)?;
        grads.extend(grad_log_std.iter().map(|g| g - entropy_coef));
        Ok((st, grads))
    }

    fn params(&self) -> Vec<f64> {
        GaussianActor::params(self)
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        GaussianActor::set_params(self, p)
    }

    fn param_path(&self, idx: usize) -> String {
        GaussianActor::param_path(self, idx)
    }
}

/// One Adam step on the clipped-surrogate loss.
pub fn actor_update<A: PpoActor>(
    actor: &mut A,
    adam: &mut AdamState,
    mb: &Minibatch,
    clip: f64,
    entropy_coef: f64,
) -> Result<ActorStats> {
    let (st, grads) = actor.surrogate(mb, clip, entropy_coef)?;
    let mut p = actor.params();
    adam.update(&mut p, &grads, |i| actor.param_path(i))?;
    actor.set_params(&p)?;
    Ok(st)
}

/// Mean squared error `(V(o) − target)²` and its parameter gradient.
pub fn critic_loss(critic: &DenseNet, obs: &DMatrix<f64>, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cache = critic.forward(obs)?;
    let b = targets.len() as f64;
    let mut grad = DMatrix::zeros(1, targets.len());
    let mut loss = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let e = cache.output[(0, j)] - t;
        loss += e * e / b;
        grad[(0, j)] = 2.0 * e / b;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { path: "critic loss".into() });
    }
    Ok((loss, critic.backward(&cache, &grad)?))
}

/// One Adam step on the value loss; targets are `A_t + V_old(o_t)`.
pub fn critic_update(critic: &mut DenseNet, adam: &mut AdamState, obs: &DMatrix<f64>, targets: &[f64]) -> Result<f64> {
    let (loss, grads) = critic_loss(critic, obs, targets)?;
    let mut p = critic.params();
    adam.update(&mut p, &grads, |i| critic.param_path(i))?;
    critic.set_params(&p)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LOG_STD_INIT};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_cases() {
        let r = [1.0, 1.0, 1.0];
        let v = [0.0; 4];
        let a = compute_gae(&r, &v, 0.45, 0.45).unwrap();
        assert!((a[0] - 1.243_506_25).abs() < 1e-12);
        let v = [0.2, -0.1, 0.4, 0.3];
        let r = [0.5, 1.5, -0.2];
        let zero_lambda = compute_gae(&r, &v, 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert!((zero_lambda[t] - (r[t] + 0.9 * v[t + 1] - v[t])).abs() < 1e-12);
        }
        let zero_gamma = compute_gae(&r, &v, 0.0, 0.7).unwrap();
        for t in 0..3 {
            assert!((zero_gamma[t] - (r[t] - v[t])).abs() < 1e-12);
        }
        assert!(compute_gae(&r, &v[..3], 0.9, 0.9).is_err());
    }

    #[test]
    fn gae_monte_carlo_limit() {
        let r = [0.3, -1.0, 2.0, 0.5, 1.1];
        let a = compute_gae(&r, &[0.0; 6], 0.8, 1.0).unwrap();
        for t in 0..5 {
            let mc: f64 = (t..5).map(|i| 0.8f64.powi((i - t) as i32) * r[i]).sum();
            assert!((a[t] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn advantage_normalization() {
        let z = normalize_advantages(&[1.0, 3.0, -2.0, 0.5, 7.0]);
        let mean = z.iter().sum::<f64>() / 5.0;
        let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }

    fn bandit() -> (DenseNet, Minibatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::orthogonal(&[2, 8, 2], Activation::Softmax, 0.01, &mut rng).unwrap();
        let obs = DMatrix::from_fn(2, 16, |_, _| rng.random::<f64>());
        let cache = net.forward(&obs).unwrap();
        let old_logp = (0..16).map(|j| cache.output[(0, j)].ln()).collect();
        let mb = Minibatch { obs, actions: ActionBatch::Discrete(vec![0; 16]), old_logp, advantages: vec![1.0; 16] };
        (net, mb)
    }

    #[test]
    fn first_epoch_ratio_is_one() {
        let (net, mb) = bandit();
        let (st, _) = net.surrogate(&mb, 0.3, 0.0).unwrap();
        assert!((st.mean_ratio - 1.0).abs() < 1e-12);
        assert!((st.surrogate - 1.0).abs() < 1e-12);
        assert_eq!(st.clip_fraction, 0.0);
    }

    #[test]
    fn clipped_branch_has_no_gradient() {
        let (net, mut mb) = bandit();
        mb.old_logp.iter_mut().for_each(|l| *l -= 1.0); // ratio = e > 1.3
        let (st, g) = net.surrogate(&mb, 0.3, 0.0).unwrap();
        assert_eq!(st.clip_fraction, 1.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bandit_step_raises_rewarded_action() {
        let (mut net, mb) = bandit();
        let before = net.predict(&[0.5, 0.5]).unwrap()[0];
        let mut adam = AdamState::new(net.num_params(), 1e-2);
        actor_update(&mut net, &mut adam, &mb, 0.3, 0.01).unwrap();
        assert!(net.predict(&[0.5, 0.5]).unwrap()[0] > before);
    }

    #[test]
    fn surrogate_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNet::gaussian(&[3, 5, 4], Activation::Softmax, &mut rng).unwrap();
        let obs = DMatrix::from_fn(3, 6, |_, _| rng.random::<f64>() - 0.5);
        let mb = Minibatch {
            obs: obs.clone(),
            actions: ActionBatch::Discrete(vec![0, 1, 2, 3, 1, 2]),
            old_logp: (0..6).map(|_| -1.4 + 0.1 * rng.random::<f64>()).collect(),
            advantages: (0..6).map(|_| rng.random::<f64>() - 0.5).collect(),
        };
        check_fd(net, &mb);

        let mut actor = GaussianActor::new(DenseNet::gaussian(&[3, 5, 2], Activation::Linear, &mut rng).unwrap());
        actor.log_std = vec![LOG_STD_INIT, -0.2];
        let mb = Minibatch {
            obs,
            actions: ActionBatch::Continuous(DMatrix::from_fn(2, 6, |_, _| rng.random::<f64>() - 0.5)),
            old_logp: (0..6).map(|_| -1.0 + 0.1 * rng.random::<f64>()).collect(),
            advantages: (0..6).map(|_| rng.random::<f64>() - 0.5).collect(),
        };
        check_fd(actor, &mb);
    }

    fn check_fd<A: PpoActor>(mut actor: A, mb: &Minibatch) {
        // Wide clip so the objective is smooth around the evaluation point.
        let (_, g) = actor.surrogate(mb, 10.0, 0.05).unwrap();
        let p = actor.params();
        for i in 0..p.len() {
            let h = 1e-6;
            let mut q = p.clone();
            q[i] += h;
            actor.set_params(&q).unwrap();
            let up = actor.surrogate(mb, 10.0, 0.05).unwrap().0.loss;
            q[i] -= 2.0 * h;
            actor.set_params(&q).unwrap();
            let down = actor.surrogate(mb, 10.0, 0.05).unwrap().0.loss;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{}: {fd} vs {}", actor.param_path(i), g[i]);
        }
        actor.set_params(&p).unwrap();
    }

    #[test]
    fn critic_scalar_case() {
        let net = DenseNet::zeros(&[1, 1], Activation::Linear).unwrap();
        let mut c = net.clone();
        c.set_params(&[0.0, 0.7]).unwrap(); // V ≡ 0.7
        let obs = DMatrix::from_element(1, 1, 1.0);
        let (loss, g) = critic_loss(&c, &obs, &[0.2 + 0.5]).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        let (loss, g) = critic_loss(&c, &obs, &[0.3 + 0.1]).unwrap();
        assert!((loss - 0.09).abs() < 1e-15);
        // d/db (v − target)² = 2(v − A − v_old)
        assert!((g[1] - 0.6).abs() < 1e-15);
        assert!(loss >= 0.0);
    }
}
