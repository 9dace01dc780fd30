//! Multi-agent PPO: a scheduling agent, a BS precoding agent and `L` RIS
//! agents sharing one actor, trained centrally with one critic and executed
//! from local observations only.

mod checkpoint;
pub mod env;
pub mod ppo;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use env::{build_observations, decode_actions, shared_reward, Decoded, JointAction, Observations};
pub use ppo::{actor_update, compute_gae, critic_update, normalize_advantages, ActionBatch, ActorStats, Minibatch, PpoActor};
pub(crate) use train::Previous;
pub use train::{evaluate_greedy, train, write_training_log, EpisodeLog, GreedyEval, TrainOutcome, TRAINING_LOG_HEADER};

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, DenseNet, GaussianActor, RunningNorm};
use crate::optimizer::enumerate_schedules;

/// Hidden widths of each network.
pub const SCHEDULER_HIDDEN: [usize; 2] = [64, 28];
pub const PRECODER_HIDDEN: [usize; 2] = [16, 32];
pub const RIS_HIDDEN: [usize; 2] = [32, 64];
pub const CRITIC_HIDDEN: [usize; 2] = [64, 8];

/// Output-layer gain of the policy networks under orthogonal initialization.
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct MappoConfig {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Transitions collected between updates.
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Passes over the buffer per update.
    pub sample_reuse: usize,
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    /// `ν`: weight of the fairness index in the reward.
    pub fairness_weight: f64,
    pub orthogonal_init: bool,
    /// Train the critic on standardized returns (running mean and variance).
    pub value_normalization: bool,
}

impl Default for MappoConfig {
    fn default() -> Self {
        Self {
            episodes: 600,
            steps_per_episode: 1024,
            buffer_size: 1024,
            batch_size: 128,
            sample_reuse: 10,
            discount: 0.45,
            gae_lambda: 0.45,
            clip: 0.3,
            entropy_coef: 0.01,
            learning_rate: 3e-4,
            fairness_weight: 0.0,
            orthogonal_init: true,
            value_normalization: true,
        }
    }
}

impl MappoConfig {
    /// Reduced budget: 150 episodes of 256 steps.
    pub fn desk() -> Self {
        Self { episodes: 150, steps_per_episode: 256, buffer_size: 256, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.discount) || !unit(self.gae_lambda) {
            return Err(Error::Config("mappo.discount and mappo.gae must lie in [0, 1)".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("mappo.clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fairness_weight) {
            return Err(Error::Config("mappo.fairness_weight must lie in [0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0 && self.entropy_coef >= 0.0) {
            return Err(Error::Config("mappo.learning_rate and mappo.entropy_coef must be nonnegative".into()));
        }
        if self.episodes == 0 || self.steps_per_episode == 0 || self.buffer_size == 0 || self.batch_size == 0 || self.sample_reuse == 0 {
            return Err(Error::Config("mappo counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every network of the agent set plus the observation normalizers.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyBundle {
    pub k: usize,
    pub u: usize,
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub codebook: Vec<Vec<usize>>,
    pub scheduler: DenseNet,
    pub precoder: GaussianActor,
    /// One actor shared by all RIS agents.
    pub ris: GaussianActor,
    pub critic: DenseNet,
    pub norm_o1: RunningNorm,
    pub norm_o2: RunningNorm,
    pub norm_ris: RunningNorm,
    /// Last training action; seeds the observations at execution time.
    pub last_action: Option<JointAction>,
}

fn sizes(input: usize, hidden: [usize; 2], output: usize) -> Vec<usize> {
    vec![input, hidden[0], hidden[1], output]
}

impl PolicyBundle {
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        u: usize,
        m: usize,
        n: usize,
        l: usize,
        orthogonal: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let codebook = enumerate_schedules(k, u)?;
        let (o1, o2, ori) = (2 * k * m, 2 * u * u, 2 * m * u);
        let mut make = |sz: Vec<usize>, act: Activation, gain: f64| {
            if orthogonal {
                DenseNet::orthogonal(&sz, act, gain, rng)
            } else {
                DenseNet::gaussian(&sz, act, rng)
            }
        };
        let scheduler = make(sizes(o1, SCHEDULER_HIDDEN, codebook.len()), Activation::Softmax, POLICY_OUTPUT_GAIN)?;
        let precoder = GaussianActor::new(make(sizes(o2, PRECODER_HIDDEN, 2 * m * u), Activation::Linear, POLICY_OUTPUT_GAIN)?);
        let ris = GaussianActor::new(make(sizes(ori, RIS_HIDDEN, n), Activation::Linear, POLICY_OUTPUT_GAIN)?);
        let critic = make(sizes(o1 + o2, CRITIC_HIDDEN, 1), Activation::Linear, 1.0)?;
        Ok(Self {
            k,
            u,
            m,
            n,
            l,
            codebook,
            scheduler,
            precoder,
            ris,
            critic,
            norm_o1: RunningNorm::new(o1),
            norm_o2: RunningNorm::new(o2),
            norm_ris: RunningNorm::new(ori),
            last_action: None,
        })
    }

    /// Stop updating the observation statistics.
    pub fn freeze(&mut self) {
        self.norm_o1.frozen = true;
        self.norm_o2.frozen = true;
        self.norm_ris.frozen = true;
    }

    fn check(&self, obs: &Observations) -> Result<()> {
        let bad = |what: &'static str, expected: usize, got: usize| Error::ShapeMismatch { context: what, expected, got };
        if obs.o1.len() != self.norm_o1.dim() {
            return Err(bad("scheduling observation", self.norm_o1.dim(), obs.o1.len()));
        }
        if obs.o2.len() != self.norm_o2.dim() {
            return Err(bad("precoding observation", self.norm_o2.dim(), obs.o2.len()));
        }
        if obs.ris.len() != self.l {
            return Err(bad("RIS observation count", self.l, obs.ris.len()));
        }
        if let Some(r) = obs.ris.iter().find(|r| r.len() != self.norm_ris.dim()) {
            return Err(bad("RIS observation", self.norm_ris.dim(), r.len()));
        }
        Ok(())
    }

    /// Action assumed for the interval before execution starts: the last
    /// training action, or codeword 0 with an all-ones precoder and zero phases.
    pub fn start_action(&self) -> JointAction {
        self.last_action.clone().unwrap_or_else(|| JointAction {
            codeword: 0,
            precoder: vec![1.0; 2 * self.m * self.u],
            phases: vec![vec![0.0; self.n]; self.l],
        })
    }

    /// Codeword probabilities for a raw scheduling observation.
    pub fn schedule_probabilities(&self, o1: &[f64]) -> Result<Vec<f64>> {
        self.scheduler.predict(&self.norm_o1.normalize(o1))
    }

    /// Deterministic joint action: the most probable codeword (lowest index on
    /// ties) and the Gaussian means. Each actor reads only its own observation.
    pub fn execute_step(&self, obs: &Observations) -> Result<JointAction> {
        self.execute_masked(obs, None)
    }

    /// As [`execute_step`](Self::execute_step), restricted to codewords whose
    /// users are all real (`mask[k]` true).
    pub fn execute_masked(&self, obs: &Observations, mask: Option<&[bool]>) -> Result<JointAction> {
        self.check(obs)?;
        let probs = self.schedule_probabilities(&obs.o1)?;
        let codeword = match mask {
            Some(mask) => mask_virtual_actions(&probs, &self.codebook, mask)?,
            None => argmax_lowest(&probs).ok_or_else(|| invalid("empty codebook"))?,
        };
        let precoder = self.precoder.net.predict(&self.norm_o2.normalize(&obs.o2))?;
        let phases = obs
            .ris
            .iter()
            .map(|o| self.ris.net.predict(&self.norm_ris.normalize(o)))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointAction { codeword, precoder, phases })
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax_lowest(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        if best.is_none_or(|b| v > x[b]) {
            best = Some(i);
        }
    }
    best
}

/// Most probable codeword among those containing only real users.
pub fn mask_virtual_actions(probs: &[f64], codebook: &[Vec<usize>], real: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (i, users) in codebook.iter().enumerate() {
        if users.iter().all(|&u| real.get(u).copied().unwrap_or(false)) && best.is_none_or(|b| probs[i] > probs[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| invalid("no codeword consists of real users only"))
}
