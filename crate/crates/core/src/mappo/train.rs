use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::env::{build_observations, decode_actions, precoder_from_reals, reward_with, JointAction};
use super::ppo::{actor_update, compute_gae, critic_update, normalize_advantages, ActionBatch, Minibatch};
use super::{MappoConfig, PolicyBundle};
use crate::channel::ChannelStats;
use crate::error::{invalid, Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::nn::{categorical_logprob_sample, gaussian_logprob_sample, AdamState, RunningNorm};
use crate::optimizer::{ao_solve, AoOptions};
use crate::rate::{ergodic_sum_rate_mc, jfi, PrecodingState, QSet, StatTerms};
use crate::streams::SeedStream;

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub mean_reward: f64,
    /// Approximate sum rate of one greedy step at the end of the episode.
    pub sum_rate_eval: f64,
    pub jfi_eval: f64,
    pub scheduler_loss: f64,
    pub precoder_loss: f64,
    pub ris_loss: f64,
    pub critic_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub log: Vec<EpisodeLog>,
}

struct Step {
    o1: Vec<f64>,
    o2: Vec<f64>,
    ris: Vec<Vec<f64>>,
    codeword: usize,
    logp_sched: f64,
    precoder: Vec<f64>,
    logp_prec: f64,
    phases: Vec<Vec<f64>>,
    logp_ris: Vec<f64>,
    reward: f64,
    value: f64,
}

struct Optimizers {
    scheduler: AdamState,
    precoder: AdamState,
    ris: AdamState,
    critic: AdamState,
    /// Return statistics; `None` when the critic learns raw returns.
    returns: Option<RunningNorm>,
}

impl Optimizers {
    fn value(&self, raw: f64) -> f64 {
        match &self.returns {
            Some(n) if n.count > 0 => raw * n.std(0) + n.mean[0],
            _ => raw,
        }
    }

    fn critic_target(&self, t: f64) -> f64 {
        match &self.returns {
            Some(n) if n.count > 0 && n.std(0) > 0.0 => (t - n.mean[0]) / n.std(0),
            Some(n) if n.count > 0 => 0.0,
            _ => t,
        }
    }
}

#[derive(Default)]
struct Losses {
    scheduler: f64,
    precoder: f64,
    ris: f64,
    critic: f64,
    count: usize,
}

/// Previous-interval decision that the next observations are built from.
#[derive(Clone)]
pub(crate) struct Previous {
    pub scheduled: Vec<usize>,
    pub g_raw: CMat,
    pub phi: Vec<CVec>,
}

impl Previous {
    pub(crate) fn from_action(bundle: &PolicyBundle, a: &JointAction) -> Result<Self> {
        let scheduled = bundle.codebook.get(a.codeword).ok_or_else(|| invalid("codeword out of range"))?.clone();
        Ok(Self {
            g_raw: precoder_from_reals(&a.precoder, bundle.m, bundle.u)?,
            phi: a.phases.iter().map(|t| CVec::from_iterator(t.len(), t.iter().map(|&x| C64::from_polar(1.0, x)))).collect(),
            scheduled,
        })
    }
}

fn columns(rows: usize, data: impl Iterator<Item = Vec<f64>>) -> DMatrix<f64> {
    let flat: Vec<f64> = data.flatten().collect();
    DMatrix::from_column_slice(rows, flat.len() / rows.max(1), &flat)
}

fn update(
    bundle: &mut PolicyBundle,
    opt: &mut Optimizers,
    buffer: &[Step],
    bootstrap: f64,
    cfg: &MappoConfig,
    rng: &mut impl Rng,
    losses: &mut Losses,
) -> Result<()> {
    let rewards: Vec<f64> = buffer.iter().map(|s| s.reward).collect();
    let mut values: Vec<f64> = buffer.iter().map(|s| s.value).collect();
    values.push(bootstrap);
    let adv = compute_gae(&rewards, &values, cfg.discount, cfg.gae_lambda)?;
    let targets: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
    let nadv = normalize_advantages(&adv);
    if let Some(n) = opt.returns.as_mut() {
        for &t in &targets {
            n.update(&[t]);
        }
    }
    let targets: Vec<f64> = targets.iter().map(|&t| opt.critic_target(t)).collect();
    let l = bundle.l;
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..cfg.sample_reuse {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let pick = |f: &dyn Fn(&Step) -> Vec<f64>, rows: usize| columns(rows, chunk.iter().map(|&i| f(&buffer[i])));
            let a: Vec<f64> = chunk.iter().map(|&i| nadv[i]).collect();

            let mb = Minibatch {
                obs: pick(&|s| s.o1.clone(), bundle.norm_o1.dim()),
                actions: ActionBatch::Discrete(chunk.iter().map(|&i| buffer[i].codeword).collect()),
                old_logp: chunk.iter().map(|&i| buffer[i].logp_sched).collect(),
                advantages: a.clone(),
            };
            let st = actor_update(&mut bundle.scheduler, &mut opt.scheduler, &mb, cfg.clip, cfg.entropy_coef)?;
            losses.scheduler += st.loss;

            let mb = Minibatch {
                obs: pick(&|s| s.o2.clone(), bundle.norm_o2.dim()),
                actions: ActionBatch::Continuous(pick(&|s| s.precoder.clone(), 2 * bundle.m * bundle.u)),
                old_logp: chunk.iter().map(|&i| buffer[i].logp_prec).collect(),
                advantages: a.clone(),
            };
            let st = actor_update(&mut bundle.precoder, &mut opt.precoder, &mb, cfg.clip, cfg.entropy_coef)?;
            losses.precoder += st.loss;

            // All RIS agents feed one shared actor: batch × L samples.
            let pairs: Vec<(usize, usize)> = chunk.iter().flat_map(|&i| (0..l).map(move |r| (i, r))).collect();
            let mb = Minibatch {
                obs: columns(bundle.norm_ris.dim(), pairs.iter().map(|&(i, r)| buffer[i].ris[r].clone())),
                actions: ActionBatch::Continuous(columns(bundle.n, pairs.iter().map(|&(i, r)| buffer[i].phases[r].clone()))),
                old_logp: pairs.iter().map(|&(i, r)| buffer[i].logp_ris[r]).collect(),
                advantages: pairs.iter().map(|&(i, _)| nadv[i]).collect(),
            };
            let st = actor_update(&mut bundle.ris, &mut opt.ris, &mb, cfg.clip, cfg.entropy_coef)?;
            losses.ris += st.loss;

            let obs = pick(&|s| [s.o1.as_slice(), s.o2.as_slice()].concat(), bundle.norm_o1.dim() + bundle.norm_o2.dim());
            let t: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            losses.critic += critic_update(&mut bundle.critic, &mut opt.critic, &obs, &t)?;
            losses.count += 1;
        }
    }
    Ok(())
}

/// Train the agent set.
///
/// `source(e)` supplies the statistics of episode `e`. Each episode starts
/// from one alternating-optimization iteration on a random schedule; every
/// `buffer_size` steps (and at the episode end) the buffer is used for
/// `sample_reuse` shuffled passes and then cleared.
pub fn train(
    source: &dyn Fn(usize) -> Result<ChannelStats>,
    u: usize,
    cfg: &MappoConfig,
    ao: &AoOptions,
    seed: SeedStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = source(0)?;
    let mut init_rng = seed.rng(0, 0);
    let mut bundle = PolicyBundle::new(first.k(), u, first.m, first.n, first.l(), cfg.orthogonal_init, &mut init_rng)?;
    let lr = cfg.learning_rate;
    let mut opt = Optimizers {
        scheduler: AdamState::new(bundle.scheduler.num_params(), lr),
        precoder: AdamState::new(bundle.precoder.num_params(), lr),
        ris: AdamState::new(bundle.ris.num_params(), lr),
        critic: AdamState::new(bundle.critic.num_params(), lr),
        returns: cfg.value_normalization.then(|| RunningNorm::new(1)),
    };
    let init_opts = AoOptions { max_iters: 1, ..ao.clone() };
    let mut log = Vec::with_capacity(cfg.episodes);

    for episode in 0..cfg.episodes {
        let stats = if episode == 0 { first.clone() } else { source(episode)? };
        if stats.k() != bundle.k || stats.m != bundle.m || stats.n != bundle.n || stats.l() != bundle.l {
            return Err(invalid("episode statistics changed the system dimensions"));
        }
        let snapshot = bundle.clone();
        let mut rng = seed.rng(1, episode as u64);
        let terms = StatTerms::new(&stats);
        let start = rng.random_range(0..bundle.codebook.len());
        let init = ao_solve(&stats, &bundle.codebook[start], None, &init_opts, &mut rng)?;
        let mut prev = Previous { scheduled: init.state.scheduled.clone(), g_raw: init.state.g.clone(), phi: init.state.phi.clone() };
        let mut buffer: Vec<Step> = Vec::with_capacity(cfg.buffer_size);
        let mut losses = Losses::default();
        let mut reward_sum = 0.0;
        let mut last_action = None;

        let result: Result<()> = (|| {
            for t in 0..cfg.steps_per_episode {
                let obs = build_observations(&stats, &prev.scheduled, &prev.g_raw, &prev.phi);
                let o1 = bundle.norm_o1.observe(&obs.o1);
                let o2 = bundle.norm_o2.observe(&obs.o2);
                let ris: Vec<Vec<f64>> = obs.ris.iter().map(|o| bundle.norm_ris.observe(o)).collect();

                let probs = bundle.scheduler.predict(&o1)?;
                let (codeword, logp_sched, _) = categorical_logprob_sample(&probs, &mut rng)?;
                let mean = bundle.precoder.net.predict(&o2)?;
                let (precoder, logp_prec, _) = gaussian_logprob_sample(&mean, &bundle.precoder.log_std, &mut rng);
                let mut phases = Vec::with_capacity(bundle.l);
                let mut logp_ris = Vec::with_capacity(bundle.l);
                for o in &ris {
                    let mean = bundle.ris.net.predict(o)?;
                    let (a, lp, _) = gaussian_logprob_sample(&mean, &bundle.ris.log_std, &mut rng);
                    phases.push(a);
                    logp_ris.push(lp);
                }
                let value = opt.value(bundle.critic.predict(&[o1.as_slice(), o2.as_slice()].concat())?[0]);
                let action = JointAction { codeword, precoder, phases };
                let dec = decode_actions(&bundle.codebook, bundle.k, bundle.m, stats.p_max, &action)?;
                let qset = QSet::new(&stats, &terms, &dec.state.stacked_phi());
                let (reward, _) = reward_with(&qset, &dec.state, stats.sigma2, cfg.fairness_weight);
                reward_sum += reward;
                prev = Previous { scheduled: dec.state.scheduled.clone(), g_raw: dec.g_raw, phi: dec.state.phi };
                buffer.push(Step {
                    o1,
                    o2,
                    ris,
                    codeword,
                    logp_sched,
                    precoder: action.precoder.clone(),
                    logp_prec,
                    phases: action.phases.clone(),
                    logp_ris,
                    reward,
                    value,
                });
                last_action = Some(action);
                if buffer.len() == cfg.buffer_size || t + 1 == cfg.steps_per_episode {
                    let next = build_observations(&stats, &prev.scheduled, &prev.g_raw, &prev.phi);
                    let g = [bundle.norm_o1.normalize(&next.o1), bundle.norm_o2.normalize(&next.o2)].concat();
                    let bootstrap = opt.value(bundle.critic.predict(&g)?[0]);
                    update(&mut bundle, &mut opt, &buffer, bootstrap, cfg, &mut rng, &mut losses)?;
                    buffer.clear();
                }
            }
            Ok(())
        })();

        let mean_reward = reward_sum / cfg.steps_per_episode as f64;
        match result {
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Diverged { episode, last_finite: Box::new(snapshot) });
            }
            Err(e) => return Err(e),
            Ok(()) if !mean_reward.is_finite() => {
                return Err(Error::Diverged { episode, last_finite: Box::new(snapshot) });
            }
            Ok(()) => {}
        }
        bundle.last_action = last_action;

        let obs = build_observations(&stats, &prev.scheduled, &prev.g_raw, &prev.phi);
        let greedy = bundle.execute_step(&obs)?;
        let dec = decode_actions(&bundle.codebook, bundle.k, bundle.m, stats.p_max, &greedy)?;
        let qset = QSet::new(&stats, &terms, &dec.state.stacked_phi());
        let (_, rates) = reward_with(&qset, &dec.state, stats.sigma2, 0.0);
        let c = losses.count.max(1) as f64;
        let row = EpisodeLog {
            episode,
            mean_reward,
            sum_rate_eval: rates.iter().sum(),
            jfi_eval: jfi(&rates),
            scheduler_loss: losses.scheduler / c,
            precoder_loss: losses.precoder / c,
            ris_loss: losses.ris / c,
            critic_loss: losses.critic / c,
        };
        log::debug!("episode {episode}: mean reward {mean_reward:.6e}, greedy sum rate {:.6e}", row.sum_rate_eval);
        log.push(row);
    }
    bundle.freeze();
    Ok(TrainOutcome { bundle, log })
}

/// Header of the training log.
pub const TRAINING_LOG_HEADER: [&str; 8] = [
    "episode",
    "mean_reward",
    "sum_rate_eval",
    "jfi_eval",
    "actor_loss_scheduler",
    "actor_loss_precoder",
    "actor_loss_ris",
    "critic_loss",
];

pub fn write_training_log<W: Write>(out: W, log: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAINING_LOG_HEADER)?;
    for r in log {
        w.write_record([
            r.episode.to_string(),
            r.mean_reward.to_string(),
            r.sum_rate_eval.to_string(),
            r.jfi_eval.to_string(),
            r.scheduler_loss.to_string(),
            r.precoder_loss.to_string(),
            r.ris_loss.to_string(),
            r.critic_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Greedy execution over a window of intervals on fixed statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyEval {
    /// Mean over the window of the Monte-Carlo sum rate.
    pub sum_rate_mc: f64,
    /// Mean over the window of the approximate sum rate.
    pub approx_sum_rate: f64,
    /// Monte-Carlo rate of each user averaged over the window.
    pub per_user: Vec<f64>,
    /// Fairness index of `per_user`.
    pub jfi: f64,
    pub actions: Vec<JointAction>,
    pub states: Vec<PrecodingState>,
}

/// Run `steps` deterministic intervals starting from the bundle's last
/// training action and evaluate each decision by Monte-Carlo.
pub fn evaluate_greedy(
    bundle: &PolicyBundle,
    stats: &ChannelStats,
    steps: usize,
    mc_samples: usize,
    seed: SeedStream,
) -> Result<GreedyEval> {
    if steps == 0 {
        return Err(invalid("evaluation needs at least one step"));
    }
    let mut prev = Previous::from_action(bundle, &bundle.start_action())?;
    let terms = StatTerms::new(stats);
    let mut per_user = vec![0.0; stats.k()];
    let (mut mc_sum, mut approx_sum) = (0.0, 0.0);
    let mut actions: Vec<JointAction> = Vec::with_capacity(steps);
    let mut states = Vec::with_capacity(steps);
    let mut cached: Option<(JointAction, crate::rate::McEstimate)> = None;
    for _ in 0..steps {
        let obs = build_observations(stats, &prev.scheduled, &prev.g_raw, &prev.phi);
        let a = bundle.execute_step(&obs)?;
        let dec = decode_actions(&bundle.codebook, bundle.k, bundle.m, stats.p_max, &a)?;
        let est = match &cached {
            Some((ca, est)) if *ca == a => est.clone(),
            _ => ergodic_sum_rate_mc(stats, &dec.state, mc_samples, seed)?,
        };
        let qset = QSet::new(stats, &terms, &dec.state.stacked_phi());
        approx_sum += reward_with(&qset, &dec.state, stats.sigma2, 0.0).1.iter().sum::<f64>();
        mc_sum += est.sum_rate;
        for (acc, r) in per_user.iter_mut().zip(&est.per_user) {
            *acc += r;
        }
        cached = Some((a.clone(), est));
        prev = Previous { scheduled: dec.state.scheduled.clone(), g_raw: dec.g_raw, phi: dec.state.phi.clone() };
        states.push(dec.state);
        actions.push(a);
    }
    let n = steps as f64;
    per_user.iter_mut().for_each(|r| *r /= n);
    Ok(GreedyEval {
        sum_rate_mc: mc_sum / n,
        approx_sum_rate: approx_sum / n,
        jfi: jfi(&per_user),
        per_user,
        actions,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mappo::argmax_lowest;
    use crate::optimizer::testkit::desk_stats;

    fn tiny() -> MappoConfig {
        MappoConfig { episodes: 3, steps_per_episode: 32, buffer_size: 32, batch_size: 16, sample_reuse: 2, ..MappoConfig::desk() }
    }

    #[test]
    fn deterministic_training() {
        let (stats, _) = desk_stats(1);
        let src = |_: usize| Ok(stats.clone());
        let a = train(&src, 2, &tiny(), &AoOptions::default(), SeedStream(9)).unwrap();
        let b = train(&src, 2, &tiny(), &AoOptions::default(), SeedStream(9)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (stats, _) = desk_stats(2);
        let src = |_: usize| Ok(stats.clone());
        let cfg = MappoConfig { learning_rate: 0.0, ..tiny() };
        let out = train(&src, 2, &cfg, &AoOptions::default(), SeedStream(3)).unwrap();
        let fresh = PolicyBundle::new(4, 2, stats.m, stats.n, stats.l(), true, &mut SeedStream(3).rng(0, 0)).unwrap();
        assert_eq!(out.bundle.scheduler.params(), fresh.scheduler.params());
        assert_eq!(out.bundle.precoder.params(), fresh.precoder.params());
        assert_eq!(out.bundle.ris.params(), fresh.ris.params());
        assert_eq!(out.bundle.critic.params(), fresh.critic.params());
    }

    #[test]
    fn greedy_execution_is_repeatable() {
        let (stats, _) = desk_stats(3);
        let src = |_: usize| Ok(stats.clone());
        let out = train(&src, 2, &tiny(), &AoOptions::default(), SeedStream(4)).unwrap();
        let obs = build_observations(&stats, &[0, 1], &CMat::from_element(stats.m, 2, C64::from(1.0)), &vec![CVec::from_element(stats.n, C64::from(1.0)); 2]);
        let a = out.bundle.execute_step(&obs).unwrap();
        assert_eq!(a, out.bundle.execute_step(&obs).unwrap());
        let probs = out.bundle.schedule_probabilities(&obs.o1).unwrap();
        assert_eq!(a.codeword, argmax_lowest(&probs).unwrap());
        let mut moved = obs.clone();
        moved.ris[1].iter_mut().for_each(|x| *x += 0.5 * x.abs().max(1e-9));
        let b = out.bundle.execute_step(&moved).unwrap();
        assert_eq!(a.codeword, b.codeword);
        assert_eq!(a.precoder, b.precoder);
        assert_eq!(a.phases[0], b.phases[0]);
        assert_ne!(a.phases[1], b.phases[1]);

        let ev = evaluate_greedy(&out.bundle, &stats, 5, 200, SeedStream(1)).unwrap();
        assert_eq!(ev.actions.len(), 5);
        for s in &ev.states {
            assert!((s.power() - stats.p_max).abs() <= 1e-9 * stats.p_max);
            assert!(s.modulus_defect() <= 1e-12);
        }
    }

    #[test]
    fn log_csv_header() {
        let mut buf = Vec::new();
        write_training_log(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim_end(),
            "episode,mean_reward,sum_rate_eval,jfi_eval,actor_loss_scheduler,actor_loss_precoder,actor_loss_ris,critic_loss"
        );
    }
}
