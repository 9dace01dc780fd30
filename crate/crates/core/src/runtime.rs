//! Interval-by-interval execution of trained agents.
//!
//! The agents are trained for a nominal user count `K`. When `K̂ > K` users are
//! present, the `K` with the highest priority are pre-screened; when `K̂ < K`,
//! zero-channel virtual users fill the gap and codewords that touch them are
//! masked out.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::ChannelStats;
use crate::error::{invalid, Result};
use crate::mappo::{build_observations, decode_actions, JointAction, PolicyBundle, Previous};
use crate::rate::{ergodic_sum_rate_mc, jfi};
use crate::streams::SeedStream;

pub use crate::mappo::mask_virtual_actions;

/// Bits per phase shift when counting configuration signaling.
pub const PHASE_BITS: usize = 8;

/// Scheduling priority of every actual user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PriorityState {
    pub priorities: Vec<u64>,
}

impl PriorityState {
    pub fn new(users: usize) -> Self {
        Self { priorities: vec![0; users] }
    }

    /// Follow a change in the number of actual users: existing users keep
    /// their priority, new ones start at zero.
    pub fn resize(&mut self, users: usize) {
        self.priorities.resize(users, 0);
    }

    pub fn record(&mut self, scheduled: &[usize]) -> Result<()> {
        self.priorities = update_priorities(&self.priorities, scheduled)?;
        Ok(())
    }
}

/// Scheduled users drop to zero, everyone else gains one.
pub fn update_priorities(priorities: &[u64], scheduled: &[usize]) -> Result<Vec<u64>> {
    if let Some(&bad) = scheduled.iter().find(|&&u| u >= priorities.len()) {
        return Err(invalid(format!("scheduled user {bad} out of range ({} users)", priorities.len())));
    }
    Ok((0..priorities.len())
        .map(|u| if scheduled.contains(&u) { 0 } else { priorities[u] + 1 })
        .collect())
}

/// Users chosen for the agents, in ascending actual index.
#[derive(Clone, Debug)]
pub struct Prescreened {
    pub stats: ChannelStats,
    /// `index_map[local] = actual`.
    pub index_map: Vec<usize>,
}

/// Keep the `k` users of highest priority; equal priorities are ordered
/// uniformly at random.
pub fn prescreen_users<R: Rng + ?Sized>(
    stats: &ChannelStats,
    priorities: &[u64],
    k: usize,
    rng: &mut R,
) -> Result<Prescreened> {
    let actual = stats.k();
    if priorities.len() != actual {
        return Err(invalid(format!("{} priorities for {actual} users", priorities.len())));
    }
    if actual <= k {
        return Err(invalid(format!("pre-screening needs more than {k} users, got {actual}; pad instead")));
    }
    let mut order: Vec<usize> = (0..actual).collect();
    order.shuffle(rng);
    order.sort_by(|a, b| priorities[*b].cmp(&priorities[*a]));
    let mut index_map = order[..k].to_vec();
    index_map.sort_unstable();
    Ok(Prescreened { stats: stats.subset(&index_map)?, index_map })
}

/// Append virtual users up to `k`. The mask is `true` for real users.
pub fn pad_virtual_users(stats: &ChannelStats, k: usize) -> Result<(ChannelStats, Vec<bool>)> {
    if stats.k() > k {
        return Err(invalid(format!("{} users exceed the nominal {k}; pre-screen instead", stats.k())));
    }
    Ok(stats.pad_virtual(k))
}

/// One coherence interval of [`dynamic_loop`].
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRecord {
    pub interval: usize,
    pub actual_users: usize,
    /// Scheduled users as actual indices.
    pub scheduled: Vec<usize>,
    pub action: JointAction,
    /// Monte-Carlo rate of every actual user (zero when not selected).
    pub rates: Vec<f64>,
    pub sum_rate_mc: f64,
    /// Fairness over the actual users in this interval.
    pub jfi: f64,
    /// Configuration bits a central controller would have sent.
    pub overhead_bits_saved: usize,
    /// Priorities after the interval.
    pub priorities: Vec<u64>,
}

/// Run the agents for `intervals` coherence intervals. `source(t)` gives the
/// statistics of the actual users in interval `t`; their number may change.
pub fn dynamic_loop(
    bundle: &PolicyBundle,
    source: &dyn Fn(usize) -> Result<ChannelStats>,
    intervals: usize,
    mc_samples: usize,
    seed: SeedStream,
) -> Result<Vec<IntervalRecord>> {
    let k = bundle.k;
    let mut prev = Previous::from_action(bundle, &bundle.start_action())?;
    let mut priorities = PriorityState::default();
    let mut trace = Vec::with_capacity(intervals);
    for t in 0..intervals {
        let actual = source(t)?;
        let khat = actual.k();
        if khat < bundle.u {
            return Err(invalid(format!("interval {t}: {khat} users cannot fill {} streams", bundle.u)));
        }
        priorities.resize(khat);
        let (local, index_map, mask) = if khat > k {
            let p = prescreen_users(&actual, &priorities.priorities, k, &mut seed.rng(2, t as u64))?;
            (p.stats, p.index_map, vec![true; k])
        } else {
            let (padded, mask) = pad_virtual_users(&actual, k)?;
            (padded, (0..khat).collect(), mask)
        };
        let obs = build_observations(&local, &prev.scheduled, &prev.g_raw, &prev.phi);
        let action = bundle.execute_masked(&obs, Some(&mask))?;
        let dec = decode_actions(&bundle.codebook, k, bundle.m, local.p_max, &action)?;
        let est = ergodic_sum_rate_mc(&local, &dec.state, mc_samples, seed.child(t as u64))?;
        let mut rates = vec![0.0; khat];
        for (l, &a) in index_map.iter().enumerate() {
            rates[a] = est.per_user[l];
        }
        let scheduled: Vec<usize> = dec.state.scheduled.iter().map(|&l| index_map[l]).collect();
        priorities.record(&scheduled)?;
        trace.push(IntervalRecord {
            interval: t,
            actual_users: khat,
            scheduled,
            action,
            sum_rate_mc: rates.iter().sum(),
            jfi: jfi(&rates),
            rates,
            overhead_bits_saved: PHASE_BITS * local.n * local.l(),
            priorities: priorities.priorities.clone(),
        });
        prev = Previous { scheduled: dec.state.scheduled.clone(), g_raw: dec.g_raw, phi: dec.state.phi };
    }
    Ok(trace)
}

pub const TRACE_HEADER: [&str; 5] = ["interval", "scheduled_users", "sum_rate_mc", "jfi", "overhead_bits_saved"];

/// Trace as CSV. Scheduled users are 1-based and separated by `;`.
pub fn write_trace<W: Write>(out: W, trace: &[IntervalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        let users = r.scheduled.iter().map(|u| (u + 1).to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.interval.to_string(),
            users,
            r.sum_rate_mc.to_string(),
            r.jfi.to_string(),
            r.overhead_bits_saved.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;
    use crate::optimizer::enumerate_schedules;
    use crate::optimizer::testkit::{desk_stats, random_state};
    use crate::rate::{approx_rates, q_matrix};
    use crate::linalg::{cn01, quad_form, CVec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_with_users(k: usize, seed: u64) -> ChannelStats {
        let s = Scenario::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geo = s.layout.geometry(k, &mut rng).unwrap();
        let sys = crate::config::SystemConfig { k, u: 1, ..s.system };
        crate::channel::build_stats(&sys, &geo).unwrap()
    }

    #[test]
    fn priority_rule() {
        assert_eq!(update_priorities(&[0, 0, 0], &[0]).unwrap(), vec![0, 1, 1]);
        assert_eq!(update_priorities(&[4, 2, 7], &[0, 1, 2]).unwrap(), vec![0, 0, 0]);
        assert!(update_priorities(&[0, 0], &[2]).is_err());
    }

    #[test]
    fn round_robin_priorities_stay_low() {
        let mut p = vec![0u64; 4];
        for round in 0..10 {
            let sched = if round % 2 == 0 { [0, 1] } else { [2, 3] };
            p = update_priorities(&p, &sched).unwrap();
            assert!(p.iter().all(|&x| x <= 1));
        }
    }

    #[test]
    fn prescreen_distinct_is_top_k() {
        let stats = stats_with_users(5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = prescreen_users(&stats, &[1, 5, 3, 0, 4], 2, &mut rng).unwrap();
        assert_eq!(p.index_map, vec![1, 4]);
        assert_eq!(p.stats.k(), 2);
        assert_eq!(p.stats.stacked_users[1], stats.stacked_users[4]);
        assert!(prescreen_users(&stats, &[0; 5], 5, &mut rng).is_err());
    }

    #[test]
    fn prescreen_ties_are_uniform() {
        let stats = stats_with_users(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 10_000;
        let mut picked = [0usize; 5];
        for _ in 0..trials {
            let p = prescreen_users(&stats, &[3, 2, 2, 0, 0], 2, &mut rng).unwrap();
            assert!(p.index_map.contains(&0));
            for u in p.index_map {
                picked[u] += 1;
            }
        }
        assert_eq!(picked[0], trials);
        assert_eq!(picked[1] + picked[2], trials);
        let sigma = (trials as f64 * 0.25).sqrt();
        for &c in &picked[1..3] {
            assert!((c as f64 - trials as f64 / 2.0).abs() <= 3.0 * sigma, "{picked:?}");
        }
    }

    #[test]
    fn virtual_users_carry_nothing() {
        let stats = stats_with_users(3, 3);
        let (padded, mask) = pad_virtual_users(&stats, 4).unwrap();
        assert_eq!(mask, vec![true, true, true, false]);
        let (same, all_real) = pad_virtual_users(&padded, 4).unwrap();
        assert_eq!(same.k(), 4);
        assert!(all_real.iter().all(|&r| r));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let st = random_state(&padded, vec![1, 3], &mut rng);
        assert_eq!(approx_rates(&padded, &st)[3], 0.0);
        let q = q_matrix(&padded, &st.stacked_phi(), 3);
        for _ in 0..5 {
            let g = CVec::from_fn(padded.m, |_, _| cn01(&mut rng));
            assert_eq!(quad_form(&q, &g), 0.0);
        }
        assert!(pad_virtual_users(&padded, 3).is_err());
    }

    #[test]
    fn masked_codeword_avoids_virtual_users() {
        let cb = enumerate_schedules(4, 2).unwrap();
        let p = [0.1, 0.1, 0.1, 0.1, 0.1, 0.5];
        assert_eq!(mask_virtual_actions(&p, &cb, &[true, true, false, false]).unwrap(), 0);
        assert_eq!(mask_virtual_actions(&p, &cb, &[true; 4]).unwrap(), 5);
    }

    fn bundle(seed: u64) -> PolicyBundle {
        let (stats, _) = desk_stats(1);
        PolicyBundle::new(4, 2, stats.m, stats.n, stats.l(), true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn varying_user_count_without_retraining() {
        let b = bundle(5);
        let pool: Vec<ChannelStats> = (2..=6).map(|k| stats_with_users(k, 10 + k as u64)).collect();
        let src = |t: usize| Ok(pool[t % pool.len()].clone());
        let trace = dynamic_loop(&b, &src, 10, 200, SeedStream(1)).unwrap();
        assert_eq!(trace.len(), 10);
        let mut prior: Vec<u64> = Vec::new();
        for r in &trace {
            assert_eq!(r.actual_users, pool[r.interval % pool.len()].k());
            assert!(r.scheduled.iter().all(|&u| u < r.actual_users), "virtual user scheduled");
            assert_eq!(r.scheduled.len(), 2);
            assert!(r.jfi >= 0.0 && r.jfi <= 1.0 + 1e-12);
            assert_eq!(r.overhead_bits_saved, 8 * 8 * 2);
            prior.resize(r.actual_users, 0);
            assert_eq!(r.priorities, update_priorities(&prior, &r.scheduled).unwrap());
            prior = r.priorities.clone();
        }
        let mut csv = Vec::new();
        write_trace(&mut csv, &trace).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("interval,scheduled_users,sum_rate_mc,jfi,overhead_bits_saved\n"));
        assert_eq!(text.lines().count(), 11);
    }

    #[test]
    fn static_scenario_is_reproducible_and_settles() {
        let b = bundle(6);
        let (stats, _) = desk_stats(7);
        let src = |_: usize| Ok(stats.clone());
        let a = dynamic_loop(&b, &src, 12, 100, SeedStream(2)).unwrap();
        let c = dynamic_loop(&b, &src, 12, 100, SeedStream(2)).unwrap();
        assert_eq!(a, c);
        // once an action repeats, the observation repeats and so does every later action
        if let Some(t) = (1..a.len()).find(|&t| a[t].action == a[t - 1].action) {
            assert!(a[t..].iter().all(|r| r.action == a[t].action));
        }
    }
}
