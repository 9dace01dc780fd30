//! Observation and action encodings plus the shared reward.
//!
//! Complex quantities are flattened as all real parts (row-major) followed by
//! all imaginary parts.

use crate::channel::ChannelStats;
use crate::error::{invalid, Result};
use crate::linalg::{row_times, CMat, CVec, C64};
use crate::rate::{approx_sinrs, jfi, PrecodingState, QSet, StatTerms};

/// Local observations of every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    /// Scheduling agent: `h̄^H Φ H̄` (K×M).
    pub o1: Vec<f64>,
    /// BS agent: `ĥ^H Φ H̄ G` (U×U) for the scheduled users.
    pub o2: Vec<f64>,
    /// RIS agent `l`: `h̄_l^H Φ_l H̄_l` (U×M) for the scheduled users.
    pub ris: Vec<Vec<f64>>,
}

impl Observations {
    /// Critic input: `o1` then `o2`.
    pub fn global(&self) -> Vec<f64> {
        let mut g = self.o1.clone();
        g.extend(&self.o2);
        g
    }
}

/// One action per agent, as produced by the policies.
#[derive(Clone, Debug, PartialEq)]
pub struct JointAction {
    /// Index into the scheduling codebook.
    pub codeword: usize,
    /// `2MU` reals: real parts then imaginary parts, each column-major over (M, U).
    pub precoder: Vec<f64>,
    /// Phase angles (radians) of each RIS.
    pub phases: Vec<Vec<f64>>,
}

fn flatten(rows: usize, cols: usize, f: impl Fn(usize, usize) -> C64) -> Vec<f64> {
    let vals: Vec<C64> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
    vals.iter().map(|z| z.re).chain(vals.iter().map(|z| z.im)).collect()
}

/// Per-RIS weighted block `h̄_{k,l}^H Φ_l H̄_l` as the M entries multiplying `g`.
fn block_row(stats: &ChannelStats, phi: &CVec, k: usize, l: usize) -> CVec {
    let n = stats.n;
    let h = stats.stacked_users[k].rows(l * n, n);
    let w = CVec::from_fn(n, |i, _| h[i].conj() * phi[i]);
    stats.stacked_bs_ris.rows(l * n, n).transpose() * w
}

/// Observations after the previous interval's schedule, raw precoder and phases.
pub fn build_observations(stats: &ChannelStats, scheduled: &[usize], g_prev: &CMat, phi_prev: &[CVec]) -> Observations {
    let (m, k) = (stats.m, stats.k());
    let blocks: Vec<Vec<CVec>> = (0..k)
        .map(|user| (0..stats.l()).map(|l| block_row(stats, &phi_prev[l], user, l)).collect())
        .collect();
    let equ: Vec<CVec> = blocks.iter().map(|b| b.iter().fold(CVec::zeros(m), |acc, x| acc + x)).collect();
    let o1 = flatten(k, m, |r, c| equ[r][c]);
    let u = scheduled.len();
    let o2 = flatten(u, u, |i, j| {
        if j < g_prev.ncols() {
            row_times(&equ[scheduled[i]], &g_prev.column(j).into_owned())
        } else {
            C64::from(0.0)
        }
    });
    let ris = (0..stats.l()).map(|l| flatten(u, m, |i, c| blocks[scheduled[i]][l][c])).collect();
    Observations { o1, o2, ris }
}

/// Precoder action decoded both ways.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Schedule, power-scaled precoder and phases used for the reward.
    pub state: PrecodingState,
    /// Unscaled precoder fed back into the next observation.
    pub g_raw: CMat,
    /// Set when the raw precoder was all zeros.
    pub zero_precoder: bool,
}

/// Raw `2MU` reals to an `M×U` complex matrix.
pub fn precoder_from_reals(raw: &[f64], m: usize, u: usize) -> Result<CMat> {
    if raw.len() != 2 * m * u {
        return Err(invalid(format!("precoder action has {} reals, expected {}", raw.len(), 2 * m * u)));
    }
    let mu = m * u;
    Ok(CMat::from_fn(m, u, |r, c| C64::new(raw[c * m + r], raw[mu + c * m + r])))
}

/// Turn a joint action into a decision, scaling `G` to `||G||_F² = P_max`.
pub fn decode_actions(
    codebook: &[Vec<usize>],
    k: usize,
    m: usize,
    p_max: f64,
    action: &JointAction,
) -> Result<Decoded> {
    let sched = codebook
        .get(action.codeword)
        .ok_or_else(|| invalid(format!("codeword {} outside codebook of {}", action.codeword, codebook.len())))?;
    let u = sched.len();
    let g_raw = precoder_from_reals(&action.precoder, m, u)?;
    let norm = g_raw.norm();
    let zero_precoder = norm == 0.0;
    let g = if zero_precoder {
        CMat::zeros(m, u)
    } else {
        &g_raw * C64::from(p_max.sqrt() / norm)
    };
    let phi = action
        .phases
        .iter()
        .map(|t| CVec::from_iterator(t.len(), t.iter().map(|&a| C64::from_polar(1.0, a))))
        .collect();
    let state = PrecodingState::new(k, sched.clone(), g, phi)?;
    Ok(Decoded { state, g_raw, zero_precoder })
}

/// `(1−ν) Σ_k R̂_k + ν · JFI` from precomputed `Q_k`.
pub fn reward_with(qset: &QSet, state: &PrecodingState, sigma2: f64, nu: f64) -> (f64, Vec<f64>) {
    let rates: Vec<f64> = approx_sinrs(qset, state, sigma2).iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect();
    let sum: f64 = rates.iter().sum();
    let fair = if nu > 0.0 { jfi(&rates) } else { 0.0 };
    ((1.0 - nu) * sum + nu * fair, rates)
}

/// Shared reward of all agents.
pub fn shared_reward(stats: &ChannelStats, state: &PrecodingState, nu: f64) -> f64 {
    let terms = StatTerms::new(stats);
    let qset = QSet::new(stats, &terms, &state.stacked_phi());
    reward_with(&qset, state, stats.sigma2, nu).0
}

/// Reward from a rate vector, for callers that already have the rates.
pub fn reward_from_rates(rates: &[f64], nu: f64) -> f64 {
    let sum: f64 = rates.iter().sum();
    (1.0 - nu) * sum + if nu > 0.0 { nu * jfi(rates) } else { 0.0 }
}
