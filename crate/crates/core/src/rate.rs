//! Instantaneous SINR, Monte-Carlo ergodic rates and the statistical-CSI rate
//! approximation built on the per-user matrices `Q_k`.

use rayon::prelude::*;

use crate::channel::{composite_row, los_amplitude, nlos_amplitude, sample_channels_indexed, ChannelSample, ChannelStats};
use crate::error::{invalid, Result};
use crate::linalg::{quad_form, row_times, CMat, CVec, C64};
use crate::streams::SeedStream;

/// Joint decision: schedule, BS precoder and RIS phases.
///
/// Column `u` of `g` serves user `scheduled[u]`; `scheduled` is strictly
/// increasing. `phi[l]` is the diagonal of `Φ_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecodingState {
    pub k: usize,
    pub scheduled: Vec<usize>,
    pub g: CMat,
    pub phi: Vec<CVec>,
}

impl PrecodingState {
    pub fn new(k: usize, scheduled: Vec<usize>, g: CMat, phi: Vec<CVec>) -> Result<Self> {
        if scheduled.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("scheduled users must be strictly increasing"));
        }
        if scheduled.last().is_some_and(|&u| u >= k) {
            return Err(invalid(format!("scheduled user out of range for K={k}")));
        }
        if g.ncols() != scheduled.len() {
            return Err(invalid(format!(
                "precoder has {} columns for {} scheduled users",
                g.ncols(),
                scheduled.len()
            )));
        }
        Ok(Self { k, scheduled, g, phi })
    }

    /// Scheduling indicator `α`.
    pub fn alpha(&self) -> Vec<u8> {
        let mut a = vec![0; self.k];
        for &u in &self.scheduled {
            a[u] = 1;
        }
        a
    }

    /// Column of `g` serving `user`, if scheduled.
    pub fn column_of(&self, user: usize) -> Option<usize> {
        self.scheduled.iter().position(|&u| u == user)
    }

    /// Total transmit power `Σ ||g_u||²`.
    pub fn power(&self) -> f64 {
        self.g.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest `| |φ| - 1 |` over all elements.
    pub fn modulus_defect(&self) -> f64 {
        self.phi
            .iter()
            .flat_map(|p| p.iter())
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// All RIS phases stacked (NL).
    pub fn stacked_phi(&self) -> CVec {
        let n = self.phi.first().map_or(0, |p| p.len());
        let mut out = CVec::zeros(n * self.phi.len());
        for (l, p) in self.phi.iter().enumerate() {
            out.rows_mut(l * n, n).copy_from(p);
        }
        out
    }
}

/// Split a stacked NL phase vector back into per-RIS vectors.
pub fn split_phi(stacked: &CVec, l: usize) -> Vec<CVec> {
    let n = stacked.len() / l;
    (0..l).map(|i| stacked.rows(i * n, n).into_owned()).collect()
}

/// Per-user SINR on one channel realization. Unscheduled users get 0.
pub fn sinr(sample: &ChannelSample, state: &PrecodingState, sigma2: f64) -> Vec<f64> {
    let mut out = vec![0.0; state.k];
    for (col, &k) in state.scheduled.iter().enumerate() {
        let c = composite_row(sample, &state.phi, k);
        let gains: Vec<f64> = (0..state.g.ncols())
            .map(|u| row_times(&c, &state.g.column(u).into_owned()).norm_sqr())
            .collect();
        let interference: f64 = gains.iter().enumerate().filter(|(u, _)| *u != col).map(|(_, g)| g).sum();
        out[k] = gains[col] / (sigma2 + interference);
    }
    out
}

/// Monte-Carlo estimate of the ergodic rates.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    /// Mean of `Σ_k log2(1+ρ_k)`.
    pub sum_rate: f64,
    /// Standard error of `sum_rate`.
    pub std_err: f64,
    /// Mean rate of each user.
    pub per_user: Vec<f64>,
    pub samples: usize,
}

/// Ergodic sum rate by averaging over `samples` independent realizations.
/// Realization `i` always comes from stream index `i`, so the estimate does not
/// depend on thread scheduling.
pub fn ergodic_sum_rate_mc(
    stats: &ChannelStats,
    state: &PrecodingState,
    samples: usize,
    seed: SeedStream,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(invalid("Monte-Carlo needs at least one sample"));
    }
    let per_sample: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let s = sample_channels_indexed(stats, seed, i);
            sinr(&s, state, stats.sigma2)
                .into_iter()
                .map(|r| (1.0 + r).log2())
                .collect()
        })
        .collect();
    let n = samples as f64;
    let mut per_user = vec![0.0; state.k];
    let mut sums = Vec::with_capacity(samples);
    for rates in &per_sample {
        for (acc, r) in per_user.iter_mut().zip(rates) {
            *acc += r;
        }
        sums.push(rates.iter().sum::<f64>());
    }
    per_user.iter_mut().for_each(|r| *r /= n);
    let mean = sums.iter().sum::<f64>() / n;
    let var = if samples > 1 {
        sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        sum_rate: mean,
        std_err: (var / n).sqrt(),
        per_user,
        samples,
    })
}

/// `h̄_k^equ = h̄_k^H Φ H̄` as the M entries `r` with `h̄_k^equ g = Σ r_m g_m`.
pub fn equivalent_los(stats: &ChannelStats, phi_stacked: &CVec, k: usize) -> CVec {
    let hk = &stats.stacked_users[k];
    let w = CVec::from_fn(hk.len(), |i, _| hk[i].conj() * phi_stacked[i]);
    stats.stacked_bs_ris.transpose() * w
}

/// Φ-independent coefficients of `Q_k`.
///
/// `a[k][l]² = K_l β_l β_{k,l} N / ((K_l+1)(K_{k,l}+1))` and
/// `b[k]² = Σ_l β_l β_{k,l} N / (K_l+1)`.
#[derive(Clone, Debug)]
pub struct StatTerms {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl StatTerms {
    pub fn new(stats: &ChannelStats) -> Self {
        let n = stats.n as f64;
        let (kk, ll) = (stats.k(), stats.l());
        let mut a = vec![vec![0.0; ll]; kk];
        let mut b = vec![0.0; kk];
        for k in 0..kk {
            let mut b2 = 0.0;
            for l in 0..ll {
                let bl = stats.beta_bs_ris[l];
                let bkl = stats.beta_ris_user[k][l];
                let los_l = los_amplitude(stats.rician_bs_ris[l]).powi(2);
                let nlos_l = nlos_amplitude(stats.rician_bs_ris[l]).powi(2);
                let nlos_kl = nlos_amplitude(stats.rician_ris_user[k][l]).powi(2);
                a[k][l] = (los_l * bl * bkl * n * nlos_kl).sqrt();
                b2 += bl * bkl * n * nlos_l;
            }
            b[k] = b2.sqrt();
        }
        Self { a, b }
    }

    /// `Σ_l A_{k,l}² a_l a_l^H + B_k² I`.
    pub fn fixed_part(&self, stats: &ChannelStats, k: usize) -> CMat {
        let m = stats.m;
        let mut q = CMat::identity(m, m) * C64::from(self.b[k].powi(2));
        for (l, a) in stats.bs_steering.iter().enumerate() {
            q += (a * a.adjoint()) * C64::from(self.a[k][l].powi(2));
        }
        q
    }
}

/// `Q_k` from statistical CSI and the current phases (stacked, NL).
pub fn q_matrix(stats: &ChannelStats, phi_stacked: &CVec, k: usize) -> CMat {
    let terms = StatTerms::new(stats);
    q_matrix_with(stats, &terms, phi_stacked, k)
}

pub fn q_matrix_with(stats: &ChannelStats, terms: &StatTerms, phi_stacked: &CVec, k: usize) -> CMat {
    let r = equivalent_los(stats, phi_stacked, k);
    r.conjugate() * r.transpose() + terms.fixed_part(stats, k)
}

/// All `Q_k` plus the equivalent LoS rows for one phase configuration.
#[derive(Clone, Debug)]
pub struct QSet {
    pub equ: Vec<CVec>,
    pub q: Vec<CMat>,
}

impl QSet {
    pub fn new(stats: &ChannelStats, terms: &StatTerms, phi_stacked: &CVec) -> Self {
        let equ: Vec<CVec> = (0..stats.k()).map(|k| equivalent_los(stats, phi_stacked, k)).collect();
        let q = equ
            .iter()
            .enumerate()
            .map(|(k, r)| r.conjugate() * r.transpose() + terms.fixed_part(stats, k))
            .collect();
        Self { equ, q }
    }
}

/// SINR approximations `g_k^H Q_k g_k / (σ² + Σ_{n≠k} g_n^H Q_k g_n)` for the
/// scheduled users; unscheduled users get 0.
pub fn approx_sinrs(qset: &QSet, state: &PrecodingState, sigma2: f64) -> Vec<f64> {
    let mut out = vec![0.0; state.k];
    let cols: Vec<CVec> = (0..state.g.ncols()).map(|u| state.g.column(u).into_owned()).collect();
    for (col, &k) in state.scheduled.iter().enumerate() {
        let forms: Vec<f64> = cols.iter().map(|g| quad_form(&qset.q[k], g)).collect();
        let interference: f64 = forms.iter().enumerate().filter(|(u, _)| *u != col).map(|(_, f)| f).sum();
        out[k] = forms[col] / (sigma2 + interference);
    }
    out
}

/// Approximate ergodic rates `R̂_k` in bit/s/Hz.
pub fn approx_rates(stats: &ChannelStats, state: &PrecodingState) -> Vec<f64> {
    let terms = StatTerms::new(stats);
    let qset = QSet::new(stats, &terms, &state.stacked_phi());
    approx_sinrs(&qset, state, stats.sigma2)
        .into_iter()
        .map(|s| (1.0 + s).log2())
        .collect()
}

/// Jain's fairness index `(Σ r)² / (K Σ r²)`. All-zero rates give 0.
pub fn jfi(rates: &[f64]) -> f64 {
    let sum: f64 = rates.iter().sum();
    let sq: f64 = rates.iter().map(|r| r * r).sum();
    if sq <= 0.0 {
        log::warn!("JFI of an all-zero rate vector; returning 0");
        return 0.0;
    }
    sum * sum / (rates.len() as f64 * sq)
}
