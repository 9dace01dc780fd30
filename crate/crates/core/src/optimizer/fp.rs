//! Lagrangian-dual and quadratic transforms of the approximate sum rate.
//!
//! With `y_k(G, Φ) = [h̄_k^equ g_k ; A_{k,i} a_i^H g_k ; B_k g_k]` the useful
//! power is `||y_k||² = g_k^H Q_k g_k`, and for fixed `ε` the sum rate is the
//! maximum over auxiliaries `(η, γ, μ)` of
//!
//! ```text
//! Σ_k α_k [ ln(1+ε_k) − ε_k + 2√(1+ε_k) Re{η_k^* h̄_k^equ g_k + Σ_i γ_{k,i}^* A_{k,i} a_i^H g_k + B_k μ_k^H g_k}
//!           − (|η_k|² + Σ_i |γ_{k,i}|² + ||μ_k||²) C_k ]
//! ```
//!
//! where `C_k = σ² + Σ_n α_n g_n^H Q_k g_n`. Objectives here are in nats;
//! [`sum_rate_bits`] is the only bit-valued quantity.

use crate::channel::ChannelStats;
use crate::linalg::{quad_form, row_times, CMat, CVec, C64};
use crate::rate::{approx_sinrs, PrecodingState, QSet, StatTerms};

/// Floor added to every `C_k`.
pub const DENOMINATOR_FLOOR: f64 = 1e-30;

/// Quadratic-transform auxiliaries, indexed by user.
///
/// The active step calls them `(η, γ, μ)` and the passive step `(x, y, z)`;
/// both share this layout. Unscheduled users hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Auxiliaries {
    /// `η_k`: coefficient of the LoS-cascade term.
    pub eta: Vec<C64>,
    /// `γ_{k,i}`: coefficient of the BS-steering term of RIS `i`.
    pub gamma: Vec<Vec<C64>>,
    /// `μ_k` (M entries): coefficient of the isotropic term.
    pub mu: Vec<CVec>,
}

impl Auxiliaries {
    pub fn zeros(k: usize, l: usize, m: usize) -> Self {
        Self {
            eta: vec![C64::from(0.0); k],
            gamma: vec![vec![C64::from(0.0); l]; k],
            mu: vec![CVec::zeros(m); k],
        }
    }

    /// `|η_k|² + Σ_i |γ_{k,i}|² + ||μ_k||²`.
    pub fn weight(&self, k: usize) -> f64 {
        self.eta[k].norm_sqr() + self.gamma[k].iter().map(|z| z.norm_sqr()).sum::<f64>() + self.mu[k].norm_squared()
    }
}

fn columns(g: &CMat) -> Vec<CVec> {
    (0..g.ncols()).map(|u| g.column(u).into_owned()).collect()
}

/// `C_k` for every user (including unscheduled ones, which see all columns as interference).
pub fn denominators(qset: &QSet, state: &PrecodingState, sigma2: f64) -> Vec<f64> {
    let cols = columns(&state.g);
    (0..state.k)
        .map(|k| sigma2 + cols.iter().map(|g| quad_form(&qset.q[k], g)).sum::<f64>() + DENOMINATOR_FLOOR)
        .collect()
}

/// Optimal Lagrangian-dual variables: the approximate SINRs of the scheduled users.
pub fn update_epsilon(qset: &QSet, state: &PrecodingState, sigma2: f64) -> Vec<f64> {
    approx_sinrs(qset, state, sigma2)
}

fn quadratic_aux(
    stats: &ChannelStats,
    terms: &StatTerms,
    qset: &QSet,
    state: &PrecodingState,
    epsilon: &[f64],
) -> Auxiliaries {
    let mut aux = Auxiliaries::zeros(state.k, stats.l(), stats.m);
    let c = denominators(qset, state, stats.sigma2);
    for (col, &k) in state.scheduled.iter().enumerate() {
        let g = state.g.column(col).into_owned();
        let s = (1.0 + epsilon[k]).sqrt() / c[k];
        aux.eta[k] = row_times(&qset.equ[k], &g) * s;
        for (i, a) in stats.bs_steering.iter().enumerate() {
            aux.gamma[k][i] = a.dotc(&g) * (terms.a[k][i] * s);
        }
        aux.mu[k] = g * C64::from(terms.b[k] * s);
    }
    aux
}

/// `(η, γ, μ)` maximizing the transformed objective for the current `G`.
pub fn update_active_aux(
    stats: &ChannelStats,
    terms: &StatTerms,
    qset: &QSet,
    state: &PrecodingState,
    epsilon: &[f64],
) -> Auxiliaries {
    quadratic_aux(stats, terms, qset, state, epsilon)
}

/// `(x, y, z)` for the phase step. They take the same closed form as the
/// active auxiliaries but are evaluated after the precoder update.
pub fn update_passive_aux(
    stats: &ChannelStats,
    terms: &StatTerms,
    qset: &QSet,
    state: &PrecodingState,
    epsilon: &[f64],
) -> Auxiliaries {
    quadratic_aux(stats, terms, qset, state, epsilon)
}

/// `Σ_k R̂_k` in bit/s/Hz.
pub fn sum_rate_bits(qset: &QSet, state: &PrecodingState, sigma2: f64) -> f64 {
    approx_sinrs(qset, state, sigma2).iter().map(|s| s.ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

/// Lagrangian-dual objective for a given `ε` (nats).
pub fn dual_objective(qset: &QSet, state: &PrecodingState, sigma2: f64, epsilon: &[f64]) -> f64 {
    let cols = columns(&state.g);
    state
        .scheduled
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let forms: Vec<f64> = cols.iter().map(|g| quad_form(&qset.q[k], g)).collect();
            let c = sigma2 + forms.iter().sum::<f64>() + DENOMINATOR_FLOOR;
            let e = epsilon[k];
            e.ln_1p() - e + (1.0 + e) * forms[col] / c
        })
        .sum()
}

/// Quadratic-transform objective for given `ε` and auxiliaries (nats).
pub fn surrogate_objective(
    stats: &ChannelStats,
    terms: &StatTerms,
    qset: &QSet,
    state: &PrecodingState,
    epsilon: &[f64],
    aux: &Auxiliaries,
) -> f64 {
    let c = denominators(qset, state, stats.sigma2);
    state
        .scheduled
        .iter()
        .enumerate()
        .map(|(col, &k)| {
            let g = state.g.column(col).into_owned();
            let mut lin = aux.eta[k].conj() * row_times(&qset.equ[k], &g) + aux.mu[k].dotc(&g) * terms.b[k];
            for (i, a) in stats.bs_steering.iter().enumerate() {
                lin += aux.gamma[k][i].conj() * a.dotc(&g) * terms.a[k][i];
            }
            let e = epsilon[k];
            e.ln_1p() - e + 2.0 * (1.0 + e).sqrt() * lin.re - aux.weight(k) * c[k]
        })
        .sum()
}

/// `a_{n,k} = diag(h̄_k^*) H̄ g_n` (NL entries) for precoder column `col`.
///
/// With `θ = conj(diag(Φ))`, `θ^H a_{n,k} = h̄_k^equ g_n`.
pub fn cascade_vector(stats: &ChannelStats, state: &PrecodingState, k: usize, col: usize) -> CVec {
    let hg = &stats.stacked_bs_ris * state.g.column(col);
    let hk = &stats.stacked_users[k];
    CVec::from_fn(hk.len(), |i, _| hk[i].conj() * hg[i])
}
