//! Closed-form precoder update with the power multiplier found by bisection.

use crate::channel::ChannelStats;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::optimizer::fp::Auxiliaries;
use crate::rate::{PrecodingState, QSet, StatTerms};

/// Doubling cap for the bracket's upper end (scaled units).
const BRACKET_CAP: f64 = 1.152_921_504_606_847e18; // 2^60

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderUpdate {
    pub g: CMat,
    /// Power multiplier `λ ≥ 0`.
    pub lambda: f64,
    /// `Σ ||g_n||²` of the returned precoder.
    pub power: f64,
    pub bisect_iters: usize,
}

/// `g_k = (λI + Σ_i α_i w_i Q_i)^{-1} √(1+ε_k)(η_k conj(h̄_k^equ) + Σ_j A_{k,j} γ_{k,j} a_j + B_k μ_k)`
/// with the smallest `λ ≥ 0` meeting the power budget.
///
/// The system is diagonalized once; the bisection runs on `λ / s` with `s`
/// the largest eigenvalue and stops when the bracket shrinks below
/// `bisect_tol` relative to its upper end. The upper (feasible) end is returned.
pub fn update_precoder(
    stats: &ChannelStats,
    terms: &StatTerms,
    qset: &QSet,
    state: &PrecodingState,
    epsilon: &[f64],
    aux: &Auxiliaries,
    bisect_tol: f64,
) -> Result<PrecoderUpdate> {
    let m = stats.m;
    let mut w = CMat::zeros(m, m);
    for &k in &state.scheduled {
        w += &qset.q[k] * C64::from(aux.weight(k));
    }
    let w = (&w + w.adjoint()) * C64::from(0.5);
    let rhs: Vec<CVec> = state
        .scheduled
        .iter()
        .map(|&k| {
            let mut v = qset.equ[k].conjugate() * aux.eta[k] + &aux.mu[k] * C64::from(terms.b[k]);
            for (j, a) in stats.bs_steering.iter().enumerate() {
                v += a * (aux.gamma[k][j] * terms.a[k][j]);
            }
            v * C64::from((1.0 + epsilon[k]).sqrt())
        })
        .collect();

    let eig = w.symmetric_eigen();
    let d: Vec<f64> = eig.eigenvalues.iter().map(|&x| x.max(0.0)).collect();
    let v = eig.eigenvectors;
    let b: Vec<CVec> = rhs.iter().map(|r| v.adjoint() * r).collect();
    let scale = d.iter().cloned().fold(0.0, f64::max);
    let p_max = stats.p_max;

    let coeff: Vec<f64> = (0..m).map(|i| b.iter().map(|bk| bk[i].norm_sqr()).sum()).collect();
    if coeff.iter().all(|&c| c == 0.0) {
        return Ok(PrecoderUpdate { g: CMat::zeros(m, rhs.len()), lambda: 0.0, power: 0.0, bisect_iters: 0 });
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    // Power as a function of the scaled multiplier.
    let power = |t: f64| -> f64 {
        let lam = t * scale;
        coeff
            .iter()
            .zip(&d)
            .map(|(&c, &di)| {
                if c == 0.0 {
                    0.0
                } else {
                    let den = di + lam;
                    if den <= 0.0 {
                        f64::INFINITY
                    } else {
                        c / (den * den)
                    }
                }
            })
            .sum()
    };

    let mut iters = 0;
    let t = if power(0.0) <= p_max {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        while power(hi) > p_max {
            lo = hi;
            hi *= 2.0;
            iters += 1;
            if hi > BRACKET_CAP {
                return Err(Error::SolverFailure {
                    context: "precoder bisection",
                    diagnostics: format!("no feasible multiplier below 2^60 (scaled), P_max={p_max:e}, scale={scale:e}"),
                });
            }
        }
        while iters < 4000 && hi - lo > bisect_tol * hi {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power(mid) > p_max {
                lo = mid;
            } else {
                hi = mid;
            }
            iters += 1;
            if (p_max - power(hi)) <= 1e-13 * p_max {
                break;
            }
        }
        hi
    };
    let lambda = t * scale;
    let mut g = CMat::zeros(m, rhs.len());
    for (col, bk) in b.iter().enumerate() {
        let scaled = CVec::from_fn(m, |i, _| {
            let den = d[i] + lambda;
            if bk[i] == C64::from(0.0) {
                C64::from(0.0)
            } else {
                bk[i] / den
            }
        });
        g.set_column(col, &(&v * scaled));
    }
    let total = g.norm_squared();
    Ok(PrecoderUpdate { g, lambda, power: total, bisect_iters: iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::fp::{sum_rate_bits, update_active_aux, update_epsilon};
    use crate::optimizer::testkit::{desk_stats, random_state};

    fn step(stats: &ChannelStats, st: &PrecodingState) -> PrecoderUpdate {
        let terms = StatTerms::new(stats);
        let qset = QSet::new(stats, &terms, &st.stacked_phi());
        let eps = update_epsilon(&qset, st, stats.sigma2);
        let aux = update_active_aux(stats, &terms, &qset, st, &eps);
        update_precoder(stats, &terms, &qset, st, &eps, &aux, 1e-10).unwrap()
    }

    #[test]
    fn power_budget_and_slackness() {
        let (stats, mut rng) = desk_stats(11);
        for _ in 0..20 {
            let st = random_state(&stats, vec![0, 1], &mut rng);
            let up = step(&stats, &st);
            assert!(up.lambda >= 0.0);
            assert!(up.power <= stats.p_max * (1.0 + 1e-9));
            assert!(up.lambda * (stats.p_max - up.power) <= 1e-6 * stats.p_max);
            if up.lambda > 0.0 {
                assert!((up.power - stats.p_max).abs() <= 1e-6 * stats.p_max);
            }
        }
    }

    #[test]
    fn generous_budget_gives_zero_multiplier() {
        let (stats, mut rng) = desk_stats(12);
        let st = random_state(&stats, vec![0, 1], &mut rng);
        // With enough budget the unconstrained stationary point is feasible.
        let rich = stats.clone().with_p_max(1e30);
        let up = step(&rich, &st);
        assert_eq!(up.lambda, 0.0);
        assert!(up.power < 1e30);
    }

    #[test]
    fn single_user_beats_random_precoders() {
        let (stats, mut rng) = desk_stats(13);
        let terms = StatTerms::new(&stats);
        let mut st = random_state(&stats, vec![2], &mut rng);
        let qset = QSet::new(&stats, &terms, &st.stacked_phi());
        for _ in 0..30 {
            st.g = step(&stats, &st).g;
        }
        let best = sum_rate_bits(&qset, &st, stats.sigma2);
        for _ in 0..100 {
            let r = random_state(&stats, vec![2], &mut rng);
            let cand = PrecodingState { phi: st.phi.clone(), ..r };
            assert!(sum_rate_bits(&qset, &cand, stats.sigma2) <= best + 1e-12);
        }
    }
}
