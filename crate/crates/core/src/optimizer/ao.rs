use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::channel::ChannelStats;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cn01, phasor, CMat, CVec, C64};
use crate::optimizer::fp::{
    cascade_vector, sum_rate_bits, update_active_aux, update_epsilon, update_passive_aux, Auxiliaries,
};
use crate::optimizer::manifold::{rcg_unit_modulus, ManifoldProblem};
use crate::optimizer::precoder::update_precoder;
use crate::optimizer::schedule::enumerate_schedules;
use crate::rate::{split_phi, PrecodingState, QSet, StatTerms};
use crate::streams::SeedStream;

/// Decrease tolerated before a sub-step counts as a regression.
pub const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AoOptions {
    /// Stop when the relative change of the objective falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Random initializations per schedule.
    pub restarts: usize,
    pub mo_tol: f64,
    pub mo_max_iters: usize,
    pub bisect_tol: f64,
    pub optimize_precoder: bool,
    pub optimize_phases: bool,
    /// Wall-clock budget for the schedule search.
    pub budget: Option<Duration>,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 100,
            restarts: 1,
            mo_tol: 1e-6,
            mo_max_iters: 200,
            bisect_tol: 1e-10,
            optimize_precoder: true,
            optimize_phases: true,
            budget: None,
        }
    }
}

impl AoOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.mo_tol > 0.0 && self.bisect_tol > 0.0) {
            return Err(Error::Config("ao.tol, mo.tol and bisect.tol must be positive".into()));
        }
        if self.max_iters == 0 || self.restarts == 0 || self.mo_max_iters == 0 {
            return Err(Error::Config("ao.max_iters, ao.restarts and mo.max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Random start: complex Gaussian `G` scaled to `P_max`, uniform phases.
pub fn random_init<R: Rng + ?Sized>(stats: &ChannelStats, scheduled: &[usize], rng: &mut R) -> Result<PrecodingState> {
    let mut g = CMat::from_fn(stats.m, scheduled.len(), |_, _| cn01(rng));
    let p = g.norm_squared();
    if p > 0.0 {
        g *= C64::from((stats.p_max / p).sqrt());
    }
    let phi = (0..stats.l())
        .map(|_| CVec::from_fn(stats.n, |_, _| phasor(rng.random::<f64>() * std::f64::consts::TAU)))
        .collect();
    PrecodingState::new(stats.k(), scheduled.to_vec(), g, phi)
}

/// Quadratic in `θ = conj(diag(Φ))` whose minimization is the phase step.
///
/// `U = Σ_k α_k w_k Σ_n α_n a_{n,k} a_{n,k}^H` with `w_k` the auxiliary weight
/// and `v = Σ_k α_k √(1+ε_k) x_k^* a_{k,k}`.
pub fn build_quadratic(stats: &ChannelStats, state: &PrecodingState, epsilon: &[f64], aux: &Auxiliaries) -> ManifoldProblem {
    let nl = stats.n * stats.l();
    let mut umat = CMat::zeros(nl, nl);
    let mut v = CVec::zeros(nl);
    for (ck, &k) in state.scheduled.iter().enumerate() {
        let w = aux.weight(k);
        for col in 0..state.scheduled.len() {
            let a = cascade_vector(stats, state, k, col);
            if w > 0.0 {
                umat += (&a * a.adjoint()) * C64::from(w);
            }
            if col == ck {
                v += a * (aux.eta[k].conj() * (1.0 + epsilon[k]).sqrt());
            }
        }
    }
    let umat = (&umat + umat.adjoint()) * C64::from(0.5);
    ManifoldProblem { umat, v, theta0: state.stacked_phi().conjugate() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AoSolution {
    pub state: PrecodingState,
    /// Approximate sum rate (bit/s/Hz) at the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lambda: f64,
    /// Sub-steps that lowered the objective by more than [`MONOTONE_SLACK`].
    pub substep_regressions: usize,
    /// Phase steps whose line search gave up early.
    pub rcg_degraded: usize,
}

impl AoSolution {
    pub fn objective(&self) -> f64 {
        *self.trace.last().unwrap_or(&0.0)
    }
}

/// Alternating optimization for one schedule.
///
/// Each iteration refreshes `ε`, the active auxiliaries and `G`, then `ε`,
/// the passive auxiliaries and `Φ`. A sub-step that would lower the objective
/// is rejected and counted.
pub fn ao_solve<R: Rng + ?Sized>(
    stats: &ChannelStats,
    scheduled: &[usize],
    init: Option<(CMat, Vec<CVec>)>,
    opts: &AoOptions,
    rng: &mut R,
) -> Result<AoSolution> {
    if scheduled.is_empty() {
        return Err(invalid("empty schedule"));
    }
    let mut state = match init {
        Some((g, phi)) => {
            if g.nrows() != stats.m || phi.len() != stats.l() || phi.iter().any(|p| p.len() != stats.n) {
                return Err(invalid("initial (G, Φ) does not match the system dimensions"));
            }
            PrecodingState::new(stats.k(), scheduled.to_vec(), g, phi)?
        }
        None => random_init(stats, scheduled, rng)?,
    };
    let sigma2 = stats.sigma2;
    let terms = StatTerms::new(stats);
    let mut qset = QSet::new(stats, &terms, &state.stacked_phi());
    let mut obj = sum_rate_bits(&qset, &state, sigma2);
    let mut trace = vec![obj];
    let mut sol = AoSolution {
        state: state.clone(),
        trace: Vec::new(),
        iterations: 0,
        converged: false,
        lambda: 0.0,
        substep_regressions: 0,
        rcg_degraded: 0,
    };

    for _ in 0..opts.max_iters {
        let prev = obj;
        if opts.optimize_precoder {
            let eps = update_epsilon(&qset, &state, sigma2);
            let aux = update_active_aux(stats, &terms, &qset, &state, &eps);
            let up = update_precoder(stats, &terms, &qset, &state, &eps, &aux, opts.bisect_tol)?;
            let cand = PrecodingState { g: up.g, ..state.clone() };
            let val = sum_rate_bits(&qset, &cand, sigma2);
            if val >= obj {
                state = cand;
                obj = val;
                sol.lambda = up.lambda;
            } else if val < obj - MONOTONE_SLACK {
                sol.substep_regressions += 1;
                log::warn!("precoder step lowered the objective from {obj} to {val}");
            }
        }
        if opts.optimize_phases {
            let eps = update_epsilon(&qset, &state, sigma2);
            let aux = update_passive_aux(stats, &terms, &qset, &state, &eps);
            let problem = build_quadratic(stats, &state, &eps, &aux);
            let out = rcg_unit_modulus(&problem, opts.mo_tol, opts.mo_max_iters);
            if out.degraded {
                sol.rcg_degraded += 1;
            }
            let phi = split_phi(&out.theta.conjugate(), stats.l());
            let cand = PrecodingState { phi, ..state.clone() };
            let cand_q = QSet::new(stats, &terms, &cand.stacked_phi());
            let val = sum_rate_bits(&cand_q, &cand, sigma2);
            if val >= obj {
                state = cand;
                qset = cand_q;
                obj = val;
            } else if val < obj - MONOTONE_SLACK {
                sol.substep_regressions += 1;
                log::warn!("phase step lowered the objective from {obj} to {val}");
            }
        }
        sol.iterations += 1;
        trace.push(obj);
        if (obj - prev).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            sol.converged = true;
            break;
        }
    }
    sol.state = state;
    sol.trace = trace;
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleResult {
    pub schedule: Vec<usize>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BfsAoSolution {
    /// Index of the winning schedule in the codebook.
    pub schedule_index: usize,
    pub best: AoSolution,
    /// Best objective of every schedule, in codebook order.
    pub table: Vec<ScheduleResult>,
}

impl BfsAoSolution {
    pub fn objective(&self) -> f64 {
        self.table[self.schedule_index].objective
    }
}

/// Exhaustive schedule search around [`ao_solve`].
///
/// Schedule `i`, restart `r` draws its start from `seed.rng(i, r)`. Schedules
/// run in parallel; ties go to the lowest codebook index, then restart.
pub fn bfs_ao_solve(stats: &ChannelStats, u: usize, opts: &AoOptions, seed: SeedStream) -> Result<BfsAoSolution> {
    opts.validate()?;
    let schedules = enumerate_schedules(stats.k(), u)?;
    let start = Instant::now();
    let runs: Vec<Option<Result<AoSolution>>> = schedules
        .par_iter()
        .enumerate()
        .map(|(i, sched)| {
            if opts.budget.is_some_and(|b| start.elapsed() > b) {
                return None;
            }
            let mut best: Option<AoSolution> = None;
            for r in 0..opts.restarts {
                let mut rng = seed.rng(i as u64, r as u64);
                let sol = match ao_solve(stats, sched, None, opts, &mut rng) {
                    Ok(s) => s,
                    Err(e) => return Some(Err(e)),
                };
                if best.as_ref().is_none_or(|b| sol.objective() > b.objective()) {
                    best = Some(sol);
                }
            }
            best.map(Ok)
        })
        .collect();

    let mut completed = Vec::new();
    let mut sols = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Some(Ok(s)) => {
                completed.push((i, s.objective()));
                sols.push(Some(s));
            }
            Some(Err(e)) => return Err(e),
            None => sols.push(None),
        }
    }
    if completed.len() < schedules.len() {
        return Err(Error::BudgetExceeded { completed, total: schedules.len() });
    }
    let table: Vec<ScheduleResult> = schedules
        .iter()
        .zip(&sols)
        .map(|(s, sol)| ScheduleResult { schedule: s.clone(), objective: sol.as_ref().map_or(0.0, |x| x.objective()) })
        .collect();
    let mut idx = 0;
    for (i, row) in table.iter().enumerate() {
        if row.objective > table[idx].objective {
            idx = i;
        }
    }
    let best = sols.swap_remove(idx).expect("completed schedule");
    Ok(BfsAoSolution { schedule_index: idx, best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigenvalues;
    use crate::optimizer::fp::{surrogate_objective, update_epsilon};
    use crate::optimizer::testkit::{desk_stats, random_state};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_hermitian_psd() {
        let (stats, mut rng) = desk_stats(21);
        let terms = StatTerms::new(&stats);
        let st = random_state(&stats, vec![0, 2], &mut rng);
        let qset = QSet::new(&stats, &terms, &st.stacked_phi());
        let eps = update_epsilon(&qset, &st, stats.sigma2);
        let aux = update_passive_aux(&stats, &terms, &qset, &st, &eps);
        let p = build_quadratic(&stats, &st, &eps, &aux);
        assert!(crate::linalg::hermitian_defect(&p.umat) <= 1e-10 * p.umat.norm());
        let ev = hermitian_eigenvalues(&p.umat);
        let trace: f64 = ev.iter().sum();
        assert!(ev[0] >= -1e-9 * trace);
    }

    #[test]
    fn zero_aux_gives_zero_quadratic() {
        let (stats, mut rng) = desk_stats(22);
        let st = random_state(&stats, vec![0, 2], &mut rng);
        let aux = Auxiliaries::zeros(stats.k(), stats.l(), stats.m);
        let p = build_quadratic(&stats, &st, &[0.0; 4], &aux);
        assert_eq!(p.umat.norm(), 0.0);
        assert_eq!(p.v.norm(), 0.0);
    }

    #[test]
    fn quadratic_tracks_surrogate_differences() {
        let (stats, mut rng) = desk_stats(23);
        let terms = StatTerms::new(&stats);
        let st = random_state(&stats, vec![1, 3], &mut rng);
        let qset = QSet::new(&stats, &terms, &st.stacked_phi());
        let eps = update_epsilon(&qset, &st, stats.sigma2);
        let aux = update_passive_aux(&stats, &terms, &qset, &st, &eps);
        let p = build_quadratic(&stats, &st, &eps, &aux);
        let other = random_state(&stats, vec![1, 3], &mut rng);
        let moved = PrecodingState { phi: other.phi.clone(), ..st.clone() };
        let q2 = QSet::new(&stats, &terms, &moved.stacked_phi());
        let s1 = surrogate_objective(&stats, &terms, &qset, &st, &eps, &aux);
        let s2 = surrogate_objective(&stats, &terms, &q2, &moved, &eps, &aux);
        let f1 = p.objective(&st.stacked_phi().conjugate());
        let f2 = p.objective(&moved.stacked_phi().conjugate());
        let scale = s1.abs().max(s2.abs());
        assert!(((s1 - s2) + (f1 - f2)).abs() <= 1e-8 * scale, "{} vs {}", s1 - s2, f2 - f1);
    }

    #[test]
    fn ao_is_monotone_and_feasible() {
        let (stats, _) = desk_stats(24);
        let opts = AoOptions::default();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sol = ao_solve(&stats, &[0, 1], None, &opts, &mut rng).unwrap();
            assert!(sol.trace.windows(2).all(|w| w[1] >= w[0] - MONOTONE_SLACK));
            assert_eq!(sol.substep_regressions, 0);
            assert!(sol.state.power() <= stats.p_max * (1.0 + 1e-9));
            assert!(sol.state.modulus_defect() <= 1e-12);
            assert!(sol.objective() > sol.trace[0]);
        }
    }

    #[test]
    fn single_iteration_is_usable() {
        let (stats, mut rng) = desk_stats(25);
        let opts = AoOptions { max_iters: 1, ..AoOptions::default() };
        let sol = ao_solve(&stats, &[2, 3], None, &opts, &mut rng).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.trace.len(), 2);
        assert_eq!(sol.state.scheduled, vec![2, 3]);
    }

    #[test]
    fn bfs_table_and_argmax() {
        let (stats, _) = desk_stats(26);
        let opts = AoOptions { max_iters: 20, ..AoOptions::default() };
        let a = bfs_ao_solve(&stats, 2, &opts, SeedStream(4)).unwrap();
        assert_eq!(a.table.len(), 6);
        let max = a.table.iter().map(|r| r.objective).fold(f64::MIN, f64::max);
        assert_eq!(a.objective(), max);
        assert_eq!(a.best.objective(), max);
        let b = bfs_ao_solve(&stats, 2, &opts, SeedStream(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn three_users_one_slot() {
        let (stats, _) = desk_stats(27);
        let small = stats.subset(&[0, 1, 3]).unwrap();
        let opts = AoOptions { max_iters: 5, ..AoOptions::default() };
        let sol = bfs_ao_solve(&small, 1, &opts, SeedStream(1)).unwrap();
        assert_eq!(sol.table.len(), 3);
    }

    #[test]
    fn zero_budget_reports_partial_results() {
        let (stats, _) = desk_stats(28);
        let opts = AoOptions { budget: Some(Duration::ZERO), ..AoOptions::default() };
        match bfs_ao_solve(&stats, 2, &opts, SeedStream(1)) {
            Err(Error::BudgetExceeded { total, completed }) => {
                assert_eq!(total, 6);
                assert!(completed.len() < 6);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_blocks_stay_frozen() {
        let (stats, mut rng) = desk_stats(29);
        let init = random_init(&stats, &[0, 1], &mut rng).unwrap();
        let opts = AoOptions { optimize_phases: false, max_iters: 5, ..AoOptions::default() };
        let sol = ao_solve(&stats, &[0, 1], Some((init.g.clone(), init.phi.clone())), &opts, &mut rng).unwrap();
        assert_eq!(sol.state.phi, init.phi);
        let opts = AoOptions { optimize_precoder: false, max_iters: 5, ..AoOptions::default() };
        let sol = ao_solve(&stats, &[0, 1], Some((init.g.clone(), init.phi.clone())), &opts, &mut rng).unwrap();
        assert_eq!(sol.state.g, init.g);
    }
}
