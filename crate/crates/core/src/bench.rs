//! Experiment drivers: approximation check, baselines, parameter sweeps and
//! timing, each emitting a fixed CSV schema.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{build_stats, ChannelStats};
use crate::config::{dbm_to_watts, Scenario, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::{phasor, CVec, C64};
use crate::mappo::{build_observations, evaluate_greedy, train, PolicyBundle, Previous, TrainOutcome};
use crate::optimizer::{ao_solve, bfs_ao_solve, enumerate_schedules, random_init, AoOptions};
use crate::rate::{approx_rates, ergodic_sum_rate_mc, jfi, PrecodingState};
use crate::runtime::dynamic_loop;
use crate::streams::SeedStream;

/// Comparison schemes that need no training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    /// Random power-feasible `G`, phases optimized, best schedule.
    RandomPrecoding,
    /// Random phases, `G` optimized, best schedule.
    RandomRis,
    /// Uniformly drawn schedule, full alternating optimization.
    RandomScheduling,
    /// Cyclic schedule, full alternating optimization.
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub state: PrecodingState,
    /// Approximate sum rate (bit/s/Hz).
    pub objective: f64,
}

/// Phases drawn uniformly on `[0, 2π)`.
pub fn random_phases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| phasor(rng.random::<f64>() * std::f64::consts::TAU))
}

/// Users served by round-robin in interval `t`: `U` consecutive users,
/// wrapping around, in ascending order.
pub fn round_robin_schedule(k: usize, u: usize, t: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..u).map(|j| (t * u + j) % k).collect();
    s.sort_unstable();
    s
}

/// Run a baseline in coherence interval `interval`.
pub fn run_baseline(
    kind: BaselineKind,
    stats: &ChannelStats,
    u: usize,
    opts: &AoOptions,
    interval: usize,
    seed: SeedStream,
) -> Result<BaselineOutcome> {
    let codebook = enumerate_schedules(stats.k(), u)?;
    let t = interval as u64;
    let solve = |sched: &[usize], fixed: Option<bool>, rng: &mut rand_chacha::ChaCha8Rng| -> Result<BaselineOutcome> {
        let init = random_init(stats, sched, rng)?;
        let o = match fixed {
            Some(true) => AoOptions { optimize_precoder: false, ..opts.clone() },
            Some(false) => AoOptions { optimize_phases: false, ..opts.clone() },
            None => opts.clone(),
        };
        let sol = ao_solve(stats, sched, Some((init.g, init.phi)), &o, rng)?;
        Ok(BaselineOutcome { objective: sol.objective(), state: sol.state })
    };
    match kind {
        BaselineKind::RandomPrecoding | BaselineKind::RandomRis => {
            let freeze_g = kind == BaselineKind::RandomPrecoding;
            let runs = codebook
                .par_iter()
                .enumerate()
                .map(|(i, s)| solve(s, Some(freeze_g), &mut seed.rng(i as u64, t)))
                .collect::<Result<Vec<_>>>()?;
            let mut best = 0;
            for (i, r) in runs.iter().enumerate() {
                if r.objective > runs[best].objective {
                    best = i;
                }
            }
            Ok(runs.into_iter().nth(best).expect("nonempty codebook"))
        }
        BaselineKind::RandomScheduling => {
            let mut rng = seed.rng(u64::MAX, t);
            let pick = rng.random_range(0..codebook.len());
            solve(&codebook[pick], None, &mut rng)
        }
        BaselineKind::RoundRobin => {
            solve(&round_robin_schedule(stats.k(), u, interval), None, &mut seed.rng(u64::MAX - 1, t))
        }
    }
}

/// Every scheme the benchmark can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    BfsAo,
    Mappo,
    /// Scheduling agent plus alternating optimization for its schedule.
    PpoAo,
    Baseline(BaselineKind),
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::BfsAo,
        Algorithm::Mappo,
        Algorithm::PpoAo,
        Algorithm::Baseline(BaselineKind::RandomPrecoding),
        Algorithm::Baseline(BaselineKind::RandomRis),
        Algorithm::Baseline(BaselineKind::RandomScheduling),
        Algorithm::Baseline(BaselineKind::RoundRobin),
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BfsAo => "bfs-ao",
            Algorithm::Mappo => "mappo",
            Algorithm::PpoAo => "ppo-ao",
            Algorithm::Baseline(BaselineKind::RandomPrecoding) => "random-precoding",
            Algorithm::Baseline(BaselineKind::RandomRis) => "random-ris",
            Algorithm::Baseline(BaselineKind::RandomScheduling) => "random-scheduling",
            Algorithm::Baseline(BaselineKind::RoundRobin) => "round-robin",
        }
    }

    fn needs_policy(&self) -> bool {
        matches!(self, Algorithm::Mappo | Algorithm::PpoAo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown algorithm '{s}'")))
    }
}

/// Parameter varied across an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepVar {
    /// No sweep; the single value is ignored.
    None,
    PMaxDbm,
    /// Rician factor of every link, in dB.
    RicianDb,
    /// Elements per RIS; the row count `nx` is kept.
    Elements,
    RisCount,
    /// Nominal user count `K` (agents retrained).
    Users,
    /// Actual user count `K̂` at execution (agents trained for `K`).
    ActualUsers,
    FairnessWeight,
}

impl SweepVar {
    pub const ALL: [SweepVar; 8] = [
        SweepVar::None,
        SweepVar::PMaxDbm,
        SweepVar::RicianDb,
        SweepVar::Elements,
        SweepVar::RisCount,
        SweepVar::Users,
        SweepVar::ActualUsers,
        SweepVar::FairnessWeight,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepVar::None => "none",
            SweepVar::PMaxDbm => "p_max_dbm",
            SweepVar::RicianDb => "rician_db",
            SweepVar::Elements => "n",
            SweepVar::RisCount => "l",
            SweepVar::Users => "k",
            SweepVar::ActualUsers => "k_actual",
            SweepVar::FairnessWeight => "nu",
        }
    }

    /// Whether a policy trained on the base scenario can run at every value.
    fn keeps_policy(&self) -> bool {
        matches!(self, SweepVar::None | SweepVar::PMaxDbm | SweepVar::RicianDb | SweepVar::ActualUsers)
    }

    fn integer(&self) -> bool {
        matches!(self, SweepVar::Elements | SweepVar::RisCount | SweepVar::Users | SweepVar::ActualUsers)
    }
}

impl FromStr for SweepVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepVar::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| invalid(format!("unknown sweep variable '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub id: String,
    pub scenario: Scenario,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    /// Independent user drops averaged per cell.
    pub realizations: usize,
    /// Coherence intervals per drop; rates and fairness are averaged over them.
    pub intervals: usize,
    pub mc_samples: usize,
}

impl ExperimentSpec {
    pub fn new(id: impl Into<String>, scenario: Scenario) -> Self {
        Self {
            id: id.into(),
            sweep: SweepVar::None,
            values: vec![0.0],
            algorithms: vec![Algorithm::BfsAo],
            seeds: vec![0],
            realizations: scenario.eval.realizations,
            intervals: 4,
            mc_samples: scenario.eval.mc_samples,
            scenario,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one seed".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("an experiment needs at least one algorithm".into()));
        }
        if self.values.is_empty() || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite and nonempty".into()));
        }
        if self.sweep.integer() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(Error::Config(format!("sweep '{}' takes positive integers", self.sweep.name())));
        }
        if self.realizations == 0 || self.intervals == 0 || self.mc_samples == 0 {
            return Err(Error::Config("realizations, intervals and mc_samples must be at least 1".into()));
        }
        for &v in &self.values {
            self.point(v)?.scenario.validate()?;
        }
        Ok(())
    }

    fn point(&self, value: f64) -> Result<SweepPoint> {
        let mut s = self.scenario.clone();
        let mut users = s.system.k;
        match self.sweep {
            SweepVar::None => {}
            SweepVar::PMaxDbm => s.system.p_max = dbm_to_watts(value),
            SweepVar::RicianDb => {
                s.layout.rician_bs_ris_db = value;
                s.layout.rician_ris_user_db = value;
            }
            SweepVar::Elements => {
                let n = value as usize;
                if n % s.system.nx != 0 {
                    return Err(Error::Config(format!("N={n} is not a multiple of nx={}", s.system.nx)));
                }
                s.system.ny = n / s.system.nx;
            }
            SweepVar::RisCount => {
                s.system.l = value as usize;
                s.layout = s.layout.with_ris_count(s.system.l);
            }
            SweepVar::Users => {
                s.system.k = value as usize;
                users = s.system.k;
            }
            SweepVar::ActualUsers => {
                users = value as usize;
                if users <= s.system.u {
                    return Err(Error::Config(format!("K̂={users} must exceed U={}", s.system.u)));
                }
            }
            SweepVar::FairnessWeight => s.mappo.fairness_weight = value,
        }
        Ok(SweepPoint { scenario: s, users })
    }
}

struct SweepPoint {
    scenario: Scenario,
    /// Users actually present.
    users: usize,
}

/// Statistics for `users` users of a scenario whose agents serve `system.k`.
pub fn stats_for_users(system: &SystemConfig, geo: &crate::config::Geometry, users: usize) -> Result<ChannelStats> {
    let sys = SystemConfig { k: users, u: system.u.min(users.saturating_sub(1)).max(1), ..system.clone() };
    build_stats(&sys, geo)
}

/// Draw realization `r` of a scenario with `users` users.
pub fn drop_stats(s: &Scenario, users: usize, seed: SeedStream, r: usize) -> Result<ChannelStats> {
    let geo = s.layout.geometry(users, &mut seed.rng(3, r as u64))?;
    stats_for_users(&s.system, &geo, users)
}

/// Train agents on fresh user drops, one per episode.
pub fn train_on_drops(s: &Scenario, seed: SeedStream) -> Result<TrainOutcome> {
    let src = |e: usize| drop_stats(s, s.system.k, seed.child(0x7472), e);
    train(&src, s.system.u, &s.mappo, &s.ao, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub experiment: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub sweep_name: &'static str,
    pub sweep_value: f64,
    pub sum_rate_bps_hz: f64,
    pub jfi: f64,
    pub wall_time_ms: f64,
}

pub const BENCH_HEADER: [&str; 8] =
    ["experiment", "algorithm", "seed", "sweep_name", "sweep_value", "sum_rate_bps_hz", "jfi", "wall_time_ms"];

/// Average rate of each user over a set of decisions.
struct Window {
    per_user: Vec<f64>,
    decisions: usize,
    elapsed_ms: f64,
}

impl Window {
    fn new(k: usize) -> Self {
        Self { per_user: vec![0.0; k], decisions: 0, elapsed_ms: 0.0 }
    }

    fn add(&mut self, rates: &[f64]) {
        for (a, r) in self.per_user.iter_mut().zip(rates) {
            *a += r;
        }
        self.decisions += 1;
    }

    fn mean(&self) -> Vec<f64> {
        self.per_user.iter().map(|r| r / self.decisions.max(1) as f64).collect()
    }
}

fn mc_rates(stats: &ChannelStats, state: &PrecodingState, spec: &ExperimentSpec, seed: SeedStream) -> Result<Vec<f64>> {
    Ok(ergodic_sum_rate_mc(stats, state, spec.mc_samples, seed)?.per_user)
}

/// Decide and evaluate one realization with one algorithm.
fn run_cell(
    spec: &ExperimentSpec,
    algo: Algorithm,
    point: &SweepPoint,
    stats: &ChannelStats,
    policy: Option<&PolicyBundle>,
    seed: SeedStream,
) -> Result<Window> {
    let s = &point.scenario;
    let u = s.system.u;
    let mc_seed = seed.child(0x6d63);
    let mut w = Window::new(stats.k());
    let timed = |w: &mut Window, f: &mut dyn FnMut() -> Result<PrecodingState>| -> Result<PrecodingState> {
        let t0 = Instant::now();
        let st = f()?;
        w.elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
        Ok(st)
    };
    match algo {
        Algorithm::BfsAo => {
            let st = timed(&mut w, &mut || Ok(bfs_ao_solve(stats, u, &s.ao, seed)?.best.state))?;
            let r = mc_rates(stats, &st, spec, mc_seed)?;
            (0..spec.intervals).for_each(|_| w.add(&r));
        }
        Algorithm::Baseline(kind @ (BaselineKind::RandomPrecoding | BaselineKind::RandomRis)) => {
            let st = timed(&mut w, &mut || Ok(run_baseline(kind, stats, u, &s.ao, 0, seed)?.state))?;
            let r = mc_rates(stats, &st, spec, mc_seed)?;
            (0..spec.intervals).for_each(|_| w.add(&r));
        }
        Algorithm::Baseline(kind) => {
            for t in 0..spec.intervals {
                let st = timed(&mut w, &mut || Ok(run_baseline(kind, stats, u, &s.ao, t, seed)?.state))?;
                w.add(&mc_rates(stats, &st, spec, mc_seed)?);
            }
        }
        Algorithm::Mappo => {
            let bundle = policy.ok_or_else(|| invalid("mappo needs a policy"))?;
            let t0 = Instant::now();
            if stats.k() == bundle.k {
                let ev = evaluate_greedy(bundle, stats, spec.intervals, spec.mc_samples, mc_seed)?;
                w.elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
                (0..spec.intervals).for_each(|_| w.add(&ev.per_user));
            } else {
                let src = |_: usize| Ok(stats.clone());
                let trace = dynamic_loop(bundle, &src, spec.intervals, spec.mc_samples, mc_seed)?;
                w.elapsed_ms += t0.elapsed().as_secs_f64() * 1e3;
                trace.iter().for_each(|r| w.add(&r.rates));
            }
        }
        Algorithm::PpoAo => {
            let bundle = policy.ok_or_else(|| invalid("ppo-ao needs a policy"))?;
            if stats.k() != bundle.k {
                return Err(invalid("ppo-ao needs the nominal user count"));
            }
            let st = timed(&mut w, &mut || {
                let sched = ppo_schedule(bundle, stats)?;
                Ok(ao_solve(stats, &sched, None, &s.ao, &mut seed.rng(5, 0))?.state)
            })?;
            let r = mc_rates(stats, &st, spec, mc_seed)?;
            (0..spec.intervals).for_each(|_| w.add(&r));
        }
    }
    Ok(w)
}

/// Schedule chosen by the scheduling agent from the start-of-execution observation.
pub fn ppo_schedule(bundle: &PolicyBundle, stats: &ChannelStats) -> Result<Vec<usize>> {
    let prev = Previous::from_action(bundle, &bundle.start_action())?;
    let obs = build_observations(stats, &prev.scheduled, &prev.g_raw, &prev.phi);
    let a = bundle.execute_step(&obs)?;
    Ok(bundle.codebook[a.codeword].clone())
}

/// Run every (algorithm, sweep value, seed) cell. Agents come from `policy`
/// when given and dimensionally compatible, otherwise they are trained on
/// fresh drops of the sweep point. Rows follow the order of values, algorithms and seeds.
pub fn benchmark(spec: &ExperimentSpec, policy: Option<&PolicyBundle>) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let needs_policy = spec.algorithms.iter().any(Algorithm::needs_policy);
    let points: Vec<SweepPoint> = spec.values.iter().map(|&v| spec.point(v)).collect::<Result<_>>()?;

    // agents per (value index, seed index)
    let usable = |p: &PolicyBundle, sp: &SweepPoint| {
        let s = &sp.scenario.system;
        p.k == s.k && p.u == s.u && p.m == s.m && p.n == s.n() && p.l == s.l
    };
    let mut shared: Vec<Option<PolicyBundle>> = vec![None; spec.seeds.len()];
    let mut agents: Vec<Vec<Option<PolicyBundle>>> = Vec::with_capacity(points.len());
    for p in &points {
        let mut row = Vec::with_capacity(spec.seeds.len());
        for (si, &seed) in spec.seeds.iter().enumerate() {
            let train_seed = SeedStream(seed).child(0x706f);
            let agent = if !needs_policy {
                None
            } else if let Some(given) = policy.filter(|b| usable(b, p)) {
                Some(given.clone())
            } else if spec.sweep.keeps_policy() {
                if shared[si].is_none() {
                    shared[si] = Some(train_on_drops(&spec.scenario, train_seed)?.bundle);
                }
                shared[si].clone()
            } else {
                Some(train_on_drops(&p.scenario, train_seed)?.bundle)
            };
            row.push(agent);
        }
        agents.push(row);
    }

    let cells: Vec<(usize, usize, usize)> = (0..spec.algorithms.len())
        .flat_map(|a| (0..points.len()).flat_map(move |v| (0..spec.seeds.len()).map(move |s| (a, v, s))))
        .collect();
    cells
        .par_iter()
        .map(|&(ai, vi, si)| {
            let algo = spec.algorithms[ai];
            let point = &points[vi];
            let seed = SeedStream(spec.seeds[si]);
            let (mut rate, mut fair, mut ms) = (0.0, 0.0, 0.0);
            for r in 0..spec.realizations {
                let stats = drop_stats(&point.scenario, point.users, seed, r)?;
                let w = run_cell(spec, algo, point, &stats, agents[vi][si].as_ref(), seed.child(r as u64))?;
                let mean = w.mean();
                rate += mean.iter().sum::<f64>();
                fair += jfi(&mean);
                ms += w.elapsed_ms;
            }
            let n = spec.realizations as f64;
            Ok(BenchRow {
                experiment: spec.id.clone(),
                algorithm: algo,
                seed: spec.seeds[si],
                sweep_name: spec.sweep.name(),
                sweep_value: spec.values[vi],
                sum_rate_bps_hz: rate / n,
                jfi: fair / n,
                wall_time_ms: ms / n,
            })
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.experiment.clone(),
            r.algorithm.name().to_string(),
            r.seed.to_string(),
            r.sweep_name.to_string(),
            r.sweep_value.to_string(),
            r.sum_rate_bps_hz.to_string(),
            r.jfi.to_string(),
            r.wall_time_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One point of the approximation check.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxRow {
    pub p_max_dbm: f64,
    pub n: usize,
    pub approx_sum_rate: f64,
    pub mc_sum_rate: f64,
    pub mc_stderr: f64,
}

impl ApproxRow {
    pub fn relative_error(&self) -> f64 {
        (self.approx_sum_rate - self.mc_sum_rate).abs() / self.mc_sum_rate
    }
}

pub const APPROX_HEADER: [&str; 5] = ["p_max_dbm", "n", "approx_sum_rate", "mc_sum_rate", "mc_stderr"];

/// Approximate vs Monte-Carlo sum rate for one random state per `N`, with the
/// precoder rescaled to each transmit power. Rows are grouped by `N`.
pub fn validate_approximation(
    scenario: &Scenario,
    p_max_dbm: &[f64],
    n_values: &[usize],
    mc_samples: usize,
    seed: SeedStream,
) -> Result<Vec<ApproxRow>> {
    if p_max_dbm.is_empty() || n_values.is_empty() || p_max_dbm.iter().any(|p| !p.is_finite()) {
        return Err(invalid("approximation sweep needs finite powers and at least one N"));
    }
    let mut rows = Vec::with_capacity(p_max_dbm.len() * n_values.len());
    for (ni, &n) in n_values.iter().enumerate() {
        let spec = ExperimentSpec { sweep: SweepVar::Elements, ..ExperimentSpec::new("approx", scenario.clone()) };
        let point = spec.point(n as f64)?;
        let mut rng = seed.rng(4, ni as u64);
        let stats = drop_stats(&point.scenario, point.users, seed.child(ni as u64), 0)?;
        let codebook = enumerate_schedules(stats.k(), point.scenario.system.u)?;
        let sched = codebook[rng.random_range(0..codebook.len())].clone();
        let base = random_init(&stats, &sched, &mut rng)?;
        let mut cells: Vec<ApproxRow> = p_max_dbm
            .par_iter()
            .map(|&p| {
                let watts = dbm_to_watts(p);
                let at_p = stats.clone().with_p_max(watts);
                let g = &base.g * C64::from((watts / stats.p_max).sqrt());
                let st = PrecodingState::new(base.k, base.scheduled.clone(), g, base.phi.clone())?;
                let mc = ergodic_sum_rate_mc(&at_p, &st, mc_samples, seed.child(1000 + ni as u64))?;
                Ok(ApproxRow {
                    p_max_dbm: p,
                    n,
                    approx_sum_rate: approx_rates(&at_p, &st).iter().sum(),
                    mc_sum_rate: mc.sum_rate,
                    mc_stderr: mc.std_err,
                })
            })
            .collect::<Result<_>>()?;
        rows.append(&mut cells);
    }
    Ok(rows)
}

pub fn write_approx_csv<W: Write>(out: W, rows: &[ApproxRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(APPROX_HEADER)?;
    for r in rows {
        w.write_record([
            r.p_max_dbm.to_string(),
            r.n.to_string(),
            r.approx_sum_rate.to_string(),
            r.mc_sum_rate.to_string(),
            r.mc_stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const CONVERGENCE_HEADER: [&str; 2] = ["iteration", "approx_sum_rate"];

/// Objective trace of one alternating optimization; row 0 is the start point.
pub fn write_convergence_csv<W: Write>(out: W, trace: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONVERGENCE_HEADER)?;
    for (i, v) in trace.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Median wall time and decision quality of one scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub algorithm: Algorithm,
    pub median_ms: f64,
    pub runs: usize,
    pub sum_rate_bps_hz: f64,
    /// Sum rate relative to the exhaustive search, in percent.
    pub ratio_to_bfs_ao: f64,
}

pub const TIMING_HEADER: [&str; 5] = ["algorithm", "median_ms", "runs", "sum_rate_bps_hz", "ratio_to_bfs_ao_pct"];

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time `f` `runs` times after one discarded warmup call.
pub fn time_median<T>(runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut last = f()?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        last = f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(&times), last))
}

/// Timing of one agent step (observation, all actors, decoding), one
/// exhaustive search, and scheduling agent plus one alternating optimization.
pub fn time_algorithms(
    stats: &ChannelStats,
    bundle: &PolicyBundle,
    ao: &AoOptions,
    runs: usize,
    mc_samples: usize,
    seed: SeedStream,
) -> Result<Vec<TimingRow>> {
    if runs < 20 {
        return Err(invalid(format!("timing needs at least 20 runs, got {runs}")));
    }
    let mc_seed = seed.child(0x6d63);
    let (bfs_ms, bfs) = time_median(runs, || bfs_ao_solve(stats, bundle.u, ao, seed))?;
    let bfs_rate = ergodic_sum_rate_mc(stats, &bfs.best.state, mc_samples, mc_seed)?.sum_rate;

    let prev = Previous::from_action(bundle, &bundle.start_action())?;
    let (step_ms, _) = time_median(runs, || {
        let obs = build_observations(stats, &prev.scheduled, &prev.g_raw, &prev.phi);
        let a = bundle.execute_step(&obs)?;
        crate::mappo::decode_actions(&bundle.codebook, bundle.k, bundle.m, stats.p_max, &a)
    })?;
    let mappo_rate = evaluate_greedy(bundle, stats, 16, mc_samples, mc_seed)?.sum_rate_mc;

    let (ppo_ms, ppo) = time_median(runs, || {
        let sched = ppo_schedule(bundle, stats)?;
        ao_solve(stats, &sched, None, ao, &mut seed.rng(5, 0))
    })?;
    let ppo_rate = ergodic_sum_rate_mc(stats, &ppo.state, mc_samples, mc_seed)?.sum_rate;

    let row = |algorithm, median_ms, rate: f64| TimingRow {
        algorithm,
        median_ms,
        runs,
        sum_rate_bps_hz: rate,
        ratio_to_bfs_ao: rate / bfs_rate * 100.0,
    };
    Ok(vec![
        row(Algorithm::BfsAo, bfs_ms, bfs_rate),
        row(Algorithm::Mappo, step_ms, mappo_rate),
        row(Algorithm::PpoAo, ppo_ms, ppo_rate),
    ])
}

pub fn write_timing_csv<W: Write>(out: W, rows: &[TimingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TIMING_HEADER)?;
    for r in rows {
        w.write_record([
            r.algorithm.name().to_string(),
            r.median_ms.to_string(),
            r.runs.to_string(),
            r.sum_rate_bps_hz.to_string(),
            r.ratio_to_bfs_ao.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::testkit::desk_stats;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_phases_have_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let p = random_phases(n, &mut rng);
        assert!(p.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        let mean = p.sum() / C64::from(n as f64);
        // each component of e^{jθ} has variance 1/2
        let sigma = (0.5 / n as f64).sqrt();
        assert!(mean.re.abs() <= 3.0 * sigma && mean.im.abs() <= 3.0 * sigma, "{mean}");
    }

    #[test]
    fn round_robin_cycles() {
        let seq: Vec<Vec<usize>> = (0..4).map(|t| round_robin_schedule(4, 2, t)).collect();
        assert_eq!(seq, vec![vec![0, 1], vec![2, 3], vec![0, 1], vec![2, 3]]);
        for t in 0..10 {
            let pair = [round_robin_schedule(4, 2, t), round_robin_schedule(4, 2, t + 1)].concat();
            let mut all = pair.clone();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2, 3]);
        }
        assert_eq!(round_robin_schedule(3, 2, 1), vec![0, 2]);
    }

    #[test]
    fn baselines_respect_constraints() {
        let (stats, _) = desk_stats(2);
        let opts = AoOptions::default();
        for kind in [BaselineKind::RandomPrecoding, BaselineKind::RandomRis, BaselineKind::RandomScheduling, BaselineKind::RoundRobin] {
            let out = run_baseline(kind, &stats, 2, &opts, 1, SeedStream(4)).unwrap();
            assert!(out.state.power() <= stats.p_max * (1.0 + 1e-9), "{kind:?}");
            assert!(out.state.modulus_defect() < 1e-12);
            assert!(out.objective > 0.0);
            let again = run_baseline(kind, &stats, 2, &opts, 1, SeedStream(4)).unwrap();
            assert_eq!(out, again);
        }
        let rp = run_baseline(BaselineKind::RandomPrecoding, &stats, 2, &opts, 0, SeedStream(4)).unwrap();
        assert!((rp.state.power() - stats.p_max).abs() <= 1e-12 * stats.p_max);
        let rr = run_baseline(BaselineKind::RoundRobin, &stats, 2, &opts, 1, SeedStream(4)).unwrap();
        assert_eq!(rr.state.scheduled, vec![2, 3]);
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        for v in SweepVar::ALL {
            assert_eq!(v.name().parse::<SweepVar>().unwrap(), v);
        }
        assert!("pds".parse::<Algorithm>().is_err());
    }

    #[test]
    fn experiment_validation() {
        let mut s = ExperimentSpec::new("x", Scenario::desk());
        assert!(s.validate().is_ok());
        s.seeds.clear();
        assert!(s.validate().is_err());
        let s = ExperimentSpec { sweep: SweepVar::Elements, values: vec![6.0], ..ExperimentSpec::new("x", Scenario::desk()) };
        assert!(s.validate().is_err());
        let s = ExperimentSpec { sweep: SweepVar::PMaxDbm, values: vec![f64::NAN], ..ExperimentSpec::new("x", Scenario::desk()) };
        assert!(s.validate().is_err());
        let s = ExperimentSpec { sweep: SweepVar::ActualUsers, values: vec![2.0], ..ExperimentSpec::new("x", Scenario::desk()) };
        assert!(s.validate().is_err());
    }

    #[test]
    fn approximation_rows_and_monotonicity() {
        let rows = validate_approximation(&Scenario::desk(), &[-5.0, 5.0, 15.0], &[8, 16], 2000, SeedStream(1)).unwrap();
        assert_eq!(rows.len(), 6);
        for chunk in rows.chunks(3) {
            assert!(chunk.windows(2).all(|w| w[1].approx_sum_rate >= w[0].approx_sum_rate));
        }
        assert_eq!(rows[3].n, 16);
        let mut csv = Vec::new();
        write_approx_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), "p_max_dbm,n,approx_sum_rate,mc_sum_rate,mc_stderr");
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn benchmark_is_deterministic_and_bounded() {
        let mut sc = Scenario::desk();
        sc.ao.max_iters = 20;
        let spec = ExperimentSpec {
            sweep: SweepVar::PMaxDbm,
            values: vec![0.0, 10.0],
            algorithms: vec![Algorithm::BfsAo, Algorithm::Baseline(BaselineKind::RoundRobin)],
            seeds: vec![1, 2],
            realizations: 2,
            intervals: 2,
            mc_samples: 300,
            ..ExperimentSpec::new("sweep", sc)
        };
        let a = benchmark(&spec, None).unwrap();
        let b = benchmark(&spec, None).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.sum_rate_bps_hz, x.jfi), (y.sum_rate_bps_hz, y.jfi));
        }
        assert_eq!((a[0].algorithm, a[0].sweep_value, a[0].seed), (Algorithm::BfsAo, 0.0, 1));
        assert_eq!((a[7].algorithm, a[7].sweep_value, a[7].seed), (Algorithm::Baseline(BaselineKind::RoundRobin), 10.0, 2));
        for r in &a {
            assert!(r.jfi >= 0.25 - 1e-12 && r.jfi <= 1.0 + 1e-12, "{r:?}");
        }
        // a fixed pair leaves two of four users at zero
        assert!(a[..4].iter().all(|r| r.jfi <= 0.5 + 1e-12));
        let mut csv = Vec::new();
        write_bench_csv(&mut csv, &a).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "experiment,algorithm,seed,sweep_name,sweep_value,sum_rate_bps_hz,jfi,wall_time_ms"
        );
        assert!(text.lines().nth(1).unwrap().starts_with("sweep,bfs-ao,1,p_max_dbm,0,"));
    }

    #[test]
    fn timing_contract() {
        let (stats, _) = desk_stats(1);
        let bundle = PolicyBundle::new(4, 2, stats.m, stats.n, stats.l(), true, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut ao = AoOptions::default();
        ao.max_iters = 5;
        assert!(time_algorithms(&stats, &bundle, &ao, 19, 100, SeedStream(1)).is_err());
        let rows = time_algorithms(&stats, &bundle, &ao, 20, 200, SeedStream(1)).unwrap();
        assert_eq!(rows[0].algorithm, Algorithm::BfsAo);
        assert_eq!(rows[0].ratio_to_bfs_ao, 100.0);
        assert!(rows.iter().all(|r| r.median_ms > 0.0 && r.runs == 20));
        let mut csv = Vec::new();
        write_timing_csv(&mut csv, &rows).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("algorithm,median_ms,runs,sum_rate_bps_hz,ratio_to_bfs_ao_pct\n"));
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn convergence_csv() {
        let mut csv = Vec::new();
        write_convergence_csv(&mut csv, &[0.5, 0.75]).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "iteration,approx_sum_rate\n0,0.5\n1,0.75\n");
    }
}
