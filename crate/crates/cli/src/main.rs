//! Command-line front end: approximation check, BFS-AO solve, training,
//! evaluation, benchmark sweeps and timing. CSV goes to `--out` (stdout when
//! absent); failures print one JSON line `{"kind", "message"}` to stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rismaestro::bench::{
    benchmark, drop_stats, time_algorithms, train_on_drops, validate_approximation, write_approx_csv,
    write_bench_csv, write_convergence_csv, write_timing_csv, Algorithm, ExperimentSpec, SweepVar,
};
use rismaestro::mappo::{load_checkpoint, save_checkpoint, write_training_log, PolicyBundle};
use rismaestro::optimizer::bfs_ao_solve;
use rismaestro::runtime::{dynamic_loop, write_trace};
use rismaestro::{ergodic_sum_rate_mc, Error, Scenario, SeedStream};

#[derive(Parser)]
#[command(name = "rismaestro", version, about = "Scheduling, precoding and RIS phase control under statistical CSI")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file applied on top of the scale preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Agent checkpoint to write (train) or read (evaluate, bench, time).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Desk-scale preset (default).
    #[arg(long, global = true, conflicts_with = "full")]
    desk: bool,
    /// Full-scale preset.
    #[arg(long, global = true)]
    full: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate vs Monte-Carlo sum rate over transmit powers and element counts.
    ValidateApprox {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0])]
        powers_dbm: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
        elements: Vec<usize>,
    },
    /// Exhaustive schedule search with alternating optimization on one user drop;
    /// writes the winning schedule's objective trace.
    SolveBfsAo,
    /// Train the agents on fresh user drops; writes the training log.
    Train,
    /// Run trained agents interval by interval; writes the runtime trace.
    Evaluate {
        /// Users actually present (defaults to the nominal count).
        #[arg(long)]
        users: Option<usize>,
        #[arg(long, default_value_t = 16)]
        intervals: usize,
    },
    /// Parameter sweep over algorithms and seeds.
    Bench {
        #[arg(long, default_value = "bench")]
        id: String,
        #[arg(long, default_value = "none")]
        sweep: SweepVar,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [0.0])]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "bfs-ao")]
        algorithms: Vec<Algorithm>,
        #[arg(long, value_delimiter = ',', default_values_t = [1])]
        seeds: Vec<u64>,
        /// User drops averaged per cell (defaults to the configured count).
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long, default_value_t = 4)]
        intervals: usize,
    },
    /// Median decision times of the agents, the exhaustive search and PPO-AO.
    Time {
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
}

fn scenario(c: &Common) -> Result<Scenario, Error> {
    let base = if c.full { Scenario::full() } else { Scenario::desk() };
    match &c.config {
        Some(path) => Scenario::load(path, base),
        None => {
            base.validate()?;
            Ok(base)
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn checkpoint_path(c: &Common) -> Result<&Path, Error> {
    c.checkpoint.as_deref().ok_or_else(|| Error::InvalidInput("--checkpoint is required".into()))
}

/// The checkpoint when given, otherwise agents trained on fresh drops.
fn policy(c: &Common, s: &Scenario) -> Result<PolicyBundle, Error> {
    match &c.checkpoint {
        Some(path) => load_checkpoint(path),
        None => {
            log::info!("no checkpoint given; training agents first");
            Ok(train_on_drops(s, SeedStream(c.seed))?.bundle)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let c = &cli.common;
    let s = scenario(c)?;
    let seed = SeedStream(c.seed);
    let out = c.out.as_deref();
    match cli.command {
        Command::ValidateApprox { powers_dbm, elements } => {
            let rows = validate_approximation(&s, &powers_dbm, &elements, s.eval.mc_samples, seed)?;
            write_approx_csv(output(out)?, &rows)
        }
        Command::SolveBfsAo => {
            let stats = drop_stats(&s, s.system.k, seed, 0)?;
            let sol = bfs_ao_solve(&stats, s.system.u, &s.ao, seed)?;
            let mc = ergodic_sum_rate_mc(&stats, &sol.best.state, s.eval.mc_samples, seed.child(0x6d63))?;
            let users: Vec<usize> = sol.best.state.scheduled.iter().map(|u| u + 1).collect();
            log::info!(
                "schedule {users:?}: approximate {:.6} bit/s/Hz, Monte-Carlo {:.6} ± {:.1e}, {} iterations",
                sol.objective(),
                mc.sum_rate,
                mc.std_err,
                sol.best.iterations
            );
            write_convergence_csv(output(out)?, &sol.best.trace)
        }
        Command::Train => {
            let path = checkpoint_path(c)?;
            let outcome = train_on_drops(&s, seed)?;
            save_checkpoint(path, &outcome.bundle)?;
            write_training_log(output(out)?, &outcome.log)
        }
        Command::Evaluate { users, intervals } => {
            let bundle = load_checkpoint(checkpoint_path(c)?)?;
            let users = users.unwrap_or(s.system.k);
            let trace = dynamic_loop(&bundle, &|t| drop_stats(&s, users, seed, t), intervals, s.eval.mc_samples, seed)?;
            let mean = trace.iter().map(|r| r.sum_rate_mc).sum::<f64>() / trace.len().max(1) as f64;
            log::info!("{} intervals, mean Monte-Carlo sum rate {mean:.6} bit/s/Hz", trace.len());
            write_trace(output(out)?, &trace)
        }
        Command::Bench { id, sweep, values, algorithms, seeds, realizations, intervals } => {
            let mut spec = ExperimentSpec::new(id, s.clone());
            spec.sweep = sweep;
            spec.values = values;
            spec.algorithms = algorithms;
            spec.seeds = seeds;
            spec.intervals = intervals;
            if let Some(r) = realizations {
                spec.realizations = r;
            }
            let given = c.checkpoint.as_deref().map(load_checkpoint).transpose()?;
            let rows = benchmark(&spec, given.as_ref())?;
            write_bench_csv(output(out)?, &rows)
        }
        Command::Time { runs } => {
            let stats = drop_stats(&s, s.system.k, seed, 0)?;
            let bundle = policy(c, &s)?;
            let rows = time_algorithms(&stats, &bundle, &s.ao, runs, s.eval.mc_samples, seed)?;
            write_timing_csv(output(out)?, &rows)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", &e.kind().to_string(), e.render().to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), ""),
    }
}

fn fail(kind: &str, message: &str, detail: &str) -> ExitCode {
    let mut line = serde_json::json!({ "kind": kind, "message": message });
    if !detail.is_empty() {
        line["detail"] = detail.into();
    }
    eprintln!("{line}");
    ExitCode::FAILURE
}
