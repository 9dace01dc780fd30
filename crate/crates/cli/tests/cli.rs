use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rismaestro")).current_dir(dir).args(args).output().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(v["message"].is_string());
    v["kind"].as_str().unwrap().to_owned()
}

const SMALL: &str = "
[mc]
samples = 300

[bench]
realizations = 1

[mappo]
episodes = 2
steps_per_episode = 16
buffer_size = 16
batch_size = 8
sample_reuse = 1
";

#[test]
fn solve_writes_nondecreasing_trace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = run(dir.path(), &["solve-bfs-ao", "--config", "small.toml", "--seed", "4", "--out", "trace.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&dir.path().join("trace.csv"));
    assert_eq!(rows[0], "iteration,approx_sum_rate");
    let vals: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(vals.len() >= 2 && vals.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn validate_approx_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = run(dir.path(), &["validate-approx", "--config", "small.toml", "--powers-dbm=-5,10", "--elements", "8,16"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "p_max_dbm,n,approx_sum_rate,mc_sum_rate,mc_stderr");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("-5,8,") && rows[4].starts_with("10,16,"));
}

#[test]
fn train_then_evaluate_bench_and_time() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let base = ["--config", "small.toml", "--checkpoint", "agents.bin"];

    let out = run(dir.path(), &[&base[..], &["train", "--out", "log.csv"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = lines(&dir.path().join("log.csv"));
    assert_eq!(
        log[0],
        "episode,mean_reward,sum_rate_eval,jfi_eval,actor_loss_scheduler,actor_loss_precoder,actor_loss_ris,critic_loss"
    );
    assert_eq!(log.len(), 3);
    let ckpt = std::fs::read(dir.path().join("agents.bin")).unwrap();
    assert_eq!(&ckpt[..11], b"RISMAESTRO1");

    let out = run(dir.path(), &[&base[..], &["evaluate", "--users", "6", "--intervals", "3", "--out", "run.csv"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = lines(&dir.path().join("run.csv"));
    assert_eq!(trace[0], "interval,scheduled_users,sum_rate_mc,jfi,overhead_bits_saved");
    assert_eq!(trace.len(), 4);
    // 8 bits for each of N·L = 16 phases
    assert!(trace[1..].iter().all(|r| r.ends_with(",128")));

    let out = run(
        dir.path(),
        &[&base[..], &["bench", "--algorithms", "mappo,round-robin", "--seeds", "1,2", "--intervals", "2", "--out", "bench.csv"]].concat(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bench = lines(&dir.path().join("bench.csv"));
    assert_eq!(bench[0], "experiment,algorithm,seed,sweep_name,sweep_value,sum_rate_bps_hz,jfi,wall_time_ms");
    assert_eq!(bench.len(), 5);
    assert!(bench[1].starts_with("bench,mappo,1,none,0,") && bench[4].starts_with("bench,round-robin,2,"));

    let out = run(dir.path(), &[&base[..], &["time", "--runs", "20", "--out", "time.csv"]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let time = lines(&dir.path().join("time.csv"));
    assert_eq!(time[0], "algorithm,median_ms,runs,sum_rate_bps_hz,ratio_to_bfs_ao_pct");
    assert!(time[1].starts_with("bfs-ao,") && time[1].ends_with(",100"));
    assert!(time[2].starts_with("mappo,") && time[3].starts_with("ppo-ao,"));
}

#[test]
fn failures_emit_json_line() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(error_kind(&run(dir.path(), &["evaluate"])), "invalid-input");
    std::fs::write(dir.path().join("bad.toml"), "[system]\nM = 0\n").unwrap();
    assert_eq!(error_kind(&run(dir.path(), &["--config", "bad.toml", "solve-bfs-ao"])), "invalid-input");
    std::fs::write(dir.path().join("typo.toml"), "[sytem]\nM = 4\n").unwrap();
    assert_eq!(error_kind(&run(dir.path(), &["--config", "typo.toml", "solve-bfs-ao"])), "config");
    std::fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
    assert_eq!(error_kind(&run(dir.path(), &["--checkpoint", "junk.bin", "evaluate"])), "checkpoint");
    assert_eq!(error_kind(&run(dir.path(), &["bench", "--sweep", "bogus"])), "usage");
    assert_eq!(error_kind(&run(dir.path(), &["--desk", "--full", "solve-bfs-ao"])), "usage");
    assert_eq!(error_kind(&run(dir.path(), &["time", "--runs", "5", "--checkpoint", "missing.bin"])), "io");
}

#[test]
fn same_seed_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let a = run(dir.path(), &["validate-approx", "--config", "small.toml", "--seed", "9"]);
    let b = run(dir.path(), &["validate-approx", "--config", "small.toml", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
