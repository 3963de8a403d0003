use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use obsprune::matcore::{read_matrix_file, write_matrix_file};
use obsprune::obs_lora::{read_adapter_text, write_adapter_text, LoraAdapter};
use obsprune::synth::{random_matrix, seeded_rng};
use obsprune::Matrix;
use obsprune_cli::report::strip_timestamp;
use tempfile::TempDir;

fn obsprune(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsprune"))
        .current_dir(dir)
        .env_remove("OBSPRUNE_SEED")
        .env_remove("OBSPRUNE_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn matrix_files(dir: &Path, seed: u64, m: usize, n: usize) {
    let mut rng = seeded_rng(seed);
    write_matrix_file(dir.join("w.txt"), &random_matrix(&mut rng, m, n, 1.0)).unwrap();
    write_matrix_file(dir.join("g.txt"), &random_matrix(&mut rng, m, n, 1.0)).unwrap();
}

fn zero_columns(m: &Matrix) -> usize {
    (0..m.cols()).filter(|&j| (0..m.rows()).all(|i| m[(i, j)] == 0.0)).count()
}

#[test]
fn prune_matrix_greedy_zeroes_k_columns() {
    let dir = TempDir::new().unwrap();
    matrix_files(dir.path(), 1, 4, 6);
    let o = obsprune(dir.path(), &["prune-matrix", "--w", "w.txt", "--g", "g.txt", "--k", "2", "--lambda", "1e-2", "--strategy", "greedy"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pruned = read_matrix_file(dir.path().join("pruned.txt")).unwrap();
    assert_eq!(zero_columns(&pruned), 2);
    let report = fs::read_to_string(dir.path().join("prune-matrix.report")).unwrap();
    assert!(report.contains("# config strategy=greedy"));
    assert_eq!(report.lines().filter(|l| l.starts_with("prune,")).count(), 1);
}

#[test]
fn prune_matrix_k_zero_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    matrix_files(dir.path(), 2, 3, 5);
    let o = obsprune(dir.path(), &["prune-matrix", "--w", "w.txt", "--g", "g.txt", "--k", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("precondition"), "{}", stderr(&o));
}

#[test]
fn prune_matrix_oracle_agrees() {
    let dir = TempDir::new().unwrap();
    matrix_files(dir.path(), 3, 3, 7);
    let o = obsprune(dir.path(), &["prune-matrix", "--w", "w.txt", "--g", "g.txt", "--k", "3", "--strategy", "exhaustive", "--oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("prune-matrix.report")).unwrap();
    let line = report.lines().find(|l| l.starts_with("oracle,")).unwrap();
    assert!(line.starts_with("oracle,source=oracle,") && line.ends_with("agreement=true"), "{line}");
}

#[test]
fn singular_curvature_exits_numerical() {
    let dir = TempDir::new().unwrap();
    let mut rng = seeded_rng(4);
    write_matrix_file(dir.path().join("w.txt"), &random_matrix(&mut rng, 1, 4, 1.0)).unwrap();
    write_matrix_file(dir.path().join("g.txt"), &random_matrix(&mut rng, 1, 4, 1.0)).unwrap();
    let o = obsprune(dir.path(), &["prune-matrix", "--w", "w.txt", "--g", "g.txt", "--k", "1", "--lambda", "0", "--damping", "absolute"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("not positive definite"));
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let o = obsprune(dir.path(), &["prune-matrix", "--w", "nope.txt", "--g", "nope.txt", "--k", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"));
    let o = obsprune(dir.path(), &["prune-matrix", "--k", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--w"));
    let o = obsprune(dir.path(), &["prune-matrix", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn prune_lora_compacts_and_agrees_with_oracle() {
    let dir = TempDir::new().unwrap();
    let mut rng = seeded_rng(5);
    let adapter = LoraAdapter::new(random_matrix(&mut rng, 6, 5, 1.0), random_matrix(&mut rng, 4, 6, 1.0), 12.0).unwrap();
    let mut buf = Vec::new();
    write_adapter_text(&mut buf, &adapter).unwrap();
    fs::write(dir.path().join("adapter.in"), buf).unwrap();
    write_matrix_file(dir.path().join("ga.txt"), &random_matrix(&mut rng, 6, 5, 1.0)).unwrap();
    write_matrix_file(dir.path().join("gb.txt"), &random_matrix(&mut rng, 4, 6, 1.0)).unwrap();
    let o = obsprune(
        dir.path(),
        &["prune-lora", "--adapter", "adapter.in", "--grad-a", "ga.txt", "--grad-b", "gb.txt", "--k", "2", "--alpha-policy", "proportional", "--oracle"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pruned = read_adapter_text(&fs::read_to_string(dir.path().join("adapter.txt")).unwrap()).unwrap();
    assert_eq!((pruned.rank(), pruned.alpha()), (4, 4.0));
    let report = fs::read_to_string(dir.path().join("prune-lora.report")).unwrap();
    assert!(report.lines().any(|l| l.starts_with("lora_prune,") && l.ends_with(",6,4,12.0,4.0")), "{report}");
    assert!(report.contains("agreement=true"));
}

#[test]
fn train_events_follow_the_schedule() {
    let dir = TempDir::new().unwrap();
    let o = obsprune(dir.path(), &["train", "--init-rank", "16", "--target-rank", "4", "--k1", "5", "--k2", "2", "--seed", "7", "--steps", "40"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("train.report")).unwrap();
    let events: Vec<(usize, usize)> = report
        .lines()
        .filter(|l| l.starts_with("train,"))
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| !f[6].is_empty())
        .map(|f| (f[1].parse().unwrap(), f[3].parse().unwrap()))
        .collect();
    assert_eq!(events, vec![(5, 14), (10, 12), (15, 10), (20, 8), (25, 6), (30, 4)]);
    assert!(report.contains("# seed 7\n"));
}

#[test]
fn infeasible_schedule_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = obsprune(dir.path(), &["train", "--init-rank", "16", "--target-rank", "4", "--k1", "50", "--steps", "100"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn precedence_of_flags_env_file_and_defaults() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.toml"), "seed = 3\ntrials = 4\nout_dir = \"from_file\"\n").unwrap();
    let run = |extra_env: Option<(&str, &str)>, args: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_obsprune"));
        cmd.current_dir(dir.path()).env_remove("OBSPRUNE_SEED").env_remove("OBSPRUNE_OUT_DIR");
        if let Some((k, v)) = extra_env {
            cmd.env(k, v);
        }
        let o = cmd.args(["attention-bound", "--config", "cfg.toml"]).args(args).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    let header = |sub: &str| fs::read_to_string(dir.path().join(sub).join("attention-bound.report")).unwrap();

    run(None, &[]);
    let h = header("from_file");
    assert!(h.contains("# seed 3\n") && h.contains("# config trials=4\n") && h.contains("# config epsilon=0.01\n"));

    run(Some(("OBSPRUNE_SEED", "9")), &[]);
    assert!(header("from_file").contains("# seed 9\n"));

    run(Some(("OBSPRUNE_SEED", "9")), &["--seed", "11"]);
    assert!(header("from_file").contains("# seed 11\n"));

    run(Some(("OBSPRUNE_OUT_DIR", "from_env")), &[]);
    assert!(header("from_env").contains("# seed 3\n"));

    run(Some(("OBSPRUNE_OUT_DIR", "from_env")), &["--out-dir", "from_flag"]);
    assert!(header("from_flag").contains("# config trials=4\n"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("cfg.toml"), "trails = 4\n").unwrap();
    let o = obsprune(dir.path(), &["attention-bound", "--config", "cfg.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"));
}

#[test]
fn compare_reports_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = ["compare", "--seeds", "2", "--init-rank", "6", "--target-rank", "2", "--steps", "30", "--train-samples", "64"];
    let first = obsprune(dir.path(), &[&args[..], &["--out-dir", "a"]].concat());
    let second = obsprune(dir.path(), &[&args[..], &["--out-dir", "b"]].concat());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(second.status.code(), Some(0));
    let a = fs::read_to_string(dir.path().join("a/compare.report")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/compare.report")).unwrap();
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));
    assert_eq!(a.lines().filter(|l| l.starts_with("summary,")).count(), 8);
    assert_eq!(a.lines().filter(|l| l.starts_with("seed_result,")).count(), 16);
}

#[test]
fn oracle_check_small_run_passes() {
    let dir = TempDir::new().unwrap();
    let o = obsprune(dir.path(), &["oracle-check", "--trials", "5", "--max-n", "5", "--perturbations", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("oracle-check.report")).unwrap();
    assert!(report.lines().filter(|l| !l.starts_with('#')).all(|l| l.contains("source=oracle")));
}
