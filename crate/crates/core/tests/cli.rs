use std::path::Path;
use std::process::Command;

use eqplan::cli::{cmd_collect, cmd_eval, cmd_plan, cmd_run_all, cmd_train, RunConfig, DATA_DIR_ENV};
use eqplan::envs::{EnvConfig, GridConfig};
use eqplan::Error;

const BIN: &str = env!("CARGO_BIN_EXE_eqplan");

fn small_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig { data_dir: dir.to_path_buf(), env: EnvConfig::Gridworld(GridConfig::desk_scale()), ..Default::default() };
    c.collect.trajectories = 20;
    c.train.epochs = 3;
    c.train.batch_size = 64;
    c.abstract_mdp.samples = 64;
    c.abstract_mdp.grid_search = true;
    c.abstract_mdp.tau_grid = vec![1.0, 1e-20];
    c.eval.episodes = 5;
    c
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_runs_write_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_run_all(&small_config(a.path())).unwrap();
    cmd_run_all(&small_config(b.path())).unwrap();
    let (fa, fb) = (csv_files(a.path()), csv_files(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["eval_summary.csv", "latents.csv", "tau_search.csv", "training_log.csv"]);
    assert_eq!(fa, fb);
    let tb = |d: &Path| std::fs::read(d.join("dataset.bin")).unwrap();
    assert_eq!(tb(a.path()), tb(b.path()));
}

#[test]
fn zero_epochs_and_zero_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.train.epochs = 0;
    c.abstract_mdp.grid_search = false;
    c.eval.episodes = 0;
    cmd_collect(&c).unwrap();
    let out = cmd_train(&c).unwrap();
    assert!(out.curve.is_empty() && out.steps == 0);
    cmd_plan(&c).unwrap();
    let (ev, row) = cmd_eval(&c).unwrap();
    assert!(ev.episodes.is_empty());
    assert!(row.mean_length.is_nan());
}

#[test]
fn plan_rejects_checkpoint_from_another_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.abstract_mdp.grid_search = false;
    cmd_collect(&c).unwrap();
    cmd_train(&c).unwrap();
    c.collect.seed = 99;
    cmd_collect(&c).unwrap();
    let err = cmd_plan(&c).unwrap_err();
    assert!(matches!(err, Error::Stale(_)), "{err}");
}

#[test]
fn eval_rejects_plan_from_another_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.abstract_mdp.grid_search = false;
    cmd_collect(&c).unwrap();
    cmd_train(&c).unwrap();
    cmd_plan(&c).unwrap();
    c.train.seed = 5;
    cmd_train(&c).unwrap();
    assert!(matches!(cmd_eval(&c).unwrap_err(), Error::Stale(_)));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(BIN).args(args).env_remove(DATA_DIR_ENV).output().unwrap();

    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["collect", "--trajectories", "many"]).status.code(), Some(1));
    assert_eq!(run(&["--config", "/definitely/missing.toml", "collect"]).status.code(), Some(1));

    // missing output directory fails before any rollout
    let missing = dir.path().join("absent");
    let out = run(&["--data-dir", missing.to_str().unwrap(), "collect"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!missing.exists());

    // runtime failure: the dataset to train on does not exist
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&["--data-dir", d, "train"]).status.code(), Some(2));

    // malformed config file is a validation error
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochs = \"ten\"\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "collect"]).status.code(), Some(1));
}

#[test]
fn data_dir_comes_from_env_unless_flag_given() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let cfg = env_dir.path().join("run.toml");
    std::fs::write(&cfg, "[env]\nkind = \"gridworld\"\nencoding = \"symbolic\"\n[collect]\ntrajectories = 3\n").unwrap();
    let out = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "collect"])
        .env(DATA_DIR_ENV, env_dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(env_dir.path().join("dataset.bin").is_file());

    let out = Command::new(BIN)
        .args(["--config", cfg.to_str().unwrap(), "--data-dir", flag_dir.path().to_str().unwrap(), "collect"])
        .env(DATA_DIR_ENV, env_dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(flag_dir.path().join("dataset.bin").is_file());
}

#[test]
fn default_config_parses_back() {
    let out = Command::new(BIN).arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}
