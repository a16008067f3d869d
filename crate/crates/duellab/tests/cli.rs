//! End-to-end tests of the `duellab` binary: argument handling, exit
//! codes, file artifacts, and determinism across reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_duellab"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/configs")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

#[test]
fn presets_lists_the_full_catalogue() {
    let out = bin().arg("presets").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 15);
    for needle in [
        "nvldb-ucb-asym",
        "nvldb-ts-csym",
        "nldb-ucb-osym",
        "linear-ucb-asym",
        "linear-ucb-csym-aware",
        "ndb-full-gradient",
    ] {
        assert!(lines.contains(&needle), "missing preset {needle}");
    }
}

#[test]
fn validate_accepts_the_shipped_configs() {
    for name in ["quick.toml", "tabular.toml", "synthetic.toml"] {
        let out = bin().args(["validate", "-c"]).arg(fixture(name)).output().unwrap();
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
        assert!(stdout(&out).starts_with("ok:"), "{name}: {}", stdout(&out));
    }
}

#[test]
fn validate_rejects_broken_configs_with_exit_2() {
    let cases = [
        ("bad/unknown-key.toml", "round"),
        ("bad/bad-preset.toml", "preset"),
        ("bad/bad-env.toml", "task"),
    ];
    for (name, needle) in cases {
        let out = bin().args(["validate", "-c"]).arg(fixture(name)).output().unwrap();
        assert_eq!(code(&out), 2, "{name}");
        let err = stderr(&out);
        assert!(err.contains(needle), "{name}: stderr {err:?}");
    }
    // unreadable path is a config error too
    let out = bin().args(["validate", "-c", "no/such/file.toml"]).output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_2() {
    // clap rejects a run without a config
    let out = bin().arg("run").output().unwrap();
    assert_eq!(code(&out), 2);
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn run_writes_artifacts_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("first");
    let run1 = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .arg("-o")
        .arg(&out1)
        .output()
        .unwrap();
    assert_eq!(code(&run1), 0, "{}", stderr(&run1));
    let text = stdout(&run1);
    assert!(
        text.contains("cosine-mini / linear-ucb-asym: mean cumulative average regret"),
        "stdout: {text}"
    );
    for f in ["runs.csv", "summary.csv", "regret-cosine-mini.svg"] {
        assert!(out1.join(f).is_file(), "missing {f}");
        assert!(text.contains(f), "no 'wrote' line for {f}");
    }
    // timing off: no timing.csv
    assert!(!out1.join("timing.csv").exists());

    // a second run at different parallelism must be byte-identical
    let out2 = dir.path().join("second");
    let run2 = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .arg("-o")
        .arg(&out2)
        .args(["--set", "runner.parallelism=4"])
        .output()
        .unwrap();
    assert_eq!(code(&run2), 0, "{}", stderr(&run2));
    for f in ["runs.csv", "summary.csv"] {
        let a = std::fs::read(out1.join(f)).unwrap();
        let b = std::fs::read(out2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between serial and parallel runs");
    }
}

#[test]
fn set_overrides_reshape_the_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .arg("-o")
        .arg(dir.path())
        .args(["--set", "runner.rounds=10", "--set", "runner.seeds=[5]"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let mut lines = runs.lines();
    assert_eq!(
        lines.next().unwrap(),
        "env,agent,seed,round,r_avg,r_weak,cum_avg,cum_weak,elapsed_ms"
    );
    // 1 env x 2 agents x 1 seed x 10 rounds
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r.starts_with("cosine-mini,") && r.contains(",5,")));
}

#[test]
fn env_var_supplies_the_default_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .args(["--set", "runner.rounds=5", "--set", "runner.seeds=[0]"])
        .env("DUELLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("summary.csv").is_file());
}

#[test]
fn divergent_cells_abort_with_exit_3_but_artifacts_survive() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .arg("-o")
        .arg(dir.path())
        // blows up the neural agent's training; the linear agent refits
        // exactly and never reads the step size
        .args(["--set", "agent.gamma=1e200", "--set", "runner.rounds=12"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("abort:"), "stderr: {err}");
    assert!(err.contains("nvldb-ucb-asym"), "stderr: {err}");
    // the healthy agent's curve still made it out
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("cosine-mini,linear-ucb-asym,")));
    assert!(!summary.contains("nvldb"));
}

#[test]
fn plot_renders_from_an_existing_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = bin()
        .args(["run", "-c"])
        .arg(fixture("quick.toml"))
        .arg("-o")
        .arg(dir.path())
        .args(["--set", "runner.rounds=8"])
        .output()
        .unwrap();
    assert_eq!(code(&run), 0);
    let plots = dir.path().join("replot");
    let out = bin()
        .args(["plot", "-i"])
        .arg(dir.path().join("summary.csv"))
        .arg("-o")
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = plots.join("regret-cosine-mini.svg");
    assert!(svg.is_file());
    let body = std::fs::read_to_string(svg).unwrap();
    assert!(body.starts_with("<svg"));
    assert!(body.contains("linear-ucb-asym"));

    // malformed input is a config error
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "wrong,header\n1,2\n").unwrap();
    let out = bin()
        .args(["plot", "-i"])
        .arg(&bad)
        .arg("-o")
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
