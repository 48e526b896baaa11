use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn polymer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polymer"))
        .args(args)
        .current_dir(dir)
        .env_remove("POLYMER_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn passing_run_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = polymer(dir.path(), &["transition", "mass", "--n-max", "40", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(&dir.path().join("o/transition-mass.json"));
    assert_eq!(rep["schema_version"], polymer_cli::report::SCHEMA_VERSION);
    assert_eq!(rep["status"], "pass");
    let rec = &rep["records"][0];
    for key in ["quantity", "params", "mean", "stderr", "n", "seed", "wall_time"] {
        assert!(rec.get(key).is_some(), "record lacks {key}");
    }
    assert!(dir.path().join("o/transition-mass.csv").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS kernel_mass"));
}

#[test]
fn failed_invariant_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = polymer(dir.path(), &["moments", "convolution", "--n-max", "20", "--set", "r_max=2"]);
    assert_eq!(out.status.code(), Some(1));
    let rep = report(&dir.path().join("polymer-out/moments-convolution.json"));
    assert_eq!(rep["status"], "fail");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["constants", "--set", "no_such_key=1"],
        &["constants", "--beta", "abc"],
        &["constants", "--d", "2"],
        &["partition", "no-such-action"],
        &["no-such-command"],
        &["constants", "--config", "missing.cfg"],
        &["she", "integrate", "--laplacian", "hex"],
    ];
    for args in cases {
        let out = polymer(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn bad_config_file_lines_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in [("a.cfg", "n_max 40\n"), ("b.cfg", "bogus = 1\n"), ("c.cfg", "n_max = 40\nn_max = 50\n")] {
        std::fs::write(dir.path().join(name), text).unwrap();
        let out = polymer(dir.path(), &["transition", "mass", "--config", name]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(name), "error names the file: {err}");
    }
}

#[test]
fn cli_overrides_file_overrides_default() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# test\nn_max = 30\nd = 4\nout = from-file\n").unwrap();
    let out = polymer(dir.path(), &["transition", "mass", "--config", "run.cfg", "--d", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = report(&dir.path().join("from-file/transition-mass.json"));
    assert_eq!(rep["config"]["n_max"], "30");
    assert_eq!(rep["config"]["d"], "3");
}

#[test]
fn kernel_cache_flag_and_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["transition", "lclt", "--t", "4", "--set", "y_radius=1", "--n-max", "60", "--no-timing"];
    let mut with_flag = args.to_vec();
    with_flag.extend(["--kernel-cache", "k.bin", "--out", "a"]);
    assert_eq!(polymer(dir.path(), &with_flag).status.code(), Some(0));
    assert!(dir.path().join("k.bin").exists());
    // A second run loads the cached kernel.
    let mut again = args.to_vec();
    again.extend(["--kernel-cache", "k.bin", "--out", "b"]);
    assert_eq!(polymer(dir.path(), &again).status.code(), Some(0));
    let a = std::fs::read(dir.path().join("a/transition-lclt.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/transition-lclt.csv")).unwrap();
    assert_eq!(a, b);

    let cache = dir.path().join("cache");
    let mut env_run = args.to_vec();
    env_run.extend(["--out", "c"]);
    let out = Command::new(env!("CARGO_BIN_EXE_polymer"))
        .args(&env_run)
        .current_dir(dir.path())
        .env("POLYMER_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<_> = std::fs::read_dir(&cache).unwrap().collect();
    assert!(!files.is_empty(), "cache dir populated");
}

#[test]
fn reruns_are_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    for (o, w) in [("r1", "1"), ("r2", "2")] {
        let args = [
            "partition",
            "mean-one",
            "--beta",
            "0.2",
            "--t",
            "1",
            "--n-env",
            "64",
            "--n-paths",
            "8",
            "--no-timing",
            "--plot-data",
            "--workers",
            w,
            "--out",
            o,
        ];
        assert_eq!(polymer(dir.path(), &args).status.code(), Some(0));
    }
    for name in ["partition-mean-one.json", "partition-mean-one.csv"] {
        let a = std::fs::read_to_string(dir.path().join("r1").join(name)).unwrap();
        let b = std::fs::read_to_string(dir.path().join("r2").join(name)).unwrap();
        assert_eq!(a.replace("r1", "r2").replace("\"workers\": \"1\"", "\"workers\": \"2\""), b, "{name}");
    }
}

#[test]
fn schema_command_prints_versioned_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = polymer(dir.path(), &["schema"]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], polymer_cli::report::SCHEMA_VERSION);
}

#[test]
fn she_checkpoint_resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["she", "integrate", "--box", "3", "--dt", "0.03125", "--no-timing"];
    let mut straight = common.to_vec();
    straight.extend(["--t", "0.5", "--out", "s"]);
    assert_eq!(polymer(dir.path(), &straight).status.code(), Some(0));
    for t in ["0.25", "0.5"] {
        let mut part = common.to_vec();
        part.extend(["--t", t, "--set", "checkpoint=ck.bin", "--out", "p"]);
        assert_eq!(polymer(dir.path(), &part).status.code(), Some(0), "t = {t}");
    }
    let a = std::fs::read(dir.path().join("s/she-integrate.csv")).unwrap();
    let b = std::fs::read(dir.path().join("p/she-integrate.csv")).unwrap();
    assert_eq!(a, b);
}
