use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn freqest(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqest")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_BENCH: [&str; 12] =
    ["--runs", "3", "--particles", "150", "--cet-budget", "200", "--bins", "6", "--strategies", "wes,rts", "--seed", "4"];

#[test]
fn cost_table_prints_every_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = freqest(&["cost", "--K", "1000", "--M", "1", "--N", "100"], dir.path());
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for line in ["sh             400000", "wes            7100000", "non_optimized  100000"] {
        assert!(out.contains(line), "{out}");
    }
    let o = freqest(&["cost", "--K", "1", "--M", "1", "--N", "1"], dir.path());
    assert!(stdout(&o).contains("non_optimized  1\n"));
}

#[test]
fn cost_rejects_non_positive_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&freqest(&["cost", "--K", "0", "--M", "1", "--N", "1"], dir.path())), 2);
    assert_eq!(code(&freqest(&["cost", "--K", "5", "--M", "1"], dir.path())), 2);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&freqest(&["run"], p)), 2);
    assert_eq!(code(&freqest(&["run", "--strategy", "nope"], p)), 2);
    assert_eq!(code(&freqest(&["calibrate", "--kind", "sh", "--grid", ""], p)), 2);
    assert_eq!(code(&freqest(&["calibrate", "--kind", "wes"], p)), 2);
    assert_eq!(code(&freqest(&["bench", "--runs", "1"], p)), 2);
    assert_eq!(code(&freqest(&["frobnicate"], p)), 2);
    fs::write(p.join("empty.toml"), "[calibrate]\nkind = \"sh\"\ngrid = []\n").unwrap();
    assert_eq!(code(&freqest(&["calibrate", "--config", "empty.toml"], p)), 2);
}

#[test]
fn run_writes_trace_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["run", "--strategy", "wes", "--seed", "42", "--particles", "200", "--cet-budget", "300"];
    for out in ["a", "b"] {
        let mut a = args.to_vec();
        a.extend(["--out", out]);
        assert_eq!(code(&freqest(&a, p)), 0);
    }
    let a = fs::read(p.join("a/trace.csv")).unwrap();
    assert_eq!(a, fs::read(p.join("b/trace.csv")).unwrap());
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("step,cet,t_chosen,shots,ones,estimate,std,ess,n_experiments"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(p.join("a/trace.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 42);
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("cfg.toml"),
        "[general]\nseed = 8\ncet_budget = 150.0\n[smc]\nparticles = 120\n[run]\nstrategy = \"sh\"\nomega = 0.5\n",
    )
    .unwrap();
    assert_eq!(code(&freqest(&["run", "--config", "cfg.toml", "--out", "f"], p)), 0);
    assert_eq!(code(&freqest(&["run", "--config", "cfg.toml", "--strategy", "rts", "--out", "g"], p)), 0);
    let f: serde_json::Value = serde_json::from_slice(&fs::read(p.join("f/trace.json")).unwrap()).unwrap();
    let g: serde_json::Value = serde_json::from_slice(&fs::read(p.join("g/trace.json")).unwrap()).unwrap();
    assert_eq!(f["config"]["strategy"]["kind"], "sh");
    assert_eq!(g["config"]["strategy"]["kind"], "rts");
    assert_eq!(f["config"]["particles"], 120);
    assert_eq!(f["omega_true"], 0.5);
}

#[test]
fn bench_outputs_and_overwrite_protection() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut args = vec!["bench", "--out", "o"];
    args.extend(SMALL_BENCH);
    let o = freqest(&args, p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("exponent"));
    for f in ["fits.json", "costs.json", "report.json", "curves/wes.csv", "curves/rts.csv", "traces/wes/0.csv"] {
        assert!(p.join("o").join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(p.join("o/report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["benchmark"]["n_runs"], 3);
    assert_eq!(report["config"]["settings"]["particles"], 150);

    assert_eq!(code(&freqest(&args, p)), 3);
    let first = fs::read(p.join("o/curves/wes.csv")).unwrap();
    args.push("--force");
    assert_eq!(code(&freqest(&args, p)), 0);
    assert_eq!(first, fs::read(p.join("o/curves/wes.csv")).unwrap());
}

#[test]
fn bench_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for (out, w) in [("w1", "1"), ("w3", "3")] {
        let mut args = vec!["bench", "--out", out, "--workers", w];
        args.extend(SMALL_BENCH);
        assert_eq!(code(&freqest(&args, p)), 0);
    }
    for f in ["curves/wes.csv", "curves/rts.csv", "traces/rts/2.csv", "fits.json"] {
        assert_eq!(fs::read(p.join("w1").join(f)).unwrap(), fs::read(p.join("w3").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn calibrate_writes_selection() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = freqest(
        &["calibrate", "--kind", "pgh", "--grid", "0.5,1", "--runs", "2", "--particles", "100", "--cet-budget", "100"],
        p,
    );
    assert_eq!(code(&o), 0);
    let j: serde_json::Value = serde_json::from_slice(&fs::read(p.join("calibration.json")).unwrap()).unwrap();
    let sel = j["result"]["selected"].as_f64().unwrap();
    assert!(sel == 0.5 || sel == 1.0);
}
