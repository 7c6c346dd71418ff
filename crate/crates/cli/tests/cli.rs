use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gmkit::losses::random_thetas;
use gmkit::rng::derive_seed;

fn gmkit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("GMKIT_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

/// Rows without the trailing wall-time column.
fn stable(csv: &str) -> Vec<String> {
    csv.lines().map(|l| l[..l.rfind(',').unwrap()].to_string()).collect()
}

const JUMP: &str = "kind = \"jump_masked\"\nseed = 5\n[train]\nn_samples = 4000\n[sim]\nn_trajectories = 4000\n";

#[test]
fn verify_passes_and_writes_records() {
    let d = tempfile::tempdir().unwrap();
    let o = gmkit(&["verify", "bregman", "--out", "r", "--quiet"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let csv = read(d.path().join("r/verify_bregman.csv"));
    assert!(csv.starts_with("experiment,metric,value,std_error,tolerance,pass,wall_time_s\n"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
    let summary: serde_json::Value = serde_json::from_str(&read(d.path().join("r/verify_bregman.json"))).unwrap();
    assert_eq!(summary["pass"], true);
}

#[test]
fn unknown_suite_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = gmkit(&["verify", "nonsense"], d.path());
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    for s in ["bregman", "reweight", "prop1", "prop2", "editflows", "kfe", "all"] {
        assert!(err.contains(s), "{err}");
    }
}

#[test]
fn perturbed_rates_fail_the_kfe_suite() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "p.toml", "seed = 1\n[verify]\nperturb_rate = 1.5\n");
    let o = gmkit(&["verify", "kfe", "--config", &cfg, "--out", "r"], d.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL kfe/masked"));
}

#[test]
fn same_seed_gives_identical_records() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&gmkit(&["verify", "prop2", "--seed", "9", "--out", out, "--jobs", "1"], d.path())), 0);
    }
    let (a, b) = (read(d.path().join("a/verify_prop2.csv")), read(d.path().join("b/verify_prop2.csv")));
    assert_eq!(stable(&a), stable(&b));
    assert_eq!(read(d.path().join("a/verify_prop2.json")), read(d.path().join("b/verify_prop2.json")));
}

#[test]
fn env_var_overrides_out() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gmkit"))
        .args(["verify", "prop1", "--out", "flag"])
        .current_dir(d.path())
        .env("GMKIT_OUT", "env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("env/verify_prop1.csv").exists());
    assert!(!d.path().join("flag").exists());
}

#[test]
fn config_problems_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&gmkit(&["train"], d.path())), 2);
    let bad = write(d.path(), "bad.toml", "kind = \"jump_masked\"\n");
    assert_eq!(code(&gmkit(&["train", "--config", &bad], d.path())), 2);
    let typo = write(d.path(), "typo.toml", "seed = 1\n[train]\nstepz = 3\n");
    assert_eq!(code(&gmkit(&["verify", "kfe", "--config", &typo], d.path())), 2);
    assert_eq!(code(&gmkit(&["verify", "kfe", "--config", "missing.toml"], d.path())), 2);
}

#[test]
fn jump_training_decreases_loss_and_simulates() {
    let d = tempfile::tempdir().unwrap();
    let text = format!("{}[model]\ndegree = 1\n", JUMP.replace("[train]\n", "[train]\nsteps = 80\n"));
    let cfg = write(d.path(), "j.toml", &text);
    let o = gmkit(&["train", "--config", &cfg, "--out", "run"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read(d.path().join("run/trace.csv"));
    let losses: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 81);
    assert!(losses[80] < losses[0]);
    let metrics: serde_json::Value = serde_json::from_str(&read(d.path().join("run/metrics.json"))).unwrap();
    assert_eq!(metrics["step"], 80);

    let o = gmkit(&["simulate", "--config", &cfg, "--out", "run"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&read(d.path().join("run/distance.json"))).unwrap();
    assert!(rep["tv"].as_f64().unwrap() < 0.1, "{rep}");
    let counts = read(d.path().join("run/counts.csv"));
    let total: usize = counts.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 4000);
}

#[test]
fn zero_steps_keep_the_initialization() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "j.toml", &JUMP.replace("[train]\n", "[train]\nsteps = 0\n"));
    assert_eq!(code(&gmkit(&["train", "--config", &cfg, "--out", "z"], d.path())), 0);
    let text = read(d.path().join("z/theta.txt"));
    let values: Vec<f64> = text.split_once("\n\n").unwrap().1.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(values, random_thetas(6, 1, 1.0, derive_seed(5, 10))[0]);
    assert!(text.contains("\nstep 0\n"));
}

#[test]
fn resume_continues_from_the_recorded_step() {
    let d = tempfile::tempdir().unwrap();
    let cfg = |steps: usize| write(d.path(), &format!("s{steps}.toml"), &JUMP.replace("[train]\n", &format!("[train]\nsteps = {steps}\ndecay = 0.99\n")));
    let (c10, c20) = (cfg(10), cfg(20));
    assert_eq!(code(&gmkit(&["train", "--config", &c20, "--out", "full"], d.path())), 0);
    assert_eq!(code(&gmkit(&["train", "--config", &c10, "--out", "half"], d.path())), 0);
    let o = gmkit(&["train", "--config", &c10, "--out", "rest", "--resume", "half/theta.txt"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(d.path().join("rest/theta.txt")), read(d.path().join("full/theta.txt")));
    let rest = read(d.path().join("rest/trace.csv"));
    assert!(rest.lines().nth(1).unwrap().starts_with("10,"));
    let full = read(d.path().join("full/trace.csv"));
    assert_eq!(rest.lines().last(), full.lines().last());
}

#[test]
fn zero_rate_model_stays_at_the_initial_distribution() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "z.toml", &format!("{JUMP}[model]\nlink = \"identity\"\n"));
    let zeros = "gmkit-theta 1\nkind jump_masked\nstep 0\nn_params 6\n\n".to_string() + &"0e0\n".repeat(6);
    let model = write(d.path(), "zero.txt", &zeros);
    let o = gmkit(&["simulate", "--config", &cfg, "--model", &model, "--out", "s"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(d.path().join("s/counts.csv")), "state,count\n0,4000\n1,0\n2,0\n");
}

#[test]
fn bad_model_files_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(d.path(), "j.toml", JUMP);
    assert_eq!(code(&gmkit(&["simulate", "--config", &cfg, "--model", "nope.txt"], d.path())), 2);
    let junk = write(d.path(), "junk.txt", "not a model\n");
    assert_eq!(code(&gmkit(&["simulate", "--config", &cfg, "--model", &junk], d.path())), 2);
    let short = write(d.path(), "short.txt", "gmkit-theta 1\nkind jump_masked\nstep 0\nn_params 2\n\n1e0\n2e0\n");
    assert_eq!(code(&gmkit(&["simulate", "--config", &cfg, "--model", &short], d.path())), 2);
}

#[test]
fn flow_training_and_simulation() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write(
        d.path(),
        "f.toml",
        "kind = \"flow_x1\"\nseed = 3\n[model]\nt_nodes = 6\nx_nodes = 17\n[train]\nn_samples = 50000\nsteps = 200\n[sim]\nn_trajectories = 2000\ndt = 0.01\n",
    );
    let o = gmkit(&["train", "--config", &cfg, "--out", "f"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read(d.path().join("f/trace.csv"));
    let losses: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    let o = gmkit(&["simulate", "--config", &cfg, "--out", "f"], d.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(d.path().join("f/samples.csv")).lines().count(), 2001);
    let rep: serde_json::Value = serde_json::from_str(&read(d.path().join("f/distance.json"))).unwrap();
    assert!(rep["mean_delta"][0].as_f64().unwrap().abs() < 0.2, "{rep}");
}

#[test]
fn report_aggregates_and_flags_failures() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("empty")).unwrap();
    assert_eq!(code(&gmkit(&["report", "empty"], d.path())), 2);

    for s in ["prop2", "reweight", "kfe"] {
        assert_eq!(code(&gmkit(&["verify", s, "--out", "ok", "--quiet"], d.path())), 0);
    }
    assert_eq!(code(&gmkit(&["report", "ok"], d.path())), 0);
    let md = read(d.path().join("ok/report.md"));
    for needle in ["| prop2 |", "gap_spread", "identity_residual_t", "max_residual"] {
        assert!(md.contains(needle), "{needle}");
    }
    assert!(!md.contains("FAIL"));
    assert!(read(d.path().join("ok/tidy.csv")).starts_with("experiment,t,metric,value\n"));

    let cfg = write(d.path(), "p.toml", "seed = 1\n[verify]\nperturb_rate = 2.0\n");
    assert_eq!(code(&gmkit(&["verify", "kfe", "--config", &cfg, "--out", "ok"], d.path())), 1);
    assert_eq!(code(&gmkit(&["verify", "kfe", "--config", &cfg, "--out", "mixed"], d.path())), 1);
    assert_eq!(code(&gmkit(&["verify", "prop1", "--out", "mixed"], d.path())), 0);
    assert_eq!(code(&gmkit(&["report", "mixed", "--out", "rep"], d.path())), 1);
    assert!(read(d.path().join("rep/report.md")).contains("**FAIL**"));
}
