use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocycle-lab"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cocycle-lab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gallery_lists_every_scenario() {
    let o = run(&["gallery"]);
    assert!(o.status.success());
    let names: Vec<String> = stdout(&o).lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert!(names.len() >= 9);
    for n in ["sft-holonomy", "planted-coboundary", "delta-narrow-splitting", "unipotent-criterion", "coprime-combine", "catmap-rigidity", "t4-skew", "linearization-demo", "weak-irreducibility"] {
        assert!(names.iter().any(|x| x == n), "{n}");
    }
    let o = run(&["gallery", "--show", "coprime-combine"]);
    assert!(o.status.success() && stdout(&o).contains("scenario = coprime-combine"));
}

#[test]
fn planted_coboundary_passes_and_writes_outputs() {
    let dir = scratch("planted");
    let o = run(&["--out-dir", dir.to_str().unwrap(), "run", "planted-coboundary"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["planted-coboundary.report.json", "planted-coboundary.timings.json", "planted-coboundary.transfer.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("planted-coboundary.report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "cocycle-lab.report/v1");
    assert_eq!(report["passed"], true);
    let pretty = run(&["report", "--pretty", dir.join("planted-coboundary.report.json").to_str().unwrap()]);
    assert!(pretty.status.success());
    assert!(stdout(&pretty).contains("recovery gl-distance"));
}

#[test]
fn negative_scenario_exits_nonzero_but_writes_report() {
    let dir = scratch("negative");
    let o = run(&["--out-dir", dir.to_str().unwrap(), "run", "unipotent-negative"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("check failed"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("unipotent-negative.report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["results"]["witness"].as_str().unwrap().contains("(1)^inf"));
    assert!(dir.join("unipotent-negative.orbits.csv").exists());
}

#[test]
fn config_file_errors_name_line_and_field() {
    let dir = scratch("config");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "scenario = delta-narrow-splitting\n\n[base]\nshift = golden-mean\n\n[cocycle]\ncenter = [[4, 0, 0],\n          [0, 1, 0]]\n").unwrap();
    let o = run(&["--out-dir", dir.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 7") && err.contains("cocycle.center"), "{err}");

    std::fs::write(&cfg, "scenario = weak-irreducibility\n[maps]\na = [[2, 1], [1, 1]]\ntypo = 3\n").unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert!(stderr(&o).contains("maps.typo"), "{}", stderr(&o));
}

#[test]
fn config_file_runs_and_seed_flag_overrides() {
    let dir = scratch("file");
    let cfg = dir.join("w.cfg");
    std::fs::write(&cfg, "scenario = weak-irreducibility\nname = mine\nseed = 5\n").unwrap();
    let o = run(&["--seed", "77", "--threads", "2", "--out-dir", dir.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("mine.report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"]["seed"], 77);
    assert_eq!(report["scenario"]["kind"], "weak-irreducibility");
}

#[test]
fn unknown_scenario_is_an_error() {
    let o = run(&["run", "no-such-scenario"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown scenario"));
}

#[test]
fn reports_identical_across_thread_counts() {
    let (a, b) = (scratch("t1"), scratch("t4"));
    for (d, t) in [(&a, "1"), (&b, "4")] {
        let o = run(&["--threads", t, "--out-dir", d.to_str().unwrap(), "run", "sft-holonomy"]);
        assert!(o.status.success());
    }
    let name = "sft-holonomy.report.json";
    assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
    let csv = "sft-holonomy.holonomy.csv";
    assert_eq!(std::fs::read(a.join(csv)).unwrap(), std::fs::read(b.join(csv)).unwrap());
}
