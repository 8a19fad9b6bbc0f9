use std::path::Path;
use std::process::{Command, Output};

use homdp_core::io::{model_to_json, ClassesFile};
use homdp_core::{EmissionTable, HomdpModel, RewardTable, TransitionTable};

fn homdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homdp")).args(args).output().expect("spawn homdp")
}

fn model() -> HomdpModel {
    HomdpModel::new(
        2,
        vec![0.5, 0.5],
        TransitionTable::from_nested(&[
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        ])
        .unwrap(),
        EmissionTable::from_nested(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap(),
        RewardTable::from_nested(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
    )
    .unwrap()
}

fn write_model(dir: &Path) -> String {
    let p = dir.join("m.json");
    std::fs::write(&p, model_to_json(&model())).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn strip_wallclock(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|c| *c == "wallclock_ms");
    let mut out = header.join(",");
    for l in lines {
        let mut f: Vec<&str> = l.split(',').collect();
        if let Some(c) = col {
            f[c] = "";
        }
        out.push('\n');
        out.push_str(&f.join(","));
    }
    out
}

#[test]
fn plan_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let pol = dir.path().join("p.json").display().to_string();
    let o = homdp(&["plan", "--model", &m, "--out", &pol]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let planned: f64 = stdout(&o).parse().unwrap();
    let o = homdp(&["eval-policy", "--model", &m, "--policy", &pol]);
    assert!(o.status.success());
    let evaluated: f64 = stdout(&o).parse().unwrap();
    assert!((planned - evaluated).abs() < 1e-12);
}

#[test]
fn reward_override_changes_plan() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let r = dir.path().join("r.json");
    std::fs::write(&r, r#"{"reward": [[0.5, 0.5], [0.5, 0.5]]}"#).unwrap();
    let pol = dir.path().join("p.json").display().to_string();
    let o = homdp(&["plan", "--model", &m, "--reward-override", r.to_str().unwrap(), "--out", &pol]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).parse().unwrap();
    assert!((v - 1.0).abs() < 1e-12);

    std::fs::write(&r, r#"{"reward": [[0.5, 0.5]]}"#).unwrap();
    let o = homdp(&["plan", "--model", &m, "--reward-override", r.to_str().unwrap(), "--out", &pol]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let text = model_to_json(&model()).replace("0.9", "0.95");
    std::fs::write(&p, text).unwrap();
    let o = homdp(&["plan", "--model", p.to_str().unwrap(), "--out", "/dev/null"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sums to"));
}

#[test]
fn budget_refusal_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let o = homdp(&["plan", "--model", &m, "--out", "/dev/null", "--budget", "3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn run_hopb_writes_episode_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let out = dir.path().join("run.csv");
    let args = ["run-hopb", "--model", &m, "--K", "30", "--delta", "0.1", "--seed", "7", "--out", out.to_str().unwrap()];
    assert!(homdp(&args).status.success());
    let first = std::fs::read_to_string(&out).unwrap();
    let header = first.lines().next().unwrap();
    assert!(header.starts_with(
        "k,value_opt,value_hat,optimistic_value,regret_step,regret_cum,max_bonus_x,max_bonus_xa,wallclock_ms"
    ));
    assert_eq!(first.lines().count(), 31);
    assert!(homdp(&args).status.success());
    let second = std::fs::read_to_string(&out).unwrap();
    assert_eq!(strip_wallclock(&first), strip_wallclock(&second));
}

#[test]
fn run_hopb_mle_warns_when_unrealizable() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let cls = dir.path().join("o.json");
    let wrong = EmissionTable::from_nested(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
    std::fs::write(&cls, serde_json::to_string(&ClassesFile::from_tables(&[], &[wrong])).unwrap()).unwrap();
    let out = dir.path().join("run.csv");
    let o = homdp(&[
        "run-hopb", "--model", &m, "--K", "5", "--delta", "0.1", "--seed", "1", "--out", out.to_str().unwrap(),
        "--emission-class", cls.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn run_hopv_writes_epoch_csv() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_model(dir.path());
    let truth = model();
    let cls = dir.path().join("c.json");
    let t_alt = TransitionTable::uniform(2, 2);
    let o_alt = EmissionTable::uniform(2, 2);
    let file = ClassesFile::from_tables(&[truth.trans.clone(), t_alt], &[o_alt, truth.emit.clone()]);
    std::fs::write(&cls, serde_json::to_string(&file).unwrap()).unwrap();
    let out = dir.path().join("run.csv");
    let o = homdp(&[
        "run-hopv", "--model", &m, "--classes", cls.to_str().unwrap(), "--K", "20", "--delta", "0.1", "--seed",
        "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("epoch,value_opt,value_hat,optimistic_value,surviving_T,surviving_O,regret_cum"));
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn make_hard_writes_model_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inst.json");
    let o = homdp(&["make-hard", "--X", "7", "--Y", "6", "--eps", "0.2", "--seed", "1", "--out", out.to_str().unwrap(), "--packing", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("inst.sidecar.json")).unwrap()).unwrap();
    assert_eq!(side["spec"]["u"].as_array().unwrap().len(), 4 * 4 / 4);
    assert!(side["packing"]["members"].as_array().unwrap().len() >= 2);

    let pol = dir.path().join("p.json").display().to_string();
    let o = homdp(&["plan", "--model", out.to_str().unwrap(), "--out", &pol]);
    let v: f64 = stdout(&o).parse().unwrap();
    assert!((v - 0.6).abs() < 1e-10);
}

#[test]
fn make_hard_rejects_bad_eps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("inst.json");
    let o = homdp(&["make-hard", "--X", "7", "--Y", "6", "--eps", "0.7", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path());
    let cfg = dir.path().join("sweep.json");
    let run = |out: &str| {
        let text = format!(
            r#"{{"models": [{{"file": "m.json"}}, {{"hard": {{"X": 3, "Y": 4, "eps": 0.2, "seed": 1}}}}],
                "algorithms": [{{"name": "hopb"}}, {{"name": "random"}}, {{"name": "optimal"}}],
                "K": 20, "delta": 0.1, "seeds": [1, 2], "output": "{out}", "pac_eps": 0.1}}"#
        );
        std::fs::write(&cfg, text).unwrap();
        let o = homdp(&["sweep", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let a = std::fs::read_to_string(dir.path().join(out).join("episodes.csv")).unwrap();
        let s = std::fs::read_to_string(dir.path().join(out).join("summary.csv")).unwrap();
        (strip_wallclock(&a), s)
    };
    let (a1, s1) = run("out1");
    let (a2, s2) = run("out2");
    assert_eq!(a1, a2);
    assert_eq!(s1, s2);
    assert_eq!(s1.lines().count(), 1 + 2 * 3 * 2);
    assert_eq!(std::fs::read_dir(dir.path().join("out1/runs")).unwrap().count(), 12);
}

#[test]
fn sweep_missing_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    std::fs::write(
        &cfg,
        r#"{"models": [{"file": "nope.json"}], "algorithms": [{"name": "hopb"}], "K": 5, "delta": 0.1, "seeds": [1], "output": "o"}"#,
    )
    .unwrap();
    assert_eq!(homdp(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}
