use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use querytrack_core::io::dataset::MotSequence;
use querytrack_core::io::mot::{group_gt, write_results};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_querytrack"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn synth(out: &Path, seed: &str) {
    let o = run(&["synth", "--out", s(out), "--seed", seed, "--side", "64", "--frames", "6"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "7");
    synth(b.path(), "7");
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.contains_key(Path::new("config.toml")));
    assert!(ta.keys().any(|p| p.starts_with("train")) && ta.keys().any(|p| p.starts_with("eval")));
    assert_eq!(ta, tb);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "3");
    let gt_root = d.path().join("eval");
    let res = d.path().join("res");
    fs::create_dir_all(&res).unwrap();
    for seq in MotSequence::list(&gt_root).unwrap() {
        write_results(&res.join(format!("{}.txt", seq.name())), &group_gt(&seq.gt)).unwrap();
    }
    let out = d.path().join("metrics");
    let o = run(&["eval", "--gt", s(&gt_root), "--results", s(&res), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let combined = lines.find(|l| l.starts_with("COMBINED")).expect("combined row");
    let f: Vec<&str> = combined.split(',').collect();
    for m in ["HOTA", "IDF1", "MOTA"] {
        assert_eq!(f[col(m)].parse::<f64>().unwrap(), 1.0, "{m}");
    }
    assert!(out.join("config.toml").is_file() && out.join("metrics.txt").is_file());
}

#[test]
fn usage_and_input_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let missing = d.path().join("nope.toml");
    let o = run(&["train", "--config", s(&missing), "--data", s(d.path()), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));

    let bad = d.path().join("bad.toml");
    fs::write(&bad, "preset = \"tiny\"\n[tracker]\nbogus_key = 1\n").unwrap();
    let o = run(&["train", "--config", s(&bad), "--data", s(d.path()), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));

    let o = run(&["train", "--set", "stage1.no_such=3", "--data", s(d.path()), "--out", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such"));

    let o = run(&["eval", "--gt", s(&d.path().join("absent")), "--results", s(d.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_track_eval_overlay() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "5");
    let run_dir = d.path().join("run");
    let common = ["--set", "preset=tiny", "--set", "stage1.iterations=3", "--set", "stage2.iterations=2"];
    let train = d.path().join("train");
    let mut args = vec!["train", "--data", s(&train), "--out", s(&run_dir), "--part", "first"];
    args.extend(common);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck1 = run_dir.join("stage1.ckpt");
    assert!(ck1.is_file());
    let log = fs::read_to_string(run_dir.join("loss_stage1.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert_eq!(log.lines().next().unwrap(), "iteration,stage,loss,cls,l1,giou");

    let ck1_set = format!("stage1_checkpoint={}", s(&ck1));
    let mut args = vec!["train", "--data", s(&train), "--out", s(&run_dir), "--set", "stage=2", "--set", &ck1_set];
    args.extend(common);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck2 = run_dir.join("stage2.ckpt");
    assert_eq!(fs::read_to_string(run_dir.join("loss_stage2.csv")).unwrap().lines().count(), 3);

    let eval_root = d.path().join("eval");
    let res = d.path().join("res");
    let o = run(&["track", "--checkpoint", s(&ck2), "--data", s(&eval_root), "--out", s(&res), "--part", "second", "--set", "tracker.tau_new=0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let snapshot = fs::read_to_string(res.join("config.toml")).unwrap();
    assert!(snapshot.contains("tau_new = 0.3"));
    let seqs = MotSequence::list(&eval_root).unwrap();
    for seq in &seqs {
        assert!(res.join(format!("{}.txt", seq.name())).is_file());
    }

    let o = run(&["eval", "--gt", s(&eval_root), "--results", s(&res), "--part", "second"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("COMBINED") && text.contains("HOTA"));

    let first = &seqs[0];
    let ov = d.path().join("overlay");
    let results = res.join(format!("{}.txt", first.name()));
    let o = run(&["overlay", "--sequence", s(&first.dir), "--results", s(&results), "--out", s(&ov)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ov.join("000006.ppm").is_file());

    let again = d.path().join("res2");
    let o = run(&["track", "--checkpoint", s(&ck2), "--data", s(&eval_root), "--out", s(&again), "--part", "second", "--set", "tracker.tau_new=0.3"]);
    assert!(o.status.success());
    let (a, b) = (tree(&res), tree(&again));
    let strip = |t: BTreeMap<PathBuf, Vec<u8>>| t.into_iter().filter(|(p, _)| p != Path::new("config.toml")).collect::<BTreeMap<_, _>>();
    assert_eq!(strip(a), strip(b));
}

#[test]
fn runtime_failure_exits_2() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "1");
    let o = run(&[
        "train",
        "--data",
        s(&d.path().join("train")),
        "--out",
        s(&d.path().join("run")),
        "--set",
        "preset=tiny",
        "--set",
        "stage1.iterations=2",
        "--set",
        "stage1.lr=1e300",
        "--set",
        "stage1.grad_clip=1e300",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
