use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn mnist(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist")
        .join(name)
        .display()
        .to_string()
}

fn ipts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipts"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ipts(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small train → attack → evolve → calibrate run shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let (tri, trl) = (
            mnist("train-images-idx3-ubyte.gz"),
            mnist("train-labels-idx1-ubyte.gz"),
        );
        let (tei, tel) = (
            mnist("test-images-idx3-ubyte.gz"),
            mnist("test-labels-idx1-ubyte.gz"),
        );
        ok(&[
            "train",
            "--out",
            p(&root.join("model")),
            "--train-images",
            &tri,
            "--train-labels",
            &trl,
            "--limit",
            "1000",
            "--epochs",
            "2",
        ]);
        ok(&[
            "attack-gen",
            "--out",
            p(&root.join("adv")),
            "--model",
            p(&root.join("model/model.bin")),
            "--images",
            &tei,
            "--labels",
            &tel,
            "--limit",
            "120",
            "--min-count",
            "20",
        ]);
        ok(&[
            "evolve",
            "--out",
            p(&root.join("evolve")),
            "--adv",
            p(&root.join("adv")),
            "--clean-images",
            &tei,
            "--clean-labels",
            &tel,
            "--clean-offset",
            "1000",
            "--pop",
            "6",
            "--generations",
            "2",
        ]);
        ok(&[
            "calibrate",
            "--out",
            p(&root.join("profile")),
            "--evolve-dir",
            p(&root.join("evolve")),
        ]);
        Fixture { _dir: dir, root }
    })
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(ipts(&["bogus"]).status.code(), Some(2));
    assert_eq!(ipts(&["train"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.gz");
    let out = ipts(&[
        "train",
        "--out",
        p(dir.path()),
        "--train-images",
        p(&missing),
        "--train-labels",
        p(&missing),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ipts(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = ipts(&[
        "attack-gen",
        "--out",
        p(dir.path()),
        "--model",
        p(&f.root.join("model/model.bin")),
        "--input-dir",
        p(&f.root.join("adv")),
        "--epsilon",
        "0",
        "--min-count",
        "1",
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = ipts(&["pool", "--out", p(dir.path()), "--profiles"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_have_expected_shape() {
    let f = fixture();
    assert!(json(&f.root.join("model/train_report.json"))["heldout_accuracy"].is_number());
    let prov = json(&f.root.join("adv/provenance.json"));
    let stats = &prov["stats"];
    let fooled = stats["fooled"].as_f64().unwrap();
    let d = stats["destruction_rate"].as_f64().unwrap();
    assert_eq!(
        d,
        if fooled > 0.0 {
            stats["destroyed"].as_f64().unwrap() / fooled
        } else {
            0.0
        }
    );
    let report = json(&f.root.join("evolve/ga_report.json"));
    assert_eq!(report["report"]["generations"].as_array().unwrap().len(), 2);
    let trace = std::fs::read_to_string(f.root.join("evolve/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3);
    let best = std::fs::read_to_string(f.root.join("evolve/best_genome.txt")).unwrap();
    assert_eq!(
        json(&f.root.join("profile/profile.json"))["genome"].as_str(),
        Some(best.trim())
    );
}

#[test]
fn eval_logs_one_row_per_sample() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "eval",
        "--out",
        p(dir.path()),
        "--profile",
        p(&f.root.join("profile/profile.json")),
        "--evolve-dir",
        p(&f.root.join("evolve")),
    ]);
    let metrics = json(&dir.path().join("metrics.json"));
    let n = metrics["adv_count"].as_u64().unwrap() + metrics["clean_count"].as_u64().unwrap();
    let mut rows = csv::Reader::from_path(dir.path().join("verdicts.csv")).unwrap();
    assert_eq!(rows.records().count() as u64, n);
    let m = &metrics["metrics"];
    let sum: u64 = ["tp", "fp", "tn", "fn"]
        .iter()
        .map(|k| m[k].as_u64().unwrap())
        .sum();
    assert_eq!(sum, n);
    assert!(dir.path().join("fitness_trace.csv").exists());
}

#[test]
fn config_echo_replays_and_flags_win() {
    let f = fixture();
    let echo = f.root.join("profile/config.txt");
    let text = std::fs::read_to_string(&echo).unwrap();
    assert!(text.contains("k=2"));
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "calibrate",
        "--config",
        p(&echo),
        "--out",
        p(&dir.path().join("a")),
    ]);
    assert_eq!(
        std::fs::read(dir.path().join("a/profile.json")).unwrap(),
        std::fs::read(f.root.join("profile/profile.json")).unwrap()
    );
    ok(&[
        "calibrate",
        "--config",
        p(&echo),
        "--out",
        p(&dir.path().join("b")),
        "--k",
        "3",
    ]);
    assert_eq!(
        json(&dir.path().join("b/profile.json"))["k"].as_f64(),
        Some(3.0)
    );
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "no_such_key=1\n").unwrap();
    assert_eq!(
        ipts(&["calibrate", "--config", p(&bad)]).status.code(),
        Some(2)
    );
}

#[test]
fn pool_and_detect() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let profile = p(&f.root.join("profile/profile.json")).to_string();
    ok(&[
        "pool",
        "--out",
        p(dir.path()),
        "--profiles",
        &format!("{profile},{profile}"),
    ]);
    let pool = json(&dir.path().join("pool.json"));
    assert_eq!(pool["profiles"].as_array().unwrap().len(), 2);
    let input = f.root.join("evolve/split/adv-test");
    let stdout = ok(&[
        "detect",
        "--out",
        p(&dir.path().join("det")),
        "--pool",
        p(&dir.path().join("pool.json")),
        "--input",
        p(&input),
    ]);
    let files = std::fs::read_dir(&input)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "pgm")
        })
        .count();
    assert_eq!(stdout.lines().count(), files);
    let verdicts = json(&dir.path().join("det/verdicts.json"));
    assert_eq!(verdicts["verdicts"].as_array().unwrap().len(), files);
}
