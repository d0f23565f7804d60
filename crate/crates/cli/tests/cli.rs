//! End-to-end runs of the `lwlab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lorentz_wente::quantization::{read_neck_csv, BubbleTree, NeckReport};
use lorentz_wente::wente::WenteRow;
use lwlab::experiments::{PartitionRow, PohozaevRow};
use lwlab::summary::{BaselineRecord, SummaryRow};
use lwlab::{table, EXIT_ASSERTION, EXIT_CONFIG, EXIT_OK, EXIT_REGRESSION};

fn lwlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwlab"))
        .args(args)
        .current_dir(dir)
        .env("LWLAB_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> u8 {
    o.status.code().expect("exit code") as u8
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn empty_ladder_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"eps": []}"#);
    let o = lwlab(&["wente-sweep", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);
    let line: serde_json::Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_grid_and_worker_count_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_theta": 48}"#);
    assert_eq!(code(&lwlab(&["pohozaev", "--config", &cfg], dir.path())), EXIT_CONFIG);
    let o = Command::new(env!("CARGO_BIN_EXE_lwlab"))
        .args(["pohozaev"])
        .current_dir(dir.path())
        .env("LWLAB_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn one_epsilon_one_seed_gives_one_wente_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"experiment": "wente-sweep", "eps": [0.125], "seeds": [3]}"#);
    let o = lwlab(&["wente-sweep", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<WenteRow> = table::load(&dir.path().join("out/wente-sweep.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].lemma.as_str(), rows[0].epsilon, rows[0].seed), ("l4", 0.125, 3));
    let text = fs::read_to_string(dir.path().join("out/wente-sweep.csv")).unwrap();
    assert!(text.starts_with("# experiment=wente-sweep rng=ChaCha8Rng"));
}

#[test]
fn bubble_demo_writes_trees_and_vanishing_necks() {
    let dir = tempfile::tempdir().unwrap();
    let o = lwlab(&["bubble-demo", "--out", "out"], dir.path());
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stdout));
    let out = dir.path().join("out");
    let tree = BubbleTree::from_json(&fs::read_to_string(out.join("tree_k12.json")).unwrap()).unwrap();
    assert_eq!((tree.k, tree.depth()), (12, 1));
    let text = fs::read_to_string(out.join("bubble-demo.csv")).unwrap();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let necks: Vec<NeckReport> = read_neck_csv(body.as_bytes()).unwrap();
    let last: Vec<&NeckReport> = necks.iter().filter(|n| n.k == 12).collect();
    assert_eq!(last.len(), 3);
    assert!(last.iter().all(|n| !n.empty && n.neck_angular <= 1e-2));
}

#[test]
fn baselines_pass_warn_and_regress() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&lwlab(&["pohozaev", "--out", "out"], d)), EXIT_OK);

    let o = lwlab(&["report", "--out", "out", "--freeze", "base.csv"], d);
    assert_eq!(code(&o), EXIT_OK);
    let o = lwlab(&["pohozaev", "--out", "out", "--baseline", "base.csv"], d);
    assert_eq!(code(&o), EXIT_OK);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("REGRESSION"));

    let mut base: Vec<BaselineRecord> = table::load(&d.join("base.csv")).unwrap();
    let dropped = base.pop().unwrap();
    table::save(&d.join("partial.csv"), "baseline", &base).unwrap();
    let o = lwlab(&["pohozaev", "--out", "out", "--baseline", "partial.csv"], d);
    assert_eq!(code(&o), EXIT_OK);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&format!("WARNING no baseline for pohozaev {}", dropped.metric)), "{stdout}");

    base.push(BaselineRecord { value: dropped.value + 1.0, tolerance: 1e-3, ..dropped.clone() });
    table::save(&d.join("drift.csv"), "baseline", &base).unwrap();
    let o = lwlab(&["report", "--out", "out", "--baseline", "drift.csv"], d);
    assert_eq!(code(&o), EXIT_REGRESSION);
    assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("REGRESSION pohozaev {}", dropped.metric)));

    base.last_mut().unwrap().tolerance = 0.0;
    table::save(&d.join("bad.csv"), "baseline", &base).unwrap();
    assert_eq!(code(&lwlab(&["report", "--out", "out", "--baseline", "bad.csv"], d)), EXIT_CONFIG);
}

#[test]
fn failed_assertions_use_their_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"per_octave": 8}"#);
    let o = lwlab(&["pohozaev", "--config", &cfg, "--out", "out"], dir.path());
    assert_eq!(code(&o), EXIT_ASSERTION);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL pohozaev max_bubble_residual"));
    let rows: Vec<SummaryRow> = table::load(&dir.path().join("out/summary.csv")).unwrap();
    assert!(rows.iter().any(|r| r.metric == "max_bubble_residual" && !r.pass));
}

#[test]
fn reruns_are_byte_identical_and_csvs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        for exp in ["partition-fuzz", "pohozaev"] {
            assert_eq!(code(&lwlab(&[exp, "--out", out, "--seeds", "4"], d)), EXIT_OK);
        }
    }
    for f in ["partition-fuzz.csv", "pohozaev.csv", "summary.csv"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let parts: Vec<PartitionRow> = table::load(&d.join("a/partition-fuzz.csv")).unwrap();
    assert_eq!(parts.iter().map(|r| r.seed).collect::<Vec<_>>(), [0, 1, 2, 3]);
    let poh: Vec<PohozaevRow> = table::load(&d.join("a/pohozaev.csv")).unwrap();
    assert!(poh.iter().any(|r| r.case == "angular-control"));
    let summary: Vec<SummaryRow> = table::load(&d.join("a/summary.csv")).unwrap();
    let exps: std::collections::BTreeSet<&str> = summary.iter().map(|r| r.experiment.as_str()).collect();
    assert_eq!(exps.into_iter().collect::<Vec<_>>(), ["partition-fuzz", "pohozaev"]);
}
