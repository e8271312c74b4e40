use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use msnn::data::netpbm::{decode_ppm, read_pgm};
use msnn::data::Manifest;
use msnn::evaluation::REPORT_COLUMNS;
use tempfile::TempDir;

fn msnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = msnn(dir, args);
    assert!(
        out.status.success(),
        "msnn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A small corpus and a model trained on it, shared by every test.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        ok(&dir, &["synth", "--pos", "12", "--neg", "12", "--extent", "64", "--seed", "4", "--out", "data"]);
        ok(&dir, &["train", "data/manifest.csv", "--split", "0.75", "--seed", "1", "--epochs", "4", "--out", "m.msnn"]);
        dir
    })
}

fn scratch() -> (TempDir, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().to_path_buf();
    (d, p)
}

fn abs(name: &str) -> String {
    fixture().join(name).to_string_lossy().into_owned()
}

#[test]
fn train_writes_three_parseable_artifacts() {
    let dir = fixture();
    let ckpt = msnn::network::Checkpoint::load(dir.join("m.msnn")).unwrap();
    assert_eq!(ckpt.input_extent, 64);
    let plan = std::fs::read_to_string(dir.join("m.split.json")).unwrap();
    let plan = msnn::training::SplitPlan::from_json(&plan).unwrap();
    assert_eq!(plan.total, 24);
    let mut rdr = csv::Reader::from_path(dir.join("m.curves.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().next(), Some("iteration"));
    assert!(rdr.records().count() > 0);
}

#[test]
fn out_of_range_split_is_a_usage_error() {
    let out = msnn(fixture(), &["train", "data/manifest.csv", "--split", "1.5"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));
}

#[test]
fn retraining_reproduces_the_checkpoint() {
    let (_d, p) = scratch();
    let args = |out: &'static str| {
        vec![
            "train".to_string(),
            abs("data/manifest.csv"),
            "--seed".into(),
            "1".into(),
            "--epochs".into(),
            "4".into(),
            "--out".into(),
            out.into(),
        ]
    };
    for out in ["a.msnn", "b.msnn"] {
        let a = args(out);
        ok(&p, &a.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let a = std::fs::read(p.join("a.msnn")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.msnn")).unwrap());
    assert_eq!(a, std::fs::read(fixture().join("m.msnn")).unwrap());
}

#[test]
fn eval_reports_both_heads() {
    let (_d, p) = scratch();
    let prefix = p.join("ev").to_string_lossy().into_owned();
    let stdout = ok(
        &p,
        &["eval", &abs("m.msnn"), &abs("data/manifest.csv"), "--plan", &abs("m.split.json"), "--out", &prefix],
    );
    let header: Vec<&str> = stdout.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[1..], REPORT_COLUMNS);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("ev.eval.json")).unwrap()).unwrap();
    let heads = json["heads"].as_array().unwrap();
    assert_eq!(heads.len(), 2);
    assert_eq!(heads[0]["head"], "softmax");
    assert_eq!(heads[1]["head"], "knn");
    assert_eq!(heads[1]["k"], 3);
    let c = &heads[0]["confusion"];
    let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| c[k].as_u64().unwrap()).sum();
    assert_eq!(total, json["samples"].as_u64().unwrap());
    for head in ["softmax", "knn"] {
        let roc = std::fs::read_to_string(p.join(format!("ev.roc-{head}.csv"))).unwrap();
        assert!(roc.starts_with("threshold,fpr,tpr\ninf,0,0\n"));
        assert!(roc.trim_end().ends_with("-inf,1,1"));
    }
}

#[test]
fn eval_without_plan_says_how_to_fix_it() {
    let out = msnn(fixture(), &["eval", "m.msnn", "data/manifest.csv", "--head", "softmax"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pass --plan"));
}

#[test]
fn eval_rejects_a_checkpoint_for_another_extent() {
    let (_d, p) = scratch();
    ok(&p, &["synth", "--pos", "3", "--neg", "3", "--extent", "32", "--out", "small"]);
    ok(&p, &["train", "small/manifest.csv", "--epochs", "1", "--out", "s.msnn"]);
    let out = msnn(
        &p,
        &["eval", "s.msnn", &abs("data/manifest.csv"), "--plan", &abs("m.split.json")],
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn explain_writes_overlay_map_and_caption() {
    let (_d, p) = scratch();
    let prefix = p.join("pos").to_string_lossy().into_owned();
    let stdout = ok(
        &p,
        &["explain", &abs("m.msnn"), &abs("data/syn_pos_0000.pgm"), "--gray", "--out", &prefix],
    );
    let ppm = decode_ppm(&std::fs::read(p.join("pos.overlay.ppm")).unwrap()).unwrap();
    assert_eq!((ppm.width, ppm.height), (64, 64));
    let gray = read_pgm(p.join("pos.map.pgm")).unwrap();
    assert_eq!((gray.width, gray.height), (64, 64));
    let grid: Vec<csv::StringRecord> = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(p.join("pos.map.csv"))
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect();
    assert_eq!(grid.len(), 15);
    assert!(grid.iter().all(|r| r.len() == 15));

    let line = stdout.trim();
    assert!(line.starts_with("Cancer image ("), "{line}");
    let probs: Vec<f64> = line
        .split(['(', ')'])
        .filter_map(|s| s.parse().ok())
        .collect();
    assert_eq!(probs.len(), 2);
    assert!((probs[0] + probs[1] - 1.0).abs() <= 0.011);
    assert_eq!(std::fs::read_to_string(p.join("pos.caption.txt")).unwrap().trim(), line);
}

#[test]
fn zero_mask_is_a_usage_error() {
    let out = msnn(fixture(), &["explain", "m.msnn", "data/syn_pos_0000.pgm", "--mask-size", "0", "--out", "/nonexistent/x"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn elbow_emits_one_row_per_candidate() {
    let (_d, p) = scratch();
    ok(
        &p,
        &["elbow", &abs("m.msnn"), &abs("data/manifest.csv"), "--plan", &abs("m.split.json"), "--k", "1,3,5,7"],
    );
    let mut rdr = csv::Reader::from_path(p.join("elbow.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["k", "sse"]);
    let ks: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(ks, ["1", "3", "5", "7"]);
}

#[test]
fn features_cover_the_requested_subset() {
    let (_d, p) = scratch();
    ok(
        &p,
        &["features", &abs("m.msnn"), &abs("data/manifest.csv"), "--plan", &abs("m.split.json"), "--subset", "test"],
    );
    let mut rdr = csv::Reader::from_path(p.join("features.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 1 + 512 + 1);
    assert_eq!(rdr.records().count(), 6);
}

#[test]
fn filter_and_feature_map_sheets() {
    let (_d, p) = scratch();
    ok(&p, &["filters", &abs("m.msnn"), "--layer", "1", "--out", "f.pgm"]);
    let f = read_pgm(p.join("f.pgm")).unwrap();
    // 8 filters of 6x6 in a 3x3 grid with 1-pixel gaps
    assert_eq!((f.width, f.height), (20, 20));
    ok(&p, &["featmaps", &abs("m.msnn"), &abs("data/syn_neg_0000.pgm"), "--layer", "2", "--out", "g.pgm"]);
    let g = read_pgm(p.join("g.pgm")).unwrap();
    // 16 maps of 32x32 in a 4x4 grid
    assert_eq!((g.width, g.height), (131, 131));
    assert_eq!(code(&msnn(&p, &["filters", &abs("m.msnn"), "--layer", "7"])), 1);
}

#[test]
fn synth_manifest_loads() {
    let (_d, p) = scratch();
    ok(&p, &["synth", "--pos", "10", "--neg", "10", "--extent", "64", "--out", "c"]);
    let m = Manifest::load(p.join("c/manifest.csv")).unwrap();
    assert_eq!(m.class_counts(), (10, 10));
    assert_eq!(m.load_dataset(None).unwrap().extent, 64);
    assert_eq!(code(&msnn(&p, &["synth", "--extent", "50", "--out", "bad"])), 1);
}

#[test]
fn paramtable_lists_table_counts() {
    let stdout = ok(fixture(), &["paramtable", "--extent", "512"]);
    for n in ["296", "1168", "4640", "18496", "73856", "295168", "131584", "1026"] {
        assert!(stdout.lines().any(|l| l.split_whitespace().any(|w| w == n)), "{n} missing");
    }
    assert!(stdout.contains("[512,512,8]"));
}

#[test]
fn every_run_emits_one_record() {
    let (_d, p) = scratch();
    let out = msnn(&p, &["paramtable", "--extent", "64", "--record", "rec.json"]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().filter(|l| l.starts_with('{')).collect();
    assert_eq!(lines.len(), 1);
    let file = std::fs::read_to_string(p.join("rec.json")).unwrap();
    assert_eq!(file.trim(), lines[0]);
    let rec: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(rec["subcommand"], "paramtable");
    assert_eq!(rec["config"]["extent"], 64);

    let out = msnn(&p, &["eval", "missing.msnn", "missing.csv", "--plan", "x.json"]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    let rec: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(rec["status"], "error");
}

#[test]
fn diverging_training_exits_with_numeric_failure() {
    let (_d, p) = scratch();
    let out = msnn(&p, &["train", &abs("data/manifest.csv"), "--lr", "1e30", "--epochs", "2", "--out", "x.msnn"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_count_does_not_change_results() {
    let (_d, p) = scratch();
    for t in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_msnn"))
            .args(["explain", &abs("m.msnn"), &abs("data/syn_pos_0001.pgm"), "--out", t])
            .current_dir(&p)
            .env("MSNN_THREADS", t)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(p.join("1.map.csv")).unwrap(),
        std::fs::read(p.join("3.map.csv")).unwrap()
    );
}
