use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn refsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refsr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn refsr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Tiny manifest so the whole pipeline runs in a few seconds.
fn small_manifest(dir: &Path) -> PathBuf {
    let out = refsr(&["manifest"]);
    let mut m: Value = serde_json::from_str(&stdout(&out)).unwrap();
    m["phantom"]["dims"] = json!([8, 32, 32]);
    m["phantom"]["n_directions"] = json!(6);
    m["cases"] = json!(3);
    m["degrade"]["through_plane_factor"] = json!(2);
    m["degrade"]["in_plane_factor"] = json!(2);
    let t = &mut m["train"];
    t["epochs"] = json!(1);
    t["batch_size"] = json!(4);
    t["max_pairs_per_epoch"] = json!(8);
    t["val_max_pairs"] = json!(4);
    t["generator"]["base_width"] = json!(4);
    t["generator"]["channel_mults"] = json!([1, 2]);
    t["generator"]["attention_at_depth"] = json!([1]);
    t["generator"]["attention_heads"] = json!(2);
    t["discriminator"]["widths"] = json!([4, 8]);
    let path = dir.join("small.json");
    fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    path
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn manifest_applies_overrides() {
    let out = refsr(&["manifest", "--seed", "9", "--cases", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(m["phantom"]["seed"], 9);
    assert_eq!(m["train"]["seed"], 9);
    assert_eq!(m["cases"], 4);
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = refsr(&["run-ablation", "--dry-run", "--output", p(&dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("10 cases") && text.contains("split train"), "{text}");
    assert!(!dir.exists());
}

#[test]
fn phantom_cases_are_reproducible_and_output_is_protected() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = refsr(&["phantom", "--manifest", p(&m), "--output", p(dir)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let cases: Vec<_> = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).collect();
    assert_eq!(cases.len(), 3);
    // manifest.json records the output directory, everything else must match
    let volumes = |d: &Path| tree(d).into_iter().filter(|(f, _)| f != Path::new("manifest.json")).collect::<Vec<_>>();
    assert_eq!(volumes(&a), volumes(&b));

    let again = refsr(&["phantom", "--manifest", p(&m), "--output", p(&a)]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("not empty"), "{}", stderr(&again));
    let forced = refsr(&["phantom", "--manifest", p(&m), "--output", p(&a), "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));
}

#[test]
fn pipeline_degrade_train_infer() {
    let tmp = tempfile::tempdir().unwrap();
    let m = small_manifest(tmp.path());
    let d = |s: &str| tmp.path().join(s);
    let ok = |args: &[&str]| {
        let out = refsr(args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
        stdout(&out)
    };
    ok(&["phantom", "--manifest", p(&m), "--output", p(&d("phantoms"))]);
    ok(&["degrade", "--manifest", p(&m), "--input", p(&d("phantoms")), "--output", p(&d("degraded"))]);
    for case in ["case-00", "case-01", "case-02"] {
        for sub in ["hr", "lr", "bilinear"] {
            assert!(d("degraded").join(case).join(sub).is_dir());
        }
    }
    let plan = ok(&["train", "--manifest", p(&m), "--input", p(&d("degraded")), "--dry-run"]);
    assert!(plan.contains("would train proposed"), "{plan}");
    ok(&["train", "--manifest", p(&m), "--input", p(&d("degraded")), "--output", p(&d("model"))]);
    let ckpt = d("model").join("model.rckp");
    assert!(ckpt.is_file());
    let log = fs::read_to_string(d("model").join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    ok(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&d("degraded").join("case-00")),
        "--output",
        p(&d("sr")),
    ]);
    let rvols = fs::read_dir(d("sr"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "rvol"))
        .count();
    assert_eq!(rvols, 1 + 12);
}

#[test]
fn bad_manifest_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{\"cases\": \"many\"}").unwrap();
    let out = refsr(&["manifest", "--manifest", p(&path)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("bad.json"), "{}", stderr(&out));
}
