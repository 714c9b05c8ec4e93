use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use megt::data::{write_bag, write_manifest, ManifestEntry, Split};
use megt::numerics::uniform;
use megt::{Bag, RngState};

const TINY: [&str; 14] = [
    "--d-model",
    "8",
    "--n-heads",
    "2",
    "--k-keep",
    "4",
    "--m-landmarks",
    "4",
    "--k-mffm",
    "1",
    "--l-high",
    "1",
    "--patience",
    "3",
];

fn megt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_megt"))
        .args(args)
        .env_remove("MEGT_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
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

fn synth(dir: &Path, bags: usize, d: usize, seed: u64) -> PathBuf {
    let o = megt(&[
        "synth",
        "--task",
        "witness",
        "--bags",
        &bags.to_string(),
        "--out",
        p(dir),
        "--seed",
        &seed.to_string(),
        "--n-low-min",
        "4",
        "--n-low-max",
        "6",
        "--d",
        &d.to_string(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join("manifest.tsv")
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--manifest", p(manifest), "--out", p(out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    megt(&args)
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic_and_counts_lines() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = synth(a.path(), 20, 8, 7);
    synth(b.path(), 20, 8, 7);
    assert_eq!(dir_snapshot(a.path()), dir_snapshot(b.path()));
    let text = fs::read_to_string(m).unwrap();
    assert_eq!(text.lines().count(), 20 + 1);
    assert!(text.starts_with("# "));
    let splits: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit('\t').next().unwrap()).collect();
    assert_eq!(splits.iter().filter(|s| **s == "train").count(), 14);
    assert_eq!(splits.iter().filter(|s| **s == "val").count(), 2);
    assert_eq!(splits.iter().filter(|s| **s == "test").count(), 4);
}

#[test]
fn synth_rejects_zero_bags_and_bad_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let o = megt(&["synth", "--task", "cross-scale", "--bags", "0", "--out", p(dir.path()), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no bags"));

    let file = dir.path().join("occupied");
    fs::write(&file, "x").unwrap();
    let o = megt(&["synth", "--task", "witness", "--bags", "3", "--out", p(&file.join("sub"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = megt(&["synth", "--task", "parity", "--bags", "3", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_megt"));
        c.args(["synth", "--task", "witness", "--bags", "3", "--out", p(dir), "--n-low-min", "2", "--n-low-max", "2", "--d", "4"]);
        c.env_remove("MEGT_SEED");
        if let Some(v) = env {
            c.env("MEGT_SEED", v);
        }
        assert!(c.output().unwrap().status.success());
        dir_snapshot(dir)
    };
    let with_env = run(a.path(), Some("11"));
    let flagged = {
        megt(&["synth", "--task", "witness", "--bags", "3", "--out", p(b.path()), "--seed", "11", "--n-low-min", "2", "--n-low-max", "2", "--d", "4"]);
        dir_snapshot(b.path())
    };
    assert_eq!(with_env, flagged);
    let c = tempfile::tempdir().unwrap();
    assert_ne!(run(c.path(), None), flagged);
}

#[test]
fn one_epoch_checkpoint_evaluates_reproducibly() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 3);
    let o = train(&m, out.path(), &["--max-epochs", "1", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let val: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(val["n"], 2);

    let history: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 1);
    assert!(history["epochs"][0]["train_loss"].is_f64());

    let ckpt = out.path().join("model.megm");
    let eval = || megt(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&m)]);
    let (a, b) = (eval(), eval());
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let json: serde_json::Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    for key in ["accuracy", "recall_macro", "f1_macro", "auc", "n"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["n"], 4);

    let file = out.path().join("eval.json");
    let o = megt(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&m), "--split", "val", "--out", p(&file)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(&file).unwrap(), o.stdout);
}

#[test]
fn identical_seeds_give_identical_histories() {
    let data = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 4);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for out in [&a, &b] {
        let o = train(&m, out.path(), &["--max-epochs", "2", "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(dir_snapshot(a.path()), dir_snapshot(b.path()));
}

#[test]
fn config_file_and_flags() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 3);
    let cfg = out.path().join("run.cfg");
    fs::write(&cfg, format!("manifest={}\nmax_epochs=1\nlr=0.001\n", p(&m))).unwrap();
    let mut args = vec!["train", "--config", p(&cfg), "--out", p(out.path())];
    args.extend_from_slice(&TINY);
    let o = megt(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    fs::write(&cfg, "learning_rate=0.1\n").unwrap();
    let o = megt(&["train", "--config", p(&cfg), "--manifest", p(&m), "--out", p(out.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));

    let o = megt(&["train", "--manifest", p(&m), "--out", p(out.path()), "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_validation_split_is_a_usage_error() {
    let data = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 5, 4, 1);
    let text = fs::read_to_string(&m).unwrap().replace("\tval", "\ttrain");
    fs::write(&m, text).unwrap();
    let o = train(&m, data.path(), &["--max-epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("val"));
}

#[test]
fn non_finite_loss_exits_three() {
    let data = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 3);
    let o = train(&m, data.path(), &["--max-epochs", "3", "--lr", "1e200"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch"));
}

#[test]
fn width_mismatch_names_both_widths() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m8 = synth(a.path(), 20, 8, 3);
    let m6 = synth(b.path(), 20, 6, 3);
    let o = train(&m8, a.path(), &["--max-epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = megt(&["eval", "--checkpoint", p(&a.path().join("model.megm")), "--manifest", p(&m6)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("width 6") && err.contains("d_in=8"), "{err}");
}

#[test]
fn three_classes_have_null_auc() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for i in 0..12 {
        let rng = RngState::new(i);
        let label = (i % 3) as usize;
        let low = uniform(3, 4, -1.0, 1.0, &mut rng.child("l"));
        let high = uniform(5, 4, -1.0, 1.0, &mut rng.child("h"));
        let name = format!("b{i}.megb");
        write_bag(&Bag::new(format!("b{i}"), label, low, high).unwrap(), dir.path().join(&name)).unwrap();
        let split = match i {
            0..=5 => Split::Train,
            6..=8 => Split::Val,
            _ => Split::Test,
        };
        entries.push(ManifestEntry {
            path: name.into(),
            label,
            split,
            line: 0,
        });
    }
    let m = dir.path().join("m.tsv");
    write_manifest(&m, "three classes", &entries).unwrap();
    let o = train(&m, dir.path(), &["--max-epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = megt(&["eval", "--checkpoint", p(&dir.path().join("model.megm")), "--manifest", p(&m)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"auc\":null"), "{}", stdout(&o));
}

#[test]
fn gradcheck_scopes_and_negative_control() {
    let o = megt(&["gradcheck", "--scope", "gtl", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("scope=gtl"));
    assert!(out.contains(".gtl."));

    let o = megt(&["gradcheck", "--scope", "mffm", "--seed", "2", "--corrupt-rule", "matmul"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("FAIL mffm0."), "{out}");
    assert!(out.contains("analytic=") && out.contains("numeric="));
}

#[test]
fn attention_export_contracts() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 3);
    let o = train(&m, out.path(), &["--max-epochs", "1", "--k-mffm", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv_dir = out.path().join("attn");
    let bag = data.path().join("bag00000.megb");
    let o = megt(&["attend", "--checkpoint", p(&out.path().join("model.megm")), "--bag", p(&bag), "--out", p(&csv_dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let files = dir_snapshot(&csv_dir);
    assert_eq!(files.len(), 4);
    for (name, bytes) in files {
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("token_index,resolution,raw_weight,minmax_normalized_weight"));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        let raw: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
        let norm: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
        assert!((raw.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "{name}");
        assert!(norm.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(norm.contains(&0.0) && norm.contains(&1.0));
        let query = if name.contains("_low_queries_") { "low" } else { "high" };
        assert_eq!(rows[0][1], query);
        assert!(rows[1..].iter().all(|r| r[1] != query));
        if query == "low" {
            assert_eq!(rows.len(), 1 + 4 + 1, "{name}: class token, k kept high tokens, fusion token");
        } else {
            assert!((5..=6).contains(&rows.len()), "{name}");
        }
    }
}

#[test]
fn attention_export_needs_a_dual_model() {
    let data = tempfile::tempdir().unwrap();
    let m = synth(data.path(), 20, 8, 3);
    let o = train(&m, data.path(), &["--max-epochs", "1", "--model", "mean_pool"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = megt(&[
        "attend",
        "--checkpoint",
        p(&data.path().join("model.megm")),
        "--bag",
        p(&data.path().join("bag00001.megb")),
        "--out",
        p(&data.path().join("a")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
