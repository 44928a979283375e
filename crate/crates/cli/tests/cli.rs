use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cnl_core::train::CONFIG_KEYS;

fn cnl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnl"))
        .args(args)
        .args(["--log-level", "error"])
        .output()
        .expect("spawn cnl")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, nodes: usize) {
    let o = cnl(&["synth", "--nodes", &nodes.to_string(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_lists_every_config_key_with_its_default() {
    let o = cnl(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let (_, keys) = text.split_once("Configuration keys").expect("config section in help");
    for key in CONFIG_KEYS {
        let line = keys
            .lines()
            .find(|l| l.split_whitespace().next() == Some(key.name))
            .unwrap_or_else(|| panic!("key {} missing from help", key.name));
        assert!(line.contains(&format!("[{}]", key.default)), "{line}");
    }
}

#[test]
fn validate_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 120);
    let o = cnl(&["validate", "--bundle", dir.path().join("train").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("train/meta.json")).unwrap()).unwrap();
    let line = stdout(&o);
    assert!(line.contains("nodes=120"), "{line}");
    assert!(line.contains(&format!("edges={}", meta["num_edges"])), "{line}");
}

#[test]
fn exit_codes_distinguish_usage_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert_eq!(cnl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cnl(&["cv"]).status.code(), Some(1));
    let missing = cnl(&["validate", "--bundle", dir.path().join("nope").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ingest"));

    synth(dir.path(), 80);
    let train = dir.path().join("train");
    let train = train.to_str().unwrap();
    let unknown = cnl(&["cv", "--bundle", train, "--out", out, "--set", "no_such_key=1"]);
    assert_eq!(unknown.status.code(), Some(1));
    let bad_value = cnl(&["cv", "--bundle", train, "--out", out, "--set", "epochs=many"]);
    assert_eq!(bad_value.status.code(), Some(1));
    let blowup = cnl(&["train", "--bundle", train, "--out", out, "--set", "lr=1e300", "--set", "epochs=3"]);
    assert_eq!(blowup.status.code(), Some(3), "{}", String::from_utf8_lossy(&blowup.stderr));
}

#[test]
fn cv_prints_one_line_per_fold_and_reloads_its_config() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 100);
    let train = dir.path().join("train");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# quick run\nepochs = 2\nhidden=8\nfolds=3\n").unwrap();
    let first = cnl(&[
        "cv", "--bundle", train.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--set", "lr=0.01",
        "--seed", "5", "--threads", "1", "--out", a.to_str().unwrap(),
    ]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let folds: Vec<String> = stdout(&first).lines().filter(|l| l.starts_with("fold=")).map(String::from).collect();
    assert_eq!(folds.len(), 3);
    for (k, line) in folds.iter().enumerate() {
        let rest = line.strip_prefix(&format!("fold={} f1=", k + 1)).unwrap();
        assert_eq!(rest.len(), 6, "{line}");
        rest.parse::<f64>().unwrap();
    }

    let effective = a.join("config_effective.json");
    let second = cnl(&[
        "cv", "--bundle", train.to_str().unwrap(), "--config", effective.to_str().unwrap(), "--out",
        b.to_str().unwrap(),
    ]);
    assert!(second.status.success());
    for file in ["metrics.json", "epochs.csv", "config_effective.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let epochs = fs::read_to_string(a.join("epochs.csv")).unwrap();
    assert!(epochs.starts_with("fold,epoch,total,classification,contrastive,orthogonality,mutual_info,val_f1\n"));
}

#[test]
fn sweep_shift_and_scores_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 80);
    let train = dir.path().join("train");
    let test = dir.path().join("test");
    let out = dir.path().join("out");
    let quick = ["--set", "epochs=1", "--set", "hidden=8", "--set", "folds=2"];
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend(["--bundle", train.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        args.extend(quick);
        let o = cnl(&args);
        assert!(o.status.success(), "{:?}: {}", extra, String::from_utf8_lossy(&o.stderr));
        o
    };

    run(&["sweep", "--taus", "0.1,0.2"]);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "tau,f1_mean,f1_std,delta_vs_0.1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].ends_with(",0"), "{}", lines[1]);
    assert!(fs::read_to_string(out.join("sweep.svg")).unwrap().contains("<polyline"));

    let domain = format!("shifted={}", test.display());
    run(&["shift", "--domain", &domain]);
    let shift = fs::read_to_string(out.join("shift.csv")).unwrap();
    let rows: Vec<&str> = shift.lines().collect();
    assert_eq!(rows[0], "domain,precision,recall,f1");
    assert!(rows[1].starts_with("source,") && rows[2].starts_with("shifted,"));
    assert!(out.join("shift.svg").exists());

    run(&["train", "--dump-edge-scores"]);
    let scores = fs::read_to_string(out.join("edge_scores.csv")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(train.join("meta.json")).unwrap()).unwrap();
    assert_eq!(scores.lines().count() as u64, meta["num_edges"].as_u64().unwrap() + 1);
    assert!(scores.starts_with("src,dst,raw_logit,normalized\n"));
    let first = fs::read(out.join("edge_scores.csv")).unwrap();
    let ckpt = out.join("model.ckpt");
    run(&["dump-scores", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(fs::read(out.join("edge_scores.csv")).unwrap(), first);
}

#[test]
fn ablate_reports_the_full_model_and_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 60);
    let out = dir.path().join("out");
    let o = cnl(&[
        "ablate", "--bundle", dir.path().join("train").to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--variants", "cng,eim,group,eim+group", "--set", "epochs=1", "--set", "hidden=8", "--set", "folds=2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "cng", "eim", "group", "eim+group"]);
    let bad = cnl(&["ablate", "--bundle", "x", "--variants", "cng,bogus"]);
    assert_eq!(bad.status.code(), Some(1));
}
