use std::path::{Path, PathBuf};
use std::process::Command;

use flowgnn_cli::{dispatch, ManifestFile};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowgnn"))
}

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("flowgnn").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn help_and_usage_errors() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in [
        "synth",
        "ingest",
        "build-graphs",
        "pretrain",
        "finetune",
        "evaluate",
        "fewshot",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }

    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    let out = bin().args(["pretrain", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_fields_and_inputs_are_named() {
    let out = bin().arg("fewshot").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("base") && err.contains("tasks") && err.contains("out"),
        "{err}"
    );

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.bin");
    let out = bin()
        .args([
            "pretrain",
            "--graphs",
            p(&missing),
            "--out",
            p(&dir.path().join("b.ckpt")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));

    let out = bin()
        .args(["finetune", "--from", "x.ckpt", "--scratch"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = bin()
        .args(["synth", "--n-flows", "10", "--out", p(&blocker.join("flows.csv"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.json");
    std::fs::write(&cfg, r#"{"n_flows": 500, "seed": 3, "n_classes": 2}"#).unwrap();
    let out = dir.path().join("flows.csv");
    assert_eq!(
        run(&["synth", "--config", p(&cfg), "--n-flows", "300", "--out", p(&out)]),
        0
    );
    let text = String::from_utf8(read(&out)).unwrap();
    assert_eq!(text.lines().count(), 1 + 300);

    let m = ManifestFile::read(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m.runs.len(), 1);
    let run0 = &m.runs[0];
    assert_eq!(run0.subcommand, "synth");
    assert_eq!(run0.config["n_flows"], 300);
    assert_eq!(run0.config["seed"], 3);
    assert_eq!(run0.config["n_classes"], 2);
    assert_eq!(run0.master_seed, Some(3));
    assert_eq!(run0.outputs.len(), 1);
    assert_eq!(run0.outputs[0].sha256.len(), 64);

    std::fs::write(&cfg, r#"{"n_flow": 500}"#).unwrap();
    assert_eq!(run(&["synth", "--config", p(&cfg), "--out", p(&out)]), 1);
}

#[test]
fn manifests_accumulate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(
        run(&[
            "synth",
            "--n-flows",
            "200",
            "--seed",
            "9",
            "--shift",
            "0.3",
            "--out",
            p(&a)
        ]),
        0
    );
    assert_eq!(run(&["synth", "--n-flows", "100", "--out", p(&b)]), 0);
    let manifest = dir.path().join("manifest.json");
    assert_eq!(ManifestFile::read(&manifest).unwrap().runs.len(), 2);

    // replay the first run from its record into another directory
    let first = dir.path().join("first.json");
    let m = ManifestFile::read(&manifest).unwrap();
    std::fs::write(&first, serde_json::to_string(&m.runs[0].config).unwrap()).unwrap();
    let replay = dir.path().join("replay").join("a.csv");
    assert_eq!(run(&["synth", "--config", p(&first), "--out", p(&replay)]), 0);
    assert_eq!(read(&a), read(&replay));
}

struct Corpora {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn corpora() -> Corpora {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let j = |s: &str| root.join(s);
    assert_eq!(
        run(&[
            "synth",
            "--n-flows",
            "1500",
            "--duration-s",
            "40",
            "--seed",
            "1",
            "--out",
            p(&j("a/flows.csv"))
        ]),
        0
    );
    assert_eq!(
        run(&["ingest", "--input", p(&j("a/flows.csv")), "--out", p(&j("a/ingest"))]),
        0
    );
    assert_eq!(
        run(&[
            "build-graphs",
            "--input",
            p(&j("a/flows.csv")),
            "--features",
            p(&j("a/ingest/features.json")),
            "--unlabeled",
            "--out",
            p(&j("a/graphs.bin")),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "synth",
            "--n-flows",
            "1500",
            "--duration-s",
            "40",
            "--seed",
            "2",
            "--shift",
            "0.5",
            "--address-base",
            "1",
            "--out",
            p(&j("b/flows.csv")),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "ingest",
            "--input",
            p(&j("b/flows.csv")),
            "--features",
            p(&j("a/ingest/features.json")),
            "--refit-numeric",
            "--out",
            p(&j("b/ingest")),
        ]),
        0
    );
    assert_eq!(
        run(&[
            "build-graphs",
            "--input",
            p(&j("b/flows.csv")),
            "--features",
            p(&j("b/ingest/features.json")),
            "--labels",
            p(&j("b/ingest/labels.json")),
            "--out",
            p(&j("b/graphs.bin")),
        ]),
        0
    );
    Corpora { _dir: dir, root }
}

const SMALL: [&str; 4] = ["--hidden-dim", "8", "--n-spatial-layers", "1"];

#[test]
fn pipeline_outputs_are_reproducible() {
    let c = corpora();
    let j = |s: &str| c.root.join(s);

    let pre = |out: &Path| {
        let graphs = j("a/graphs.bin");
        let mut args = vec![
            "pretrain",
            "--graphs",
            p(&graphs),
            "--epochs",
            "2",
            "--seed",
            "5",
            "--out",
            p(out),
        ];
        args.extend(SMALL);
        run(&args)
    };
    assert_eq!(pre(&j("p1/base.ckpt")), 0);
    assert_eq!(pre(&j("p2/base.ckpt")), 0);
    assert_eq!(read(&j("p1/base.ckpt")), read(&j("p2/base.ckpt")));
    assert_eq!(read(&j("p1/base.log.csv")), read(&j("p2/base.log.csv")));
    let log = String::from_utf8(read(&j("p1/base.log.csv"))).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,val_loss,val_auc");

    let ft = |out: &Path| {
        run(&[
            "finetune",
            "--graphs",
            p(&j("b/graphs.bin")),
            "--from",
            p(&j("p1/base.ckpt")),
            "--samples",
            "40",
            "--epochs",
            "2",
            "--head-hidden-dims",
            "4",
            "--out",
            p(out),
        ])
    };
    assert_eq!(ft(&j("f1/task.ckpt")), 0);
    assert_eq!(ft(&j("f2/task.ckpt")), 0);
    assert_eq!(read(&j("f1/task.ckpt")), read(&j("f2/task.ckpt")));

    // rerun from the recorded manifest
    assert_eq!(
        run(&[
            "finetune",
            "--config",
            p(&j("f1/manifest.json")),
            "--out",
            p(&j("f3/task.ckpt"))
        ]),
        0
    );
    assert_eq!(read(&j("f1/task.ckpt")), read(&j("f3/task.ckpt")));

    for d in ["e1", "e2"] {
        assert_eq!(
            run(&[
                "evaluate",
                "--model",
                p(&j("f1/task.ckpt")),
                "--graphs",
                p(&j("b/graphs.bin")),
                "--out",
                p(&j(d))
            ]),
            0
        );
    }
    for f in ["metrics.json", "predictions.csv"] {
        assert_eq!(read(&j(&format!("e1/{f}"))), read(&j(&format!("e2/{f}"))));
    }
    let metrics: serde_json::Value = serde_json::from_slice(&read(&j("e1/metrics.json"))).unwrap();
    assert!(metrics["report"]["macro_f1"].as_f64().unwrap() <= 1.0);

    // a pretrain checkpoint is not a classifier
    assert_eq!(
        run(&[
            "evaluate",
            "--model",
            p(&j("p1/base.ckpt")),
            "--graphs",
            p(&j("b/graphs.bin")),
            "--out",
            p(&j("e3"))
        ]),
        1
    );
}

#[test]
fn fewshot_reads_experiment_files_and_ignores_jobs() {
    let c = corpora();
    let j = |s: &str| c.root.join(s);
    let (graphs, base) = (j("a/graphs.bin"), j("base.ckpt"));
    let mut args = vec!["pretrain", "--graphs", p(&graphs), "--epochs", "1", "--out", p(&base)];
    args.extend(SMALL);
    assert_eq!(run(&args), 0);

    let exp = serde_json::json!({
        "format_version": 1,
        "base": j("base.ckpt"),
        "tasks": [{"name": "B", "graphs": j("b/graphs.bin"), "test_fraction": 0.25, "split_seed": 2}],
        "sample_sizes": [15, 30],
        "seeds": [0, 1],
        "epochs": 2,
        "reference_epochs": 2,
        "head_hidden_dims": [4],
        "master_seed": 3
    });
    let exp_path = j("exp.json");
    std::fs::write(&exp_path, serde_json::to_string_pretty(&exp).unwrap()).unwrap();
    assert_eq!(run(&["fewshot", "--config", p(&exp_path), "--out", p(&j("r1"))]), 0);
    assert_eq!(
        run(&["fewshot", "--config", p(&exp_path), "--jobs", "3", "--out", p(&j("r2"))]),
        0
    );
    for f in ["results.json", "table.csv", "curves.csv"] {
        assert_eq!(read(&j(&format!("r1/{f}"))), read(&j(&format!("r2/{f}"))), "{f}");
    }
    let table = String::from_utf8(read(&j("r1/table.csv"))).unwrap();
    assert_eq!(table.lines().next().unwrap(), "metric,sample_size,strategy,B");
    assert_eq!(table.lines().count(), 1 + 3 * 2 * 2);
    let curves = String::from_utf8(read(&j("r1/curves.csv"))).unwrap();
    assert_eq!(curves.lines().count(), 1 + 2 * 2 * 2);

    let bad = j("bad.json");
    std::fs::write(&bad, r#"{"format_version": 99}"#).unwrap();
    assert_eq!(
        run(&[
            "fewshot",
            "--config",
            p(&bad),
            "--base",
            p(&j("base.ckpt")),
            "--task",
            &format!("B={}", p(&j("b/graphs.bin"))),
            "--out",
            p(&j("r3"))
        ]),
        1
    );
}
