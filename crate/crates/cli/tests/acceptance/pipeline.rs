//! The command-line pipeline end to end, and reruns from its manifests.

use std::path::{Path, PathBuf};
use std::process::Command;

use flowgnn_cli::{ManifestFile, RunManifest, MANIFEST_FILE};

use crate::Outcome;

const SMOKE_EPOCHS: usize = 3;

/// One recorded invocation: the subcommand and the directory holding its
/// manifest, relative to the work root.
pub struct Step {
    name: &'static str,
    dir: PathBuf,
}

pub struct Smoke {
    steps: Vec<Step>,
}

fn flowgnn(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_flowgnn"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`flowgnn {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn last_run(dir: &Path, name: &str) -> Result<RunManifest, String> {
    let m = ManifestFile::read(&dir.join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    m.last_run(name)
        .cloned()
        .ok_or_else(|| format!("no {name} run in {}", dir.display()))
}

fn run_pipeline(root: &Path, steps: &mut Vec<Step>) -> Result<String, String> {
    let j = |p: &str| root.join(p);
    let mut step = |name: &'static str, dir: &str, args: &[&str]| -> Result<(), String> {
        let mut full = vec![name];
        full.extend_from_slice(args);
        flowgnn(&full)?;
        steps.push(Step {
            name,
            dir: PathBuf::from(dir),
        });
        Ok(())
    };

    let (a, a_ingest, a_graphs) = (j("a/flows.csv"), j("a/ingest"), j("a/graphs.bin"));
    let features = a_ingest.join("features.json");
    step(
        "synth",
        "a",
        &["--n-flows", "3000", "--duration-s", "60", "--seed", "1", "--out", s(&a)],
    )?;
    step("ingest", "a/ingest", &["--input", s(&a), "--out", s(&a_ingest)])?;
    step(
        "build-graphs",
        "a",
        &[
            "--input",
            s(&a),
            "--features",
            s(&features),
            "--unlabeled",
            "--out",
            s(&a_graphs),
        ],
    )?;
    let base = j("base/base.ckpt");
    step(
        "pretrain",
        "base",
        &[
            "--graphs",
            s(&a_graphs),
            "--epochs",
            "2",
            "--seed",
            "2",
            "--hidden-dim",
            "8",
            "--n-spatial-layers",
            "1",
            "--out",
            s(&base),
        ],
    )?;

    let (b, b_ingest, b_graphs) = (j("b/flows.csv"), j("b/ingest"), j("b/graphs.bin"));
    step(
        "synth",
        "b",
        &[
            "--n-flows",
            "3000",
            "--duration-s",
            "60",
            "--seed",
            "3",
            "--shift",
            "0.5",
            "--address-base",
            "1",
            "--out",
            s(&b),
        ],
    )?;
    step(
        "ingest",
        "b/ingest",
        &[
            "--input",
            s(&b),
            "--features",
            s(&features),
            "--refit-numeric",
            "--out",
            s(&b_ingest),
        ],
    )?;
    step(
        "build-graphs",
        "b",
        &[
            "--input",
            s(&b),
            "--features",
            s(&b_ingest.join("features.json")),
            "--labels",
            s(&b_ingest.join("labels.json")),
            "--out",
            s(&b_graphs),
        ],
    )?;

    let exp = serde_json::json!({
        "format_version": 1,
        "base": base,
        "tasks": [{"name": "B", "graphs": b_graphs}],
        "sample_sizes": [10, 20],
        "seeds": [0, 1],
        "epochs": SMOKE_EPOCHS,
        "reference_epochs": SMOKE_EPOCHS,
        "head_hidden_dims": [8],
        "master_seed": 5
    });
    let exp_path = j("exp.json");
    std::fs::write(&exp_path, serde_json::to_string_pretty(&exp).unwrap()).map_err(|e| e.to_string())?;
    let results = j("fewshot");
    step("fewshot", "fewshot", &["--config", s(&exp_path), "--out", s(&results)])?;

    let task = j("task/task.ckpt");
    step(
        "finetune",
        "task",
        &[
            "--graphs",
            s(&b_graphs),
            "--from",
            s(&base),
            "--samples",
            "30",
            "--epochs",
            "2",
            "--out",
            s(&task),
        ],
    )?;
    step(
        "evaluate",
        "eval",
        &["--model", s(&task), "--graphs", s(&b_graphs), "--out", s(&j("eval"))],
    )?;

    let table = std::fs::read_to_string(results.join("table.csv")).map_err(|e| e.to_string())?;
    let curves = std::fs::read_to_string(results.join("curves.csv")).map_err(|e| e.to_string())?;
    let table_rows = 1 + 3 * 2 * 2;
    let curve_rows = 1 + 2 * 2 * SMOKE_EPOCHS;
    let table_ok = table.lines().next() == Some("metric,sample_size,strategy,B") && table.lines().count() == table_rows;
    let curves_ok =
        curves.lines().next() == Some("task,strategy,curve,epoch,value") && curves.lines().count() == curve_rows;
    if !(table_ok && curves_ok) {
        return Err(format!("unexpected layout:\n{table}\n{curves}"));
    }
    Ok(format!(
        "{} subcommands ran; table.csv {table_rows} lines (metric x size x strategy rows, one task column), \
         curves.csv {curve_rows} lines",
        steps.len()
    ))
}

pub fn smoke(root: &Path, record: &mut Option<Smoke>) -> Outcome {
    let mut steps = Vec::new();
    let result = run_pipeline(root, &mut steps);
    *record = Some(Smoke { steps });
    match result {
        Ok(detail) => Outcome::new(true, detail),
        Err(e) => Outcome::fail(e),
    }
}

/// Rerun every recorded step from its manifest into a parallel tree and
/// compare the outputs byte for byte.
pub fn determinism(root: &Path, smoke: Option<&Smoke>) -> Outcome {
    let Some(smoke) = smoke.filter(|s| !s.steps.is_empty()) else {
        return Outcome::fail("no recorded pipeline");
    };
    let replay_root = root.join("replay");
    let (mut files, mut differing, mut errors) = (0, Vec::new(), Vec::new());
    let mut names: Vec<&str> = Vec::new();
    for step in &smoke.steps {
        let result = (|| -> Result<(), String> {
            let first = last_run(&root.join(&step.dir), step.name)?;
            let out = first.config["out"].as_str().ok_or("no recorded output path")?;
            let rel = Path::new(out).strip_prefix(root).map_err(|e| e.to_string())?;
            let replay_out = replay_root.join(rel);
            let manifest = root.join(&step.dir).join(MANIFEST_FILE);
            flowgnn(&[step.name, "--config", s(&manifest), "--out", s(&replay_out)])?;
            let second = last_run(&replay_root.join(&step.dir), step.name)?;
            if first.outputs.len() != second.outputs.len() || first.outputs.is_empty() {
                return Err(format!(
                    "{}: output count {} vs {}",
                    step.name,
                    first.outputs.len(),
                    second.outputs.len()
                ));
            }
            for (a, b) in first.outputs.iter().zip(&second.outputs) {
                files += 1;
                let same = std::fs::read(&a.path).map_err(|e| e.to_string())?
                    == std::fs::read(&b.path).map_err(|e| e.to_string())?;
                if !same || a.sha256 != b.sha256 {
                    differing.push(format!("{}:{}", step.name, Path::new(&a.path).display()));
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            errors.push(e);
        }
        if !names.contains(&step.name) {
            names.push(step.name);
        }
    }
    let mut detail = format!(
        "{} reruns of [{}] from their manifests, {files} output files compared, {} differ",
        smoke.steps.len(),
        names.join(", "),
        differing.len()
    );
    if let Some(d) = differing.first() {
        detail.push_str(&format!(" (first: {d})"));
    }
    if let Some(e) = errors.first() {
        detail.push_str(&format!("; {} errors, first: {e}", errors.len()));
    }
    Outcome::new(differing.is_empty() && errors.is_empty(), detail)
}
