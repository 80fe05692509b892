use std::path::{Path, PathBuf};

use kidforge::cli::main_with_args;
use kidforge::eval::synthetic::SyntheticSpec;
use kidforge::eval::{synthetic_ablation, AblationStage, LabelingConfig};

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Writes the features preset under `root/data` and returns the common
/// federation arguments.
fn federation(root: &Path, seed: &str) -> Vec<String> {
    let data = root.join("data");
    assert_eq!(main_with_args(["kidforge", "synth", "--synthetic", "features", "--seed", seed, "--out", &s(&data)]), 0);
    let mut a = vec!["--schema".to_string(), s(&data.join("schema.json"))];
    for d in 0..3 {
        a.push("--manifest".into());
        a.push(s(&data.join(format!("synth-{d}.jsonl"))));
    }
    a
}

fn run(cmd: &str, fed: &[String], extra: &[&str], out: &Path) -> i32 {
    let mut args = vec!["kidforge".to_string(), cmd.to_string()];
    args.extend(fed.iter().cloned());
    args.extend(extra.iter().map(|x| x.to_string()));
    args.extend(["--out".to_string(), s(out)]);
    main_with_args(args)
}

fn run_meta(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("run.json")).unwrap()).unwrap()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_clean_federation() {
    let dir = tempfile::tempdir().unwrap();
    let fed = federation(dir.path(), "1");
    let out = dir.path().join("v");
    assert_eq!(run("validate", &fed, &[], &out), 0);
    let meta = run_meta(&out);
    assert_eq!(meta["command"], "validate");
    assert!(meta["config_hash"].as_str().is_some_and(|h| !h.is_empty()));
    assert_eq!(std::fs::read_to_string(out.join("validation.txt")).unwrap(), "");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(main_with_args(["kidforge", "frobnicate"]), 2);
    assert_eq!(main_with_args(["kidforge", "validate", "--schema", &s(&dir.path().join("none.json")), "--out", &s(dir.path())]), 2);
    assert_eq!(main_with_args(["kidforge", "synth", "--synthetic", "nope", "--out", &s(dir.path())]), 2);
    assert_eq!(main_with_args(["kidforge", "validate", "--vote", "loud"]), 2);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\nsynthetic = \"features\"\n").unwrap();
    let a = dir.path().join("a");
    assert_eq!(main_with_args(["kidforge", "synth", "--config", &s(&cfg), "--out", &s(&a)]), 0);
    assert_eq!(run_meta(&a)["seed"], 5);
    let b = dir.path().join("b");
    assert_eq!(main_with_args(["kidforge", "synth", "--config", &s(&cfg), "--seed", "7", "--out", &s(&b)]), 0);
    assert_eq!(run_meta(&b)["seed"], 7);
    std::fs::write(&cfg, "seeed = 5\n").unwrap();
    assert_eq!(main_with_args(["kidforge", "synth", "--config", &s(&cfg), "--out", &s(&b)]), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fed = federation(dir.path(), "2");
    let extra = ["--max-epochs", "8", "--seed", "2", "--dump-decisions"];
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("eval-heldout", &fed, &extra, &a), 0);
    assert_eq!(run("eval-heldout", &fed, &extra, &b), 0);
    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    assert!(files.iter().any(|f| f.ends_with("heldout_decisions.jsonl")));
    for f in &files {
        let (x, y) = (std::fs::read_to_string(a.join(f)).unwrap(), std::fs::read_to_string(b.join(f)).unwrap());
        if f.ends_with("run.json") {
            let (mut x, mut y): (serde_json::Value, serde_json::Value) = (serde_json::from_str(&x).unwrap(), serde_json::from_str(&y).unwrap());
            x["timestamp_unix"] = 0.into();
            y["timestamp_unix"] = 0.into();
            assert_eq!(x, y);
        } else {
            assert_eq!(x, y, "{f:?}");
        }
    }
    let hash = run_meta(&a)["config_hash"].as_str().unwrap().to_string();
    assert!(std::fs::read_to_string(a.join("heldout.csv")).unwrap().contains(&hash));
}

#[test]
fn train_label_and_build_kid() {
    let dir = tempfile::tempdir().unwrap();
    let mut fed = federation(dir.path(), "3");
    // Strip labels from the last dataset so there is something to fill.
    let last = PathBuf::from(&fed[fed.len() - 1]);
    let text = std::fs::read_to_string(&last).unwrap();
    let stripped: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            if i == 0 {
                v["declared_annotations"] = serde_json::json!([]);
            } else {
                v["annotations"]["color"] = serde_json::Value::Null;
            }
            v.to_string()
        })
        .collect();
    let hidden = dir.path().join("data/hidden.jsonl");
    std::fs::write(&hidden, stripped.join("\n") + "\n").unwrap();
    let n = fed.len();
    fed[n - 1] = s(&hidden);

    let teams = dir.path().join("teams");
    assert_eq!(run("train-team", &fed, &["--max-epochs", "8"], &teams), 0);
    assert!(teams.join("teams/color/team.json").exists());
    let labels = dir.path().join("labels");
    assert_eq!(run("label", &fed, &["--teams", &s(&teams.join("teams"))], &labels), 0);
    let kid = dir.path().join("kid");
    assert_eq!(run("build-kid", &fed, &["--teams", &s(&teams.join("teams"))], &kid), 0);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(kid.join("kid_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"], 1200);
    assert_eq!(summary["provenance_summary"]["color"]["original"], 800);
    let meta = run_meta(&kid);
    assert!(meta["outputs"].as_array().unwrap().iter().any(|o| o == "kid.jsonl"));
}

#[test]
fn ablate_writes_both_formats_matching_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ab");
    let code = main_with_args([
        "kidforge", "ablate", "--synthetic", "features", "--stages", "initial,+bootstrap", "--seeds", "2", "--max-epochs", "8",
        "--out", &s(&out),
    ]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(out.join("ablation.md").exists());
    let base = LabelingConfig { train: kidforge::expert::TrainConfig { max_epochs: 8, ..Default::default() }, ..Default::default() };
    let stages = [AblationStage::Initial, AblationStage::Bootstrap];
    let lib = synthetic_ablation(&SyntheticSpec::features_default(0), &stages, &[0, 1], &base).unwrap();
    let body = |t: &str| t.lines().skip(1).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(body(&csv), body(&lib.report.to_csv()));
    assert!(csv.lines().next().unwrap().contains(run_meta(&out)["config_hash"].as_str().unwrap()));
}
