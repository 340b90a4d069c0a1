use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const CONFIG: &str = r#"
generations = 6
active_models = 6
offspring_per_gen = 4
active_tasks = 24
task_interval = 2
n_gen_tasks = 6
seed_tasks = 8
init_tasks = 4
taskforce_size = 3
run_seed = 5
"#;

fn acdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acdc"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = acdc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn start_run(root: &Path, name: &str) -> PathBuf {
    let config = root.join("config.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = root.join(name);
    ok(&["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    out
}

fn manifest(dir: &Path) -> String {
    dir.join("manifest.json").to_string_lossy().into_owned()
}

fn export(dir: &Path, kind: &str, file: &str) -> String {
    let out = dir.join(file);
    ok(&["export", "--manifest", &manifest(dir), "--kind", kind, "--out", out.to_str().unwrap()]);
    fs::read_to_string(out).unwrap()
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

/// Rolls a finished run back to `generation`, as if the process had died
/// after committing it.
fn interrupt_after(dir: &Path, generation: u64) {
    let path = dir.join("manifest.json");
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let snaps = m["snapshots"].as_array_mut().unwrap();
    for s in snaps.iter().filter(|s| s["generation"].as_u64().unwrap() > generation) {
        fs::remove_file(dir.join(s["path"].as_str().unwrap())).unwrap();
    }
    snaps.retain(|s| s["generation"].as_u64().unwrap() <= generation);
    fs::write(&path, serde_json::to_vec_pretty(&m).unwrap()).unwrap();
    fs::remove_file(dir.join("taskforce.json")).unwrap();
}

#[test]
fn run_resume_and_exports_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let whole = start_run(tmp.path(), "whole");
    let broken = start_run(tmp.path(), "broken");
    interrupt_after(&broken, 3);
    let summary: Value = serde_json::from_str(&ok(&["resume", "--manifest", &manifest(&broken)])).unwrap();
    assert_eq!(summary["generations"], 6);

    for file in ["snapshots/gen-0006.snap", "transcripts.jsonl", "tasks.jsonl", "lineage.jsonl", "taskforce.json"] {
        assert_eq!(fs::read(whole.join(file)).unwrap(), fs::read(broken.join(file)).unwrap(), "{file} differs");
    }

    let kinds = [
        ("coverage_over_generations", 6, 6),
        ("new_models_per_gen", 6, 5),
        ("vendi_over_epochs", 3, 6),
        ("adaptation_mix", 3, 7),
    ];
    for (kind, rows, cols) in kinds {
        let a = export(&whole, kind, &format!("{kind}.csv"));
        let again = export(&whole, kind, &format!("{kind}-2.csv"));
        let b = export(&broken, kind, &format!("{kind}.csv"));
        assert_eq!(a, again, "{kind} not reproducible");
        assert_eq!(a, b, "{kind} differs after resume");
        let (header, body) = csv_rows(&a);
        assert_eq!(header.len(), cols, "{kind}: {header:?}");
        assert_eq!(body.len(), rows, "{kind}");
        assert_eq!(header[0], "generation");
    }

    let (header, body) = csv_rows(&export(&whole, "adaptation_mix", "mix.csv"));
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in &body {
        let n = |name: &str| row[col(name)].parse::<usize>().unwrap();
        assert_eq!(n("harder") + n("easier") + n("novel"), n("accepted"), "{row:?}");
        assert!(n("accepted") <= n("proposed"));
    }
    let (_, gens) = csv_rows(&export(&whole, "new_models_per_gen", "nm.csv"));
    for row in &gens {
        let n: Vec<usize> = row.iter().map(|x| x.parse().unwrap()).collect();
        assert!(n[2] + n[3] + n[4] <= n[1], "{row:?}");
    }
}

#[test]
fn query_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = start_run(tmp.path(), "run");
    let m = manifest(&dir);

    let tf: Value = serde_json::from_str(&ok(&["select-taskforce", "--manifest", &m, "--n", "2", "--strategy", "fitness"])).unwrap();
    assert_eq!(tf["member_ids"].as_array().unwrap().len(), 2);
    assert_eq!(tf["selection_strategy"], "fitness");

    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.join("taskforce.json")).unwrap()).unwrap();
    let ids: Vec<String> = saved["member_ids"].as_array().unwrap().iter().map(|v| format!("m{:05}", v.as_u64().unwrap())).collect();
    assert_eq!(ids.len(), 3);
    let report: Value = serde_json::from_str(&ok(&["eval-coverage", "--manifest", &m, "--models", &ids.join(",")])).unwrap();
    assert_eq!(report["coverage"], saved["achieved_coverage"]);

    let holdout = tmp.path().join("holdout.jsonl");
    let probe = |t: f64| {
        format!(
            r#"{{"name":"p","instruction":"probe","scorer":{{"kind":"synthetic_probe","direction":[1.0{}],"threshold":{t},"noise_seed":0}}}}"#,
            ",0.0".repeat(saved_dimension(&dir) - 1)
        )
    };
    fs::write(&holdout, format!("{}\n{}\n", probe(-1e9), probe(1e9))).unwrap();
    let report: Value = serde_json::from_str(&ok(&[
        "eval-coverage", "--manifest", &m, "--models", &ids[0], "--holdout", holdout.to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(report["tasks"], 2);
    assert_eq!(report["coverage"], 0.5);

    let tree = ok(&["lineage", "--manifest", &m, "--model", &ids[0]]);
    assert!(tree.starts_with(&ids[0]), "{tree}");
    assert!(tree.lines().any(|l| l.contains(" seed")), "{tree}");
}

fn saved_dimension(dir: &Path) -> usize {
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["config"]["world"]["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| (t["rows"].as_u64().unwrap() * t["cols"].as_u64().unwrap()) as usize)
        .sum()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| acdc(args).status.code().unwrap();

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "generatons = 3\n").unwrap();
    assert_eq!(code(&["run", "--config", bad.to_str().unwrap(), "--out", "x"]), 1);
    fs::write(&bad, "[mutation]\nrate = 2.0\n").unwrap();
    let out = acdc(&["run", "--config", bad.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mutation.rate"));
    assert_eq!(code(&["run", "--config", "/nonexistent.toml"]), 1);
    assert_eq!(code(&["resume", "--manifest", "/nonexistent/manifest.json"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);

    let dir = start_run(tmp.path(), "run");
    let m = manifest(&dir);
    assert_eq!(code(&["export", "--manifest", &m, "--kind", "pie_chart", "--out", "x.csv"]), 1);
    assert_eq!(code(&["select-taskforce", "--manifest", &m, "--n", "0"]), 1);
    assert_eq!(code(&["lineage", "--manifest", &m, "--model", "m99999"]), 1);

    let snap = dir.join("snapshots/gen-0006.snap");
    let mut bytes = fs::read(&snap).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    fs::write(&snap, bytes).unwrap();
    let out = acdc(&["resume", "--manifest", &m]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}
