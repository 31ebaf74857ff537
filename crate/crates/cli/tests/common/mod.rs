use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A training config small enough for subprocess tests.
pub const SMALL_CONFIG: &str = r#"{"epochs": 2, "warmup_epochs": 1, "embeddings": 8, "grid_size": 16, "hidden_units": [16]}"#;

pub fn survgen<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survgen"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let args: Vec<String> = args
        .iter()
        .map(|a| match a.strip_prefix('@') {
            Some(rel) => dir.join(rel).to_string_lossy().into_owned(),
            None => a.to_string(),
        })
        .collect();
    let out = survgen(&args);
    assert!(
        out.status.success(),
        "survgen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs every subcommand inside `dir`; arguments starting with `@` are paths relative to it.
pub fn run_every_subcommand(dir: &Path, seed: u64) {
    std::fs::write(dir.join("config.json"), SMALL_CONFIG).unwrap();
    let s = seed.to_string();
    let common = ["--seed", s.as_str(), "--config", "@config.json"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--kind", "linear", "--n", "60", "--out", "@data.csv"],
        vec!["synth", "--kind", "circles", "--n", "4", "--out", "@rows.csv"],
        vec!["train", "--data", "@data.csv", "--model-out", "@model.json", "--log", "@log.jsonl"],
        vec!["predict", "--model", "@model.json", "--data", "@rows.csv", "--out", "@pred.csv"],
        vec!["generate", "--model", "@model.json", "--rows", "@data.csv", "--out", "@gen.csv"],
        vec!["generate", "--model", "@model.json", "--count", "10", "--out", "@gen_count.csv"],
        vec!["trajectory", "--model", "@model.json", "--rows", "@rows.csv", "--out", "@traj"],
        vec!["eval", "--data", "@data.csv", "--reps", "2", "--out", "@eval.json"],
        vec!["km-compare", "--original", "@data.csv", "--generated", "@gen.csv", "--out", "@km.json"],
    ];
    std::fs::create_dir_all(dir.join("traj")).unwrap();
    for step in steps {
        let mut args = step;
        args.extend_from_slice(&common);
        ok(dir, &args);
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
