#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SEED: &str = "7";

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

/// Runs the binary from the crate directory with a pinned clock.
pub fn grain_attr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grain-attr"))
        .args(args)
        .current_dir(manifest_dir())
        .env("SOURCE_DATE_EPOCH", "0")
        .env_remove("GRAIN_ATTR_API_KEY")
        .output()
        .expect("run grain-attr")
}

fn checked(args: &[&str]) -> Result<String, String> {
    let out = grain_attr(args);
    if !out.status.success() {
        return Err(format!(
            "grain-attr {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8(out.stdout).expect("utf-8 stdout"))
}

/// Every artifact of the restaurant scenario, by golden file name.
pub fn restaurant_outputs(work: &Path) -> Result<Vec<(String, String)>, String> {
    let task = "fixtures/restaurant/task.json";
    let mut produced = Vec::new();
    for variant in ["sentence", "refined"] {
        let groups = format!("fixtures/restaurant/{variant}.groups.json");
        let exp = work.join(format!("{variant}.explanation.json"));
        let rep = work.join(format!("{variant}.fidelity.json"));
        let csv = work.join(format!("{variant}.curves.csv"));
        let stdout = checked(&[
            "explain", "--task", task, "--groups", &groups, "--seed", SEED, "--out", exp.to_str().unwrap(),
        ])?;
        produced.push((format!("{variant}.explain.txt"), stdout));
        let stdout = checked(&[
            "fidelity",
            "--explanation",
            exp.to_str().unwrap(),
            "--out",
            rep.to_str().unwrap(),
            "--csv",
            csv.to_str().unwrap(),
        ])?;
        produced.push((format!("{variant}.fidelity.txt"), stdout));
        for path in [exp, rep, csv] {
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            produced.push((name, std::fs::read_to_string(&path).map_err(|e| e.to_string())?));
        }
    }
    let stdout = checked(&[
        "compare",
        "--task",
        task,
        "--groups",
        "fixtures/restaurant/sentence.groups.json",
        "fixtures/restaurant/refined.groups.json",
        "--seed",
        SEED,
    ])?;
    produced.push(("compare.txt".into(), stdout));
    Ok(produced)
}

/// Compares against the checked-in goldens, or rewrites them when `bless`.
pub fn check_goldens(bless: bool) -> Result<usize, String> {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let produced = restaurant_outputs(work.path())?;
    for (name, contents) in &produced {
        let path = golden_dir().join(name);
        if bless {
            std::fs::write(&path, contents).map_err(|e| e.to_string())?;
            continue;
        }
        let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if &expected != contents {
            let line = expected
                .lines()
                .zip(contents.lines())
                .position(|(a, b)| a != b)
                .map(|i| i + 1)
                .unwrap_or(expected.lines().count().min(contents.lines().count()) + 1);
            return Err(format!("{name} differs from golden at line {line}"));
        }
    }
    Ok(produced.len())
}
