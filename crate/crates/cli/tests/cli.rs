// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurofunc::model::PlantLayout;
use neurofunc::trace::{read_trace, Functionality};
use tempfile::TempDir;

fn neurofunc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurofunc"))
        .args(args)
        .current_dir(cwd)
        .env("NEUROFUNC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = neurofunc(args, cwd);
    assert!(
        out.status.success(),
        "`neurofunc {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Data rows of a schema-tagged table, header row first.
fn table(path: &Path, schema: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(format!("# schema: neurofunc.{schema} v1").as_str()));
    lines.map(|l| l.split('\t').map(str::to_string).collect()).collect()
}

const SMALL: &[&str] = &["--layers", "2", "--d-model", "32", "--d-ff", "64", "--vocab", "48", "--heads", "2"];

/// A small planted model plus a synthetic manifest.
fn planted(dir: &TempDir, per_functionality: usize, shape: &[&str], per_group: &str) -> (PathBuf, PathBuf) {
    let mut args = vec!["gen-model", "--out", "model.namd", "--seed", "5", "--plant-per-group", per_group];
    args.extend_from_slice(shape);
    ok(&args, dir.path());
    let n = per_functionality.to_string();
    ok(
        &["gen-corpus", "--layout", "model.layout.json", "--per-functionality", &n, "--out", "corpus.jsonl"],
        dir.path(),
    );
    (dir.path().join("model.namd"), dir.path().join("corpus.jsonl"))
}

#[test]
fn gen_model_is_deterministic_and_writes_a_run_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.namd", "b.namd"] {
        let mut args = vec!["gen-model", "--out", out, "--seed", "9"];
        args.extend_from_slice(SMALL);
        ok(&args, dir.path());
    }
    assert_eq!(fs::read(dir.path().join("a.namd")).unwrap(), fs::read(dir.path().join("b.namd")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_manifest.gen-model.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-model");
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["duration_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn overlapping_plant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let plant = r#"{"markers_per_group": 2, "groups": [
        {"functionality": "coding", "neurons": [[0, 1], [2]]},
        {"functionality": "math", "neurons": [[1], [3]]}]}"#;
    fs::write(dir.path().join("plant.json"), plant).unwrap();
    let mut args = vec!["gen-model", "--out", "m.namd", "--plant-file", "plant.json"];
    args.extend_from_slice(SMALL);
    let out = neurofunc(&args, dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("planted for both"));
    assert!(!dir.path().join("m.namd").exists());
}

#[test]
fn default_model_is_traceable_with_cap_and_per_token_blocks() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-model", "--out", "default.namd"], dir.path());
    let (_, manifest) = planted(&dir, 5, SMALL, "4");
    let manifest = manifest.display().to_string();
    ok(
        &["trace", "--model", "default.namd", "--manifest", &manifest, "--cap", "2", "--per-token", "--out", "t.ntrc"],
        dir.path(),
    );
    let trace = read_trace(dir.path().join("t.ntrc")).unwrap();
    assert!(trace.len() <= 14);
    assert_eq!(trace.label_counts(), [2; 7]);
    // the summary equals the per-token mean
    for (i, inst) in trace.instances().iter().enumerate() {
        for layer in 0..trace.n_layers() {
            for n in 0..trace.d_ff() {
                let mean = (0..inst.n_prompt_tokens)
                    .map(|t| f64::from(trace.per_token(i, t, layer).unwrap()[n]))
                    .sum::<f64>()
                    / inst.n_prompt_tokens as f64;
                assert!((mean - f64::from(trace.summary(i, layer)[n])).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn missing_model_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.jsonl"), "").unwrap();
    let out = neurofunc(&["trace", "--model", "nope.namd", "--manifest", "c.jsonl", "--out", "t.ntrc"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.namd") && err.contains("No such file"), "{err}");
}

#[test]
fn sweep_at_zero_matches_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = planted(&dir, 3, SMALL, "4");
    let (model, manifest) = (model.display().to_string(), manifest.display().to_string());
    let stdout = ok(&["eval", "--model", &model, "--manifest", &manifest, "--out", "eval.tsv"], dir.path());
    let eval_loss = stdout.lines().next().unwrap().split('\t').nth(1).unwrap().to_string();
    ok(
        &["sparsity", "--mode", "sweep", "--kind", "activation", "--fractions", "0",
          "--model", &model, "--manifest", &manifest, "--out", "sweep"],
        dir.path(),
    );
    let rows = table(&dir.path().join("sweep/sweep.activation.tsv"), "sweep");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], eval_loss);
    let eval_rows = table(&dir.path().join("eval.tsv"), "eval");
    assert_eq!(eval_rows.last().unwrap()[3], eval_loss);
}

#[test]
fn indicator_kinds_give_distinct_cdfs_on_a_random_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, manifest) = planted(&dir, 2, SMALL, "4");
    let mut args = vec!["gen-model", "--out", "random.namd", "--seed", "1"];
    args.extend_from_slice(SMALL);
    ok(&args, dir.path());
    let manifest = manifest.display().to_string();
    ok(
        &["sparsity", "--mode", "cdf", "--model", "random.namd", "--manifest", &manifest, "--out", "cdf"],
        dir.path(),
    );
    let act = table(&dir.path().join("cdf/cdf.activation.tsv"), "cdf");
    let mag = table(&dir.path().join("cdf/cdf.output_magnitude.tsv"), "cdf");
    assert_eq!(act[0], ["threshold", "overall", "layer_0", "layer_1"]);
    assert_eq!(act.len(), 102);
    assert_eq!(act.last().unwrap()[1], "1.000000000");
    assert_ne!(act, mag);
}

#[test]
fn planted_model_tolerates_more_magnitude_masking() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = planted(&dir, 6, &[], "8");
    let (model, manifest) = (model.display().to_string(), manifest.display().to_string());
    let fractions = (0..20).map(|i| format!("{}", i as f64 * 0.05)).collect::<Vec<_>>().join(",");
    let stdout = ok(
        &["sparsity", "--mode", "sweep", "--fractions", &fractions, "--model", &model,
          "--manifest", &manifest, "--out", "sweep"],
        dir.path(),
    );
    let tolerated = |kind: &str| -> f64 {
        stdout
            .lines()
            .find(|l| l.starts_with(&format!("{kind}\t")))
            .and_then(|l| l.rsplit('\t').next())
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(tolerated("output_magnitude") > tolerated("activation"), "{stdout}");
}

#[test]
fn localize_recovers_planted_neurons_and_flags_missing_functionality() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = planted(&dir, 8, SMALL, "4");
    let (model, manifest) = (model.display().to_string(), manifest.display().to_string());
    ok(&["trace", "--model", &model, "--manifest", &manifest, "--out", "t.ntrc"], dir.path());
    let fraction = "0.0625"; // 4 of 64 neurons per layer
    ok(&["localize", "scores", "--trace", "t.ntrc", "--fraction", fraction, "--out", "loc"], dir.path());
    let layout: PlantLayout =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model.layout.json")).unwrap()).unwrap();
    let selection: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("loc/selection.json")).unwrap()).unwrap();
    for (f, set) in Functionality::ALL.iter().zip(&selection) {
        let planted = &layout.plant.group(*f).unwrap().neurons;
        let chosen: Vec<Vec<usize>> = serde_json::from_value(set["layers"].clone()).unwrap();
        assert_eq!(&chosen, planted, "{f}");
    }
    let rows = table(&dir.path().join("loc/scores.tsv"), "scores");
    assert_eq!(rows.len(), 1 + 2 * 64);

    ok(
        &["localize", "prune", "--trace", "t.ntrc", "--fraction", fraction, "--model", &model,
          "--manifest", &manifest, "--out", "loc"],
        dir.path(),
    );
    let rows = table(&dir.path().join("loc/perturbation.tsv"), "perturbation");
    for (i, row) in rows[2..].iter().enumerate() {
        let values: Vec<f64> = row[1..].iter().map(|v| v.parse().unwrap()).collect();
        let argmax = (0..7).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        assert_eq!(argmax, i, "row {}", row[0]);
    }

    let without_math: String = fs::read_to_string(dir.path().join("corpus.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"math-"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("no_math.jsonl"), without_math).unwrap();
    let out = neurofunc(
        &["localize", "prune", "--trace", "t.ntrc", "--model", &model, "--manifest", "no_math.jsonl", "--out", "loc2"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`math`"));
}

#[test]
fn partition_baseline_reports_expected_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let shape = ["--layers", "1", "--d-model", "32", "--d-ff", "200", "--vocab", "48", "--heads", "2"];
    let (model, manifest) = planted(&dir, 3, &shape, "4");
    let (model, manifest) = (model.display().to_string(), manifest.display().to_string());
    ok(&["trace", "--model", &model, "--manifest", &manifest, "--out", "t.ntrc"], dir.path());
    let stdout = ok(
        &["localize", "partition", "--trace", "t.ntrc", "--fraction", "0.05", "--baseline", "--out", "part"],
        dir.path(),
    );
    assert!(stdout.contains("expected 0.0500"), "{stdout}");
    let rows = table(&dir.path().join("part/partition_baseline.tsv"), "partition_baseline");
    assert_eq!(rows[1][2], "10");
    assert_eq!(rows[1][6], "0.050000000");
    let mean: f64 = rows[1][4].parse().unwrap();
    assert!((mean - 0.05).abs() < 0.01);
    let sim = table(&dir.path().join("part/partition.tsv"), "partition");
    assert_eq!(sim.len(), 8);
    assert_eq!(sim[1][1], "1.000000000");
}
