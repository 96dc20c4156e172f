use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_redspace");

const CONFIG: &str = r#"{
  "benchmark": "cantilever-periodic-unconstrained",
  "methods": ["BO", "PLS-BO"],
  "seeds": [0, 1, 2],
  "run": {"n_k": 4, "d_z": 2, "maximizer_budget": 150, "init": {"kind": "pbd", "extra_lhs": 2}}
}"#;

fn redspace(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("REDSPACE_SEED_OFFSET");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn run_into(dir: &Path, config: &Path, extra: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = redspace(&args, envs);
    assert!(out.status.success(), "run failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn trace_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with("trace_"))
        .filter(|p| p.extension().unwrap() == "csv")
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

/// Mean and sample standard deviation of the incumbent per (method, k),
/// recomputed from the trace files alone.
fn recompute(dir: &Path) -> BTreeMap<(String, usize), (f64, f64)> {
    let mut per: BTreeMap<(String, usize), Vec<(u64, f64)>> = BTreeMap::new();
    for (_, bytes) in trace_files(dir) {
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let inc_col = header.iter().position(|h| *h == "incumbent").unwrap();
        let mut last: BTreeMap<usize, f64> = BTreeMap::new();
        let mut ident = None;
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let k: usize = f[0].parse().unwrap();
            ident = Some((f[2].to_string(), f[1].parse::<u64>().unwrap()));
            last.insert(k, f[inc_col].parse().unwrap());
        }
        let (method, seed) = ident.unwrap();
        for (k, v) in last {
            per.entry((method.clone(), k)).or_default().push((seed, v));
        }
    }
    per.into_iter()
        .map(|(key, mut vals)| {
            vals.sort_by_key(|v| v.0);
            let n = vals.len() as f64;
            let mean = vals.iter().map(|v| v.1).sum::<f64>() / n;
            let var = vals.iter().map(|v| (v.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (key, (mean, var.sqrt()))
        })
        .collect()
}

#[test]
fn run_writes_traces_summary_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CONFIG);
    let a = tmp.path().join("a");
    let out = run_into(&a, &cfg, &["--parallelism", "2"], &[]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" ok ")).count(), 6, "{stdout}");

    let traces = trace_files(&a);
    assert_eq!(traces.len(), 6);
    for name in ["manifest.json", "summary.csv", "targets.csv"] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["target"].as_f64(), Some(7.44));

    // identical bytes on a rerun, whatever the worker count
    let b = tmp.path().join("b");
    run_into(&b, &cfg, &["--parallelism", "1"], &[]);
    assert_eq!(trace_files(&b), traces);

    // summary.csv agrees with an independent recomputation
    let expected = recompute(&a);
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    let mut seen = 0;
    for line in summary.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[0].to_string(), f[1].parse::<usize>().unwrap());
        let (mean, std) = expected[&key];
        let (m, s): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        assert_eq!(f[2], "3");
        assert!((m - mean).abs() <= 1e-13 * mean.abs(), "{key:?}: {m} vs {mean}");
        assert!((s - std).abs() <= 1e-12 * (1.0 + std.abs()), "{key:?}: {s} vs {std}");
        seen += 1;
    }
    assert_eq!(seen, expected.len());

    // summarize regenerates the same files from the traces
    let before = (fs::read(a.join("summary.csv")).unwrap(), fs::read(a.join("targets.csv")).unwrap());
    fs::remove_file(a.join("summary.csv")).unwrap();
    fs::remove_file(a.join("targets.csv")).unwrap();
    let s = redspace(&["summarize", a.to_str().unwrap()], &[]);
    assert!(s.status.success());
    assert_eq!(before.0, fs::read(a.join("summary.csv")).unwrap());
    assert_eq!(before.1, fs::read(a.join("targets.csv")).unwrap());
}

#[test]
fn seed_offset_shifts_seeds_and_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"benchmark":"cantilever-step-unconstrained","method":"BO","seeds":[0],"run":{"n_k":1,"maximizer_budget":50}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_into(&a, &cfg, &[], &[]);
    run_into(&b, &cfg, &[], &[("REDSPACE_SEED_OFFSET", "7")]);
    assert!(trace_files(&a).contains_key("trace_BO_seed0.csv"));
    assert!(trace_files(&b).contains_key("trace_BO_seed7.csv"));
    let hash = |d: &Path| {
        let m: Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&a), hash(&b));

    let bad = redspace(&["run", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()], &[("REDSPACE_SEED_OFFSET", "x")]);
    assert!(!bad.status.success());
}

#[test]
fn bad_configs_exit_nonzero_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    for (text, key) in [
        (r#"{"benchmark":"illustrative-constrained","method":"BO","seeds":[0],"colour":1}"#, "colour"),
        (r#"{"benchmark":"illustrative-constrained","method":"PLS-BO","seeds":[0],"run":{"d_z":21}}"#, "d_z"),
        (r#"{"method":"BO","seeds":[0]}"#, "benchmark"),
        ("not json", "json"),
    ] {
        let cfg = write_config(tmp.path(), text);
        let out = redspace(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], &[]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{err}");
    }
    let missing = redspace(&["run", "/nonexistent/config.json"], &[]);
    assert!(!missing.status.success());
}

#[test]
fn list_benchmarks_names_every_problem() {
    let out = redspace(&["list-benchmarks"], &[]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    for name in [
        "illustrative-constrained",
        "cantilever-step-unconstrained",
        "cantilever-periodic-unconstrained",
    ] {
        assert!(text.contains(name));
    }
}
