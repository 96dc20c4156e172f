//! Experiment runner: JSON configuration, seeded multi-run execution on a
//! worker pool, trace persistence and convergence summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::benchmarks::benchmark;
use crate::error::{Error, Result};
use crate::evaluator::{external_evaluator, EvaluatorSpec};
use crate::optimizer::{iterations_to_target, run, Method, RunConfig, Trace, TraceRow};
use crate::problem::Problem;

pub const SEED_OFFSET_VAR: &str = "REDSPACE_SEED_OFFSET";
const MANIFEST: &str = "manifest.json";
const SUMMARY: &str = "summary.csv";
const TARGETS: &str = "targets.csv";

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Benchmark(String),
    Evaluator(EvaluatorSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: ProblemSource,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Settings shared by every method.
    pub run: RunConfig,
    /// Fully resolved settings per method.
    pub runs: BTreeMap<Method, RunConfig>,
    pub output: Option<PathBuf>,
    pub parallelism: Option<usize>,
    /// Threshold for iterations-to-target; defaults to the benchmark's.
    pub target: Option<f64>,
}

const TOP_KEYS: [&str; 10] = [
    "benchmark",
    "evaluator",
    "method",
    "methods",
    "seeds",
    "run",
    "overrides",
    "output",
    "parallelism",
    "target",
];

fn merge(base: &mut Value, patch: &Value) {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        for (k, v) in p {
            match (k.as_str(), b.get_mut(k)) {
                ("acquisition", Some(existing @ Value::Object(_))) if v.is_object() => {
                    merge(existing, v)
                }
                _ => {
                    b.insert(k.clone(), v.clone());
                }
            }
        }
    }
}

fn run_config_from(base: &RunConfig, patch: Option<&Value>, key: &str) -> Result<RunConfig> {
    let mut v = serde_json::to_value(base)?;
    if let Some(p) = patch {
        if !p.is_object() {
            return Err(Error::config(key, "expected an object"));
        }
        merge(&mut v, p);
    }
    serde_json::from_value(v).map_err(|e| Error::config(key, e.to_string()))
}

fn parse_method(v: &Value, key: &str) -> Result<Method> {
    v.as_str()
        .and_then(Method::parse)
        .ok_or_else(|| Error::config(key, format!("unknown method {v}; expected BO, PCA-BO, PLS-BO or PPLS-BO")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        Self::from_value(&root)
    }

    pub fn from_value(root: &Value) -> Result<Self> {
        let obj = root
            .as_object()
            .ok_or_else(|| Error::config("$", "configuration must be a JSON object"))?;
        for k in obj.keys() {
            if !TOP_KEYS.contains(&k.as_str()) {
                return Err(Error::config(k, "unknown key"));
            }
        }

        let source = match (obj.get("benchmark"), obj.get("evaluator")) {
            (Some(b), None) => {
                let name = b
                    .as_str()
                    .ok_or_else(|| Error::config("benchmark", "expected a benchmark name"))?;
                benchmark(name).map_err(|_| {
                    Error::config("benchmark", format!("unknown benchmark `{name}` (see list-benchmarks)"))
                })?;
                ProblemSource::Benchmark(name.to_string())
            }
            (None, Some(e)) => {
                let spec: EvaluatorSpec = serde_json::from_value(e.clone())
                    .map_err(|err| Error::config("evaluator", err.to_string()))?;
                spec.validate()?;
                ProblemSource::Evaluator(spec)
            }
            (Some(_), Some(_)) => {
                return Err(Error::config("evaluator", "give either `benchmark` or `evaluator`, not both"))
            }
            (None, None) => return Err(Error::config("benchmark", "missing `benchmark` or `evaluator`")),
        };

        let methods = match (obj.get("method"), obj.get("methods")) {
            (Some(m), None) => vec![parse_method(m, "method")?],
            (None, Some(Value::Array(ms))) => ms
                .iter()
                .map(|m| parse_method(m, "methods"))
                .collect::<Result<Vec<_>>>()?,
            (None, Some(_)) => return Err(Error::config("methods", "expected an array")),
            (Some(_), Some(_)) => return Err(Error::config("methods", "give either `method` or `methods`")),
            (None, None) => return Err(Error::config("methods", "missing `method` or `methods`")),
        };
        if methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        if methods.iter().collect::<BTreeSet<_>>().len() != methods.len() {
            return Err(Error::config("methods", "methods must be distinct"));
        }

        let seeds: Vec<u64> = match obj.get("seeds") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::config("seeds", e.to_string()))?,
            None => return Err(Error::config("seeds", "missing `seeds`")),
        };
        if seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }

        let run = run_config_from(&RunConfig::default(), obj.get("run"), "run")?;

        let overrides = match obj.get("overrides") {
            None => Map::new(),
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(Error::config("overrides", "expected an object keyed by method")),
        };
        let mut patches: BTreeMap<Method, Value> = BTreeMap::new();
        for (k, v) in &overrides {
            let m = Method::parse(k)
                .ok_or_else(|| Error::config(format!("overrides.{k}"), "unknown method"))?;
            patches.insert(m, v.clone());
        }

        let d_s = match &source {
            ProblemSource::Benchmark(name) => benchmark(name)?.problem.d_s(),
            ProblemSource::Evaluator(spec) => spec.lower.len(),
        };
        let mut runs = BTreeMap::new();
        for m in &methods {
            let key = format!("overrides.{m}");
            let mut rc = run_config_from(&run, patches.get(m), &key)?;
            rc.method = *m;
            rc.validate(d_s).map_err(|e| match e {
                Error::Config { key: k, message } => Error::config(format!("{m}.{k}"), message),
                other => other,
            })?;
            runs.insert(*m, rc);
        }

        let output = match obj.get("output") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(Error::config("output", "expected a path string")),
        };
        let parallelism = match obj.get("parallelism") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_u64() {
                Some(p) if p >= 1 => Some(p as usize),
                _ => return Err(Error::config("parallelism", "expected an integer >= 1")),
            },
        };
        let target = match obj.get("target") {
            None | Some(Value::Null) => None,
            Some(v) => match v.as_f64() {
                Some(t) if t.is_finite() => Some(t),
                _ => return Err(Error::config("target", "expected a finite number")),
            },
        };

        Ok(Self {
            source,
            methods,
            seeds,
            run,
            runs,
            output,
            parallelism,
            target,
        })
    }

    /// Configuration with every default written out. Re-parsing it gives an
    /// identical structure.
    pub fn canonical(&self) -> Value {
        let mut obj = Map::new();
        match &self.source {
            ProblemSource::Benchmark(b) => {
                obj.insert("benchmark".into(), json!(b));
            }
            ProblemSource::Evaluator(e) => {
                obj.insert("evaluator".into(), serde_json::to_value(e).expect("serialisable"));
            }
        }
        obj.insert("methods".into(), json!(self.methods.iter().map(|m| m.label()).collect::<Vec<_>>()));
        obj.insert("seeds".into(), json!(self.seeds));
        obj.insert("run".into(), serde_json::to_value(&self.run).expect("serialisable"));
        let overrides: Map<String, Value> = self
            .runs
            .iter()
            .map(|(m, rc)| (m.label().to_string(), serde_json::to_value(rc).expect("serialisable")))
            .collect();
        obj.insert("overrides".into(), Value::Object(overrides));
        if let Some(o) = &self.output {
            obj.insert("output".into(), json!(o));
        }
        if let Some(p) = self.parallelism {
            obj.insert("parallelism".into(), json!(p));
        }
        if let Some(t) = self.target {
            obj.insert("target".into(), json!(t));
        }
        Value::Object(obj)
    }

    /// SHA-256 of the canonical configuration, excluding where results go and
    /// how many workers run them, and including the seed offset.
    pub fn hash(&self, seed_offset: u64) -> String {
        let mut c = self.canonical();
        if let Value::Object(m) = &mut c {
            m.remove("output");
            m.remove("parallelism");
            m.insert("seed_offset".into(), json!(seed_offset));
        }
        let digest = Sha256::digest(c.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Target from the config, else from the benchmark registry.
    pub fn effective_target(&self) -> Option<f64> {
        self.target.or_else(|| match &self.source {
            ProblemSource::Benchmark(b) => benchmark(b).ok().and_then(|s| s.target),
            ProblemSource::Evaluator(_) => None,
        })
    }

    pub fn problem(&self) -> Result<Problem> {
        match &self.source {
            ProblemSource::Benchmark(b) => Ok(benchmark(b)?.problem),
            ProblemSource::Evaluator(e) => external_evaluator(e),
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

/// Reads the seed offset from the environment (0 when unset).
pub fn seed_offset_from_env() -> Result<u64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Err(_) => Ok(0),
        Ok(v) if v.trim().is_empty() => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_OFFSET_VAR, format!("`{v}` is not a non-negative integer"))),
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with one row per evaluation:
/// `k,seed,method,s_1..s_d,y_1..y_m,feasible,incumbent`.
pub fn trace_csv(trace: &Trace) -> String {
    let mut out = String::from("k,seed,method");
    for i in 1..=trace.d_s {
        out.push_str(&format!(",s_{i}"));
    }
    for i in 1..=trace.d_y {
        out.push_str(&format!(",y_{i}"));
    }
    out.push_str(",feasible,incumbent\n");
    for r in &trace.rows {
        out.push_str(&format!("{},{},{}", r.k, trace.seed, trace.method));
        for v in r.s.iter().chain(&r.y) {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push_str(if r.feasible { ",1," } else { ",0," });
        out.push_str(&r.incumbent.map(fmt_f64).unwrap_or_else(|| "inf".into()));
        out.push('\n');
    }
    out
}

/// Rows of a trace CSV with its method and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

pub fn parse_trace_csv(text: &str) -> Result<LoadedTrace> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty trace file"))?
        .split(',')
        .collect();
    let d_s = header.iter().filter(|h| h.starts_with("s_")).count();
    let d_y = header.iter().filter(|h| h.starts_with("y_")).count();
    if header.len() != 5 + d_s + d_y || header[..3] != ["k", "seed", "method"] {
        return Err(Error::invalid("unexpected trace header"));
    }
    let bad = |what: &str, line: usize| Error::invalid(format!("bad {what} on trace line {}", line + 2));
    let mut rows = Vec::new();
    let mut method = None;
    let mut seed = None;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(bad("field count", i));
        }
        let k = f[0].parse().map_err(|_| bad("k", i))?;
        seed = Some(f[1].parse().map_err(|_| bad("seed", i))?);
        method = Some(Method::parse(f[2]).ok_or_else(|| bad("method", i))?);
        let nums = |a: usize, b: usize| -> Result<Vec<f64>> {
            f[a..b].iter().map(|v| v.parse::<f64>().map_err(|_| bad("number", i))).collect()
        };
        let s = nums(3, 3 + d_s)?;
        let y = nums(3 + d_s, 3 + d_s + d_y)?;
        let feasible = match f[3 + d_s + d_y] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("feasible flag", i)),
        };
        let inc = f[4 + d_s + d_y];
        let incumbent = if inc == "inf" {
            None
        } else {
            Some(inc.parse().map_err(|_| bad("incumbent", i))?)
        };
        rows.push(TraceRow {
            k,
            s,
            y,
            feasible,
            incumbent,
        });
    }
    Ok(LoadedTrace {
        method: method.ok_or_else(|| Error::invalid("trace has no rows"))?,
        seed: seed.expect("set with method"),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub method: Method,
    pub k: usize,
    /// Runs with a feasible incumbent at `k`.
    pub n_runs: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub method: Method,
    pub n_runs: usize,
    pub n_reached: usize,
    /// Statistics over the runs that reached the target.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub target: Option<f64>,
    pub convergence: Vec<ConvergenceRow>,
    pub targets: Vec<TargetRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn incumbent_at(rows: &[TraceRow], k: usize) -> Option<f64> {
    rows.iter().take_while(|r| r.k <= k).last().and_then(|r| r.incumbent)
}

/// Per-(method, k) incumbent statistics and per-method iterations-to-target.
/// Traces are ordered by (method, seed) first, so the result does not depend
/// on the input order.
pub fn summarize_traces(traces: &[LoadedTrace], target: Option<f64>) -> ConvergenceSummary {
    let mut sorted: Vec<&LoadedTrace> = traces.iter().collect();
    sorted.sort_by_key(|t| (t.method, t.seed));
    let mut by_method: BTreeMap<Method, Vec<&LoadedTrace>> = BTreeMap::new();
    for t in sorted {
        by_method.entry(t.method).or_default().push(t);
    }
    let mut summary = ConvergenceSummary {
        target,
        ..Default::default()
    };
    for (method, runs) in &by_method {
        let k_max = runs
            .iter()
            .flat_map(|t| t.rows.iter().map(|r| r.k))
            .max()
            .unwrap_or(0);
        for k in 0..=k_max {
            let vals: Vec<f64> = runs.iter().filter_map(|t| incumbent_at(&t.rows, k)).collect();
            if vals.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&vals);
            summary.convergence.push(ConvergenceRow {
                method: *method,
                k,
                n_runs: vals.len(),
                mean,
                std,
            });
        }
        if let Some(tv) = target {
            let reached: Vec<f64> = runs
                .iter()
                .filter_map(|t| iterations_to_target(&t.rows, tv))
                .map(|k| k as f64)
                .collect();
            let (mean, std) = if reached.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&reached);
                (Some(m), Some(s))
            };
            summary.targets.push(TargetRow {
                method: *method,
                n_runs: runs.len(),
                n_reached: reached.len(),
                mean,
                std,
            });
        }
    }
    summary
}

impl ConvergenceSummary {
    pub fn convergence_csv(&self) -> String {
        let mut out = String::from("method,k,n_runs,mean_incumbent,std_incumbent\n");
        for r in &self.convergence {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                r.k,
                r.n_runs,
                fmt_f64(r.mean),
                fmt_f64(r.std)
            ));
        }
        out
    }

    pub fn targets_csv(&self) -> String {
        let mut out = String::from("method,target,n_runs,n_reached,mean_iterations,std_iterations\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.targets {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                opt(self.target),
                r.n_runs,
                r.n_reached,
                opt(r.mean),
                opt(r.std)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub effective_seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub evaluations: usize,
    pub final_incumbent: Option<f64>,
    pub wall_time_s: f64,
    pub trace_csv: String,
    pub trace_json: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed_offset: u64,
    pub target: Option<f64>,
    pub parallelism: usize,
    pub config: Value,
    pub runs: Vec<RunRecord>,
    pub total_wall_time_s: f64,
}

impl Manifest {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| !r.ok).count()
    }
}

pub fn trace_stem(method: Method, effective_seed: u64) -> String {
    format!("trace_{}_seed{}", method.label(), effective_seed)
}

fn run_one(
    config: &ExperimentConfig,
    method: Method,
    seed: u64,
    offset: u64,
    out: &Path,
) -> RunRecord {
    let start = Instant::now();
    let effective_seed = seed.wrapping_add(offset);
    let stem = trace_stem(method, effective_seed);
    let mut rc = config.runs[&method].clone();
    rc.seed = effective_seed;
    let mut record = RunRecord {
        method,
        seed,
        effective_seed,
        ok: false,
        error: None,
        evaluations: 0,
        final_incumbent: None,
        wall_time_s: 0.0,
        trace_csv: format!("{stem}.csv"),
        trace_json: format!("{stem}.json"),
    };
    let (trace, error) = match config.problem() {
        Err(e) => (None, Some(e.to_string())),
        Ok(problem) => match run(&problem, &rc) {
            Ok(t) => (Some(t), None),
            Err(e) => {
                let msg = e.to_string();
                (Some(e.trace), Some(msg))
            }
        },
    };
    if let Some(t) = &trace {
        record.evaluations = t.rows.len();
        record.final_incumbent = t.final_incumbent();
        let written = fs::write(out.join(&record.trace_csv), trace_csv(t)).and_then(|_| {
            fs::write(
                out.join(&record.trace_json),
                serde_json::to_string_pretty(t).map_err(std::io::Error::other)?,
            )
        });
        if let Err(e) = written {
            record.error = Some(format!("cannot write trace: {e}"));
        }
    }
    if error.is_some() {
        record.error = error;
    }
    record.ok = record.error.is_none();
    record.wall_time_s = start.elapsed().as_secs_f64();
    record
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub summary: ConvergenceSummary,
}

/// Executes every (method, seed) run on a pool of `parallelism` workers and
/// writes traces, `manifest.json`, `summary.csv` and `targets.csv` to `out`.
/// Failed runs are recorded in the manifest; the others still complete.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    parallelism: usize,
    seed_offset: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let jobs: Vec<(Method, u64)> = {
        let mut methods = config.methods.clone();
        methods.sort();
        let mut seeds = config.seeds.clone();
        seeds.sort();
        methods
            .iter()
            .flat_map(|m| seeds.iter().map(move |s| (*m, *s)))
            .collect()
    };
    let workers = parallelism.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(m, s)| {
                log::info!("starting {m} seed {s}");
                let r = run_one(config, *m, *s, seed_offset, out);
                match &r.error {
                    None => log::info!("finished {m} seed {s} in {:.1} s", r.wall_time_s),
                    Some(e) => log::warn!("{m} seed {s} failed: {e}"),
                }
                r
            })
            .collect()
    });
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(seed_offset),
        seed_offset,
        target: config.effective_target(),
        parallelism: workers,
        config: config.canonical(),
        runs,
        total_wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    let summary = summarize(out)?;
    Ok(ExperimentReport {
        dir: out.to_path_buf(),
        manifest,
        summary,
    })
}

/// Loads every `trace_*.csv` in `dir`.
pub fn load_traces(dir: &Path) -> Result<Vec<LoadedTrace>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("trace_"))
        })
        .collect();
    names.sort();
    names
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            parse_trace_csv(&text)
                .map_err(|e| Error::invalid(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Recomputes the summary of a results directory from its trace CSVs and
/// rewrites `summary.csv` and `targets.csv`. The target comes from
/// `manifest.json` when present.
pub fn summarize(dir: &Path) -> Result<ConvergenceSummary> {
    let traces = load_traces(dir)?;
    if traces.is_empty() {
        return Err(Error::invalid(format!("no trace files in {}", dir.display())));
    }
    let target = match fs::read_to_string(dir.join(MANIFEST)) {
        Ok(text) => serde_json::from_str::<Manifest>(&text)?.target,
        Err(_) => None,
    };
    let summary = summarize_traces(&traces, target);
    fs::write(dir.join(SUMMARY), summary.convergence_csv())?;
    fs::write(dir.join(TARGETS), summary.targets_csv())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(
            r#"{"benchmark":"illustrative-constrained","method":"PPLS-BO","seeds":[0]}"#,
        )
        .unwrap();
        let rc = &c.runs[&Method::PplsBo];
        assert_eq!(rc.n_l, 1000);
        assert_eq!(rc.n_t, 100);
        assert_eq!(rc.acquisition.xi, 0.0);
        assert_eq!(rc.acquisition.rho, -1.0);
        assert_eq!(rc.acquisition.kind, crate::acquisition::AcquisitionKind::Ei);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            (r#"{"benchmark":"illustrative-constrained","method":"BO","seeds":[0],"bogus":1}"#, "bogus"),
            (r#"{"benchmark":"nope","method":"BO","seeds":[0]}"#, "benchmark"),
            (r#"{"benchmark":"cantilever-step-unconstrained","method":"PLS-BO","seeds":[0],"run":{"d_z":6}}"#, "d_z"),
            (r#"{"benchmark":"illustrative-constrained","method":"BO","seeds":[1,1]}"#, "seeds"),
            (r#"{"benchmark":"illustrative-constrained","method":"BO","seeds":[0],"run":{"n_q":3}}"#, "run"),
        ];
        for (text, key) in cases {
            let err = ExperimentConfig::from_json(text).unwrap_err().to_string();
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn canonical_round_trip() {
        let c = ExperimentConfig::from_json(
            r#"{"benchmark":"illustrative-constrained","methods":["PPLS-BO","PCA-BO"],"seeds":[3,1],
                "run":{"n_k":5,"acquisition":{"kind":"ucb"}},"overrides":{"PCA-BO":{"d_z":8}}}"#,
        )
        .unwrap();
        assert_eq!(c.runs[&Method::PcaBo].d_z, 8);
        assert_eq!(c.runs[&Method::PplsBo].acquisition.kind, crate::acquisition::AcquisitionKind::Ucb);
        let again = ExperimentConfig::from_value(&c.canonical()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(0), c.hash(0));
        assert_ne!(c.hash(0), c.hash(1));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = Trace {
            problem: "p".into(),
            method: Method::PlsBo,
            seed: 9,
            d_s: 2,
            d_y: 2,
            d_z: Some(1),
            n_init: 1,
            rows: vec![
                TraceRow { k: 0, s: vec![0.1, 1.0 / 3.0], y: vec![2.5e-300, 1.0], feasible: false, incumbent: None },
                TraceRow { k: 1, s: vec![0.7, 0.2], y: vec![-0.123456789012345678, -1.0], feasible: true, incumbent: Some(-0.123456789012345678) },
            ],
            digests: vec![],
        };
        let loaded = parse_trace_csv(&trace_csv(&trace)).unwrap();
        assert_eq!(loaded.rows, trace.rows);
        assert_eq!(loaded.method, Method::PlsBo);
        assert_eq!(loaded.seed, 9);
    }
}
