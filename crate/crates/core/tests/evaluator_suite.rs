use redspace::benchmarks::{benchmark, illustrative_domain, ILLUSTRATIVE};
use redspace::evaluator::{external_evaluator, EvaluatorSpec};
use redspace::optimizer::{run, InitDesign, Method, RunConfig};
use redspace::Error;

const BIN: &str = env!("CARGO_BIN_EXE_redspace");

fn sh(script: &str, d: usize, d_y: usize) -> EvaluatorSpec {
    EvaluatorSpec {
        command: vec!["sh".into(), "-c".into(), script.into()],
        lower: vec![0.0; d],
        upper: vec![1.0; d],
        d_y,
        timeout_s: 10.0,
        name: None,
    }
}

#[test]
fn subprocess_benchmark_reproduces_in_process_trace() {
    let d = illustrative_domain();
    let spec = EvaluatorSpec {
        command: vec![BIN.into(), "serve".into(), ILLUSTRATIVE.into()],
        lower: d.lower().to_vec(),
        upper: d.upper().to_vec(),
        d_y: 2,
        timeout_s: 30.0,
        name: Some(ILLUSTRATIVE.into()),
    };
    for method in [Method::PlsBo, Method::PplsBo] {
        let cfg = RunConfig {
            method,
            n_k: 4,
            n_t: 20,
            n_l: 20,
            maximizer_budget: 150,
            seed: 11,
            init: InitDesign::Pbd { extra_lhs: 3 },
            ..Default::default()
        };
        let local = run(&benchmark(ILLUSTRATIVE).unwrap().problem, &cfg).unwrap();
        let remote = run(&external_evaluator(&spec).unwrap(), &cfg).unwrap();
        assert_eq!(local, remote, "{method}");
    }
}

#[test]
fn sum_stub_runs_end_to_end() {
    let script = r#"while read l; do echo "$l" | awk -F'[][,]' '{s=0; for(i=2;i<NF;i++) s+=$i; printf "{\"y\":[%.17g,-1]}\n", s}'; done"#;
    let problem = external_evaluator(&sh(script, 3, 2)).unwrap();
    let cfg = RunConfig {
        method: Method::Bo,
        n_k: 5,
        maximizer_budget: 100,
        init: InitDesign::Lhs { n: 5 },
        ..Default::default()
    };
    let trace = run(&problem, &cfg).unwrap();
    assert_eq!(trace.rows.len(), 10);
    for r in &trace.rows {
        let sum: f64 = r.s.iter().sum();
        assert!((r.y[0] - sum).abs() < 1e-12);
        assert_eq!(r.y[1], -1.0);
        assert!(r.feasible);
    }
}

#[test]
fn non_finite_reply_aborts_with_iteration_and_partial_trace() {
    // answers normally for six evaluations, then null
    let script = r#"i=0; while read l; do i=$((i+1)); if [ $i -gt 6 ]; then echo '{"y":[null]}'; else echo "{\"y\":[$i]}"; fi; done"#;
    let problem = external_evaluator(&sh(script, 2, 1)).unwrap();
    let cfg = RunConfig {
        method: Method::Bo,
        n_k: 10,
        maximizer_budget: 50,
        init: InitDesign::Lhs { n: 4 },
        ..Default::default()
    };
    let err = run(&problem, &cfg).unwrap_err();
    match err.error {
        Error::Evaluation { iteration, .. } => assert_eq!(iteration, 3),
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.trace.rows.len(), 6);
    assert_eq!(err.trace.rows.last().unwrap().k, 2);
}
