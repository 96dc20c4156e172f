//! Problems evaluated by an external process speaking newline-delimited JSON:
//! `{"s": [..]}` per line on its stdin, `{"y": [..]}` per line on its stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::doe::DesignDomain;
use crate::error::{Error, Result};
use crate::problem::{Evaluator, Problem};

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorSpec {
    /// Program and arguments.
    pub command: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Outputs per evaluation: objective first, then constraints.
    pub d_y: usize,
    /// Seconds to wait for each reply.
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub name: Option<String>,
}

impl EvaluatorSpec {
    pub fn domain(&self) -> Result<DesignDomain> {
        DesignDomain::new(self.lower.clone(), self.upper.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() {
            return Err(Error::config("evaluator.command", "command must not be empty"));
        }
        if self.d_y == 0 {
            return Err(Error::config("evaluator.d_y", "need at least one output"));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::config("evaluator.timeout_s", "timeout must be positive"));
        }
        self.domain()
            .map(|_| ())
            .map_err(|e| Error::config("evaluator.lower/upper", e.to_string()))
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

/// Child process wrapped as an [`Evaluator`]. Calls are serialised; a
/// timed-out or broken child is killed and every later call fails.
pub struct ExternalEvaluator {
    session: Mutex<Option<Session>>,
    timeout: Duration,
}

#[derive(Serialize)]
struct Request<'a> {
    s: &'a [f64],
}

#[derive(Deserialize)]
struct Reply {
    y: Vec<Option<f64>>,
}

impl ExternalEvaluator {
    pub fn spawn(spec: &EvaluatorSpec) -> Result<Self> {
        spec.validate()?;
        let mut child = Command::new(&spec.command[0])
            .args(&spec.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::invalid(format!("cannot start evaluator `{}`: {e}", spec.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            session: Mutex::new(Some(Session {
                child,
                stdin,
                lines: rx,
            })),
            timeout: Duration::from_secs_f64(spec.timeout_s),
        })
    }

    fn call(session: &mut Session, s: &[f64], timeout: Duration) -> std::result::Result<Vec<f64>, String> {
        let mut line = serde_json::to_string(&Request { s }).map_err(|e| e.to_string())?;
        line.push('\n');
        session
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| session.stdin.flush())
            .map_err(|e| format!("cannot write to evaluator: {e}"))?;
        let reply = match session.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(format!("cannot read from evaluator: {e}")),
            Err(RecvTimeoutError::Timeout) => {
                return Err(format!("evaluator timed out after {:.3} s", timeout.as_secs_f64()))
            }
            Err(RecvTimeoutError::Disconnected) => return Err("evaluator exited".into()),
        };
        let parsed: Reply = serde_json::from_str(reply.trim())
            .map_err(|e| format!("malformed evaluator output `{}`: {e}", reply.trim()))?;
        Ok(parsed.y.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, s: &[f64]) -> std::result::Result<Vec<f64>, String> {
        let mut guard = self.session.lock().map_err(|_| "evaluator lock poisoned".to_string())?;
        let session = guard.as_mut().ok_or("evaluator is no longer running")?;
        let result = Self::call(session, s, self.timeout);
        if result.is_err() {
            if let Some(mut dead) = guard.take() {
                let _ = dead.child.kill();
                let _ = dead.child.wait();
            }
        }
        result
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.session.lock() {
            if let Some(mut s) = guard.take() {
                drop(s.stdin);
                // give a well-behaved child a moment to exit on EOF
                for _ in 0..20 {
                    if let Ok(Some(_)) = s.child.try_wait() {
                        return;
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                let _ = s.child.kill();
                let _ = s.child.wait();
            }
        }
    }
}

/// Starts the evaluator and wraps it as a [`Problem`].
pub fn external_evaluator(spec: &EvaluatorSpec) -> Result<Problem> {
    let evaluator = ExternalEvaluator::spawn(spec)?;
    let name = spec.name.clone().unwrap_or_else(|| spec.command.join(" "));
    Problem::new(name, spec.domain()?, spec.d_y, Arc::new(evaluator))
}

/// Serves a problem over the line protocol until `input` closes.
pub fn serve<R: BufRead, W: Write>(problem: &Problem, input: R, mut output: W) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: serde_json::Value = serde_json::from_str(&line)?;
        let s: Vec<f64> = serde_json::from_value(req.get("s").cloned().unwrap_or_default())?;
        let y = problem
            .evaluator
            .evaluate(&s)
            .map_err(|message| Error::Evaluation { iteration: 0, message })?;
        serde_json::to_writer(&mut output, &serde_json::json!({ "y": y }))?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
